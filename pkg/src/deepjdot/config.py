"""JSON run configuration: strict parsing, dotted overrides, resolution of defaults."""

import copy
import inspect
import json
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from deepjdot import data as data_mod
from deepjdot.errors import ConfigError, DeepJDOTError
from deepjdot.nn import ACTIVATIONS, VariantFlags
from deepjdot.trainer import ArchSpec, TrainConfig

DEFAULT_OUT_DIR = "runs/latest"

DEFAULT_DATA = {
    "generator": {"name": "moons", "n": 600, "angle_deg": 40.0, "noise_sd": 0.1},
    "eval_seed": None,
    "source": None,
    "target": None,
    "eval": None,
    "standardize": True,
    "subsample": None,
}

FILE_SPEC_KEYS = ({"csv"}, {"idx_images", "idx_labels"})


def _reject_unknown(mapping, allowed, where):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _generator_params(name):
    if name not in data_mod.GENERATORS:
        raise ConfigError(f"unknown generator {name!r}; choose from {sorted(data_mod.GENERATORS)}")
    return inspect.signature(data_mod.GENERATORS[name]).parameters


def resolve_generator(spec, default_seed=0):
    """Fill a generator spec ``{"name": ..., <params>}`` with the function defaults."""
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigError("generator spec needs a 'name'")
    params = _generator_params(spec["name"])
    _reject_unknown(spec, set(params) | {"name"}, "generator")
    out = {"name": spec["name"]}
    for key, p in params.items():
        if key in spec:
            out[key] = spec[key]
        elif key == "seed":
            out[key] = default_seed
        elif p.default is inspect.Parameter.empty:
            raise ConfigError(f"generator {spec['name']!r} needs parameter {key!r}")
        else:
            out[key] = list(p.default) if isinstance(p.default, tuple) else p.default
    return out


def run_generator(spec):
    spec = dict(spec)
    fn = data_mod.GENERATORS[spec.pop("name")]
    try:
        return fn(**spec)
    except TypeError as exc:
        raise ConfigError(f"bad generator parameters: {exc}") from None


def _check_file_spec(spec, where):
    if spec is None:
        return
    if not isinstance(spec, dict):
        raise ConfigError(f"{where} must be an object")
    if set(spec) not in FILE_SPEC_KEYS:
        raise ConfigError(f"{where} must have exactly 'csv' or 'idx_images' + 'idx_labels'")


def _train_from_dict(d):
    allowed = {f.name for f in fields(TrainConfig)}
    _reject_unknown(d, allowed, "train")
    kwargs = dict(d)
    if "variant" in kwargs:
        v = kwargs["variant"]
        _reject_unknown(v, {f.name for f in fields(VariantFlags)}, "train.variant")
        kwargs["variant"] = VariantFlags(**v)
    for key in ("batch_size", "iterations", "seed", "inner_steps", "eval_every"):
        if key in kwargs and (isinstance(kwargs[key], bool) or not isinstance(kwargs[key], int)):
            raise ConfigError(f"train.{key} must be an integer")
    for key in ("alpha", "lambda_t", "lr"):
        if key in kwargs and (isinstance(kwargs[key], bool) or not isinstance(kwargs[key], (int, float))):
            raise ConfigError(f"train.{key} must be a number")
    for key in ("stratify_source",):
        if key in kwargs and not isinstance(kwargs[key], bool):
            raise ConfigError(f"train.{key} must be a boolean")
    return TrainConfig(**kwargs)


def _arch_from_dict(d):
    _reject_unknown(d, {"widths", "activations", "embed_split"}, "model")
    arch = ArchSpec(
        tuple(d.get("widths", ArchSpec.widths)),
        tuple(d.get("activations", ArchSpec.activations)),
        d.get("embed_split", ArchSpec.embed_split),
    )
    if len(arch.widths) != len(arch.activations):
        raise ConfigError("model.widths and model.activations must have the same length")
    if any(not isinstance(w, int) or w < 1 for w in arch.widths):
        raise ConfigError("model.widths must be positive integers")
    if any(a not in ACTIVATIONS for a in arch.activations):
        raise ConfigError(f"model.activations must be drawn from {ACTIVATIONS}")
    if not isinstance(arch.embed_split, int) or not 1 <= arch.embed_split <= len(arch.widths) + 1:
        raise ConfigError("model.embed_split must index a layer of the network")
    return arch


class RunConfig:
    """A validated, fully resolved run configuration."""

    def __init__(self, train, arch, data, out_dir):
        self.train = train
        self.arch = arch
        self.data = data
        self.out_dir = out_dir

    @classmethod
    def from_dict(cls, raw):
        _reject_unknown(raw, {"train", "model", "data", "out_dir"}, "config")
        try:
            train = _train_from_dict(raw.get("train", {}))
            arch = _arch_from_dict(raw.get("model", {}))
        except ConfigError:
            raise
        except (DeepJDOTError, TypeError) as exc:
            raise ConfigError(str(exc)) from None

        d = raw.get("data", {})
        _reject_unknown(d, DEFAULT_DATA, "data")
        data = copy.deepcopy(DEFAULT_DATA)
        files_given = any(d.get(k) for k in ("source", "target", "eval"))
        if files_given and "generator" not in d:
            data["generator"] = None
        data.update(d)
        for key in ("source", "target", "eval"):
            _check_file_spec(data[key], f"data.{key}")
        if data["generator"] is not None:
            if any(data[k] is not None for k in ("source", "target", "eval")):
                raise ConfigError("data: give either a generator or files, not both")
            data["generator"] = resolve_generator(data["generator"], train.seed)
            if data["eval_seed"] is None:
                data["eval_seed"] = int(data["generator"]["seed"]) + 1
        else:
            for key in ("source", "target", "eval"):
                if data[key] is None:
                    raise ConfigError(f"data.{key} is required when no generator is given")
        if not isinstance(data["standardize"], bool):
            raise ConfigError("data.standardize must be a boolean")
        if data["subsample"] is not None and (not isinstance(data["subsample"], int) or data["subsample"] < 1):
            raise ConfigError("data.subsample must be a positive integer or null")

        out_dir = raw.get("out_dir", DEFAULT_OUT_DIR)
        if not isinstance(out_dir, str) or not out_dir:
            raise ConfigError("out_dir must be a nonempty string")
        return cls(train, arch, data, out_dir)

    def to_dict(self):
        train = asdict(self.train)
        return {
            "train": train,
            "model": {
                "widths": list(self.arch.widths),
                "activations": list(self.arch.activations),
                "embed_split": self.arch.embed_split,
            },
            "data": copy.deepcopy(self.data),
            "out_dir": self.out_dir,
        }

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw, assignments):
    """Apply ``dotted.key=value`` assignments; values are parsed as JSON when possible."""
    raw = copy.deepcopy(raw)
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"override {item!r} has an empty key")
        node = raw
        for p in parts[:-1]:
            child = node.get(p)
            if child is None:
                child = node[p] = {}
            if not isinstance(child, dict):
                raise ConfigError(f"override {item!r}: {p!r} is not an object")
            node = child
        node[parts[-1]] = _parse_value(text)
    return raw


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return raw


def load_run_config(path=None, overrides=(), seed=None, out_dir=None):
    raw = read_json(path) if path is not None else {}
    raw = apply_overrides(raw, overrides)
    if seed is not None:
        raw.setdefault("train", {})["seed"] = seed
    if out_dir is not None:
        raw["out_dir"] = out_dir
    return RunConfig.from_dict(raw)


def _load_file_spec(spec, labeled, tag):
    if "csv" in spec:
        return data_mod.load_csv(spec["csv"], labeled=labeled, domain_tag=tag)
    ds = data_mod.load_idx(spec["idx_images"], spec["idx_labels"], domain_tag=tag)
    return ds if labeled else ds.unlabeled()


def load_datasets(run):
    """Return ``(source, target_unlabeled, eval_target, standardizer)``, standardized when configured."""
    d = run.data
    if d["generator"] is not None:
        source, target = run_generator(d["generator"])
        held_out = dict(d["generator"], seed=d["eval_seed"])
        _, eval_target = run_generator(held_out)
        eval_target = eval_target.with_tag("target")
    else:
        source = _load_file_spec(d["source"], True, "source")
        target = _load_file_spec(d["target"], False, "target")
        eval_target = _load_file_spec(d["eval"], True, "target")
    if d["subsample"] is not None:
        rng = np.random.default_rng(run.train.seed)
        source, target, eval_target = (
            ds.subset(np.sort(rng.permutation(ds.n)[: min(d["subsample"], ds.n)]))
            for ds in (source, target, eval_target)
        )
    target = target.unlabeled()
    if source.dim != target.dim or source.dim != eval_target.dim:
        raise ConfigError("source, target and eval data must have the same feature dimension")
    if eval_target.class_count != source.class_count:
        eval_target = data_mod.Dataset(eval_target.features, eval_target.labels, eval_target.domain_tag,
                                       max(source.class_count, eval_target.class_count))
    stats = None
    if d["standardize"]:
        source, target, stats = data_mod.standardize(source, target)
        eval_target = stats.apply(eval_target)
    return source, target, eval_target, stats

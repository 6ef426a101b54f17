"""Command-line front end.

Exit codes: 0 success, 2 invalid input or configuration, 3 numeric failure.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from deepjdot import config as cfg
from deepjdot import data as data_mod
from deepjdot import nn
from deepjdot.checkpoint import load_checkpoint, save_checkpoint
from deepjdot.errors import DeepJDOTError, DivergenceError
from deepjdot.ot import solve_exact_ot, transport_cost
from deepjdot.trainer import evaluate, train

log = logging.getLogger("deepjdot")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3

METRICS_HEADER = [
    "iteration", "source_acc", "target_acc", "loss_total",
    "loss_source_ce", "loss_align", "loss_target_ce", "ot_objective",
]


class CliError(Exception):
    def __init__(self, message, code=EXIT_INVALID):
        super().__init__(message)
        self.code = code


def _g(x):
    return f"{x:.17g}"


def write_metrics(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in history:
            w.writerow([
                r.iteration, _g(r.source_accuracy), _g(r.target_accuracy), _g(r.loss.total),
                _g(r.loss.source_ce), _g(r.loss.align), _g(r.loss.target_ce), _g(r.ot_objective),
            ])


def cmd_train(args):
    run = cfg.load_run_config(args.config, args.set or (), seed=args.seed, out_dir=args.out)
    source, target, eval_target, stats = cfg.load_datasets(run)
    model, history = train(run.train, source, target, eval_target, arch=run.arch)
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out / "metrics.csv", history)
    save_checkpoint(out / "model.ckpt", model, stats)
    (out / "config.resolved.json").write_text(run.dumps(), encoding="utf-8")
    if history.last is not None:
        print(f"target_acc={history.last.target_accuracy:.6f}")
    return EXIT_OK


def _dataset_from_args(args, require_labels):
    """Dataset named on the command line, raw (before checkpoint standardization)."""
    if args.data is not None:
        labeled = require_labels or not args.unlabeled
        return data_mod.load_csv(args.data, labeled=labeled, domain_tag=args.domain)
    if args.idx_images is not None or args.idx_labels is not None:
        if args.idx_images is None or args.idx_labels is None:
            raise CliError("--idx-images and --idx-labels go together")
        ds = data_mod.load_idx(args.idx_images, args.idx_labels, domain_tag=args.domain)
        return ds if require_labels or not args.unlabeled else ds.unlabeled()
    if args.config is not None:
        run = cfg.RunConfig.from_dict(cfg.apply_overrides(cfg.read_json(args.config), args.set or ()))
        d = run.data
        if d["generator"] is not None:
            source, target = cfg.run_generator(d["generator"])
            if args.split == "source":
                ds = source
            elif args.split == "target":
                ds = target
            else:
                ds = cfg.run_generator(dict(d["generator"], seed=d["eval_seed"]))[1]
        else:
            spec = d[args.split]
            ds = cfg._load_file_spec(spec, args.split != "target" or require_labels, args.split)
        ds = ds.with_tag(args.domain or ("source" if args.split == "source" else "target"))
        return ds if require_labels or not args.unlabeled else ds.unlabeled()
    raise CliError("give a dataset with --data, --idx-images/--idx-labels, or --config/--split")


def _prepare(model, stats, ds):
    if stats is not None:
        if stats.mean.size != ds.dim:
            raise CliError(f"dataset has {ds.dim} features, checkpoint expects {stats.mean.size}")
        ds = stats.apply(ds)
    if ds.dim != model.in_dim:
        raise CliError(f"dataset has {ds.dim} features, model expects {model.in_dim}")
    return ds


def cmd_eval(args):
    model, stats = load_checkpoint(args.model)
    ds = _prepare(model, stats, _dataset_from_args(args, require_labels=True))
    if ds.labels.max() >= model.num_classes:
        raise CliError(f"labels exceed the model's {model.num_classes} classes")
    print(f"accuracy={evaluate(model, ds):.6f}")
    return EXIT_OK


def cmd_export_embeddings(args):
    model, stats = load_checkpoint(args.model)
    raw = _dataset_from_args(args, require_labels=False)
    ds = _prepare(model, stats, raw)
    emb, _, _ = nn.forward(model, ds.features)
    domain = ds.domain_tag or "unknown"
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = [f"e{k}" for k in range(emb.shape[1])]
        if ds.labeled:
            header.append("label")
        header.append("domain")
        w.writerow(header)
        for i in range(ds.n):
            row = [_g(v) for v in emb[i]]
            if ds.labeled:
                row.append(str(int(ds.labels[i])))
            row.append(domain)
            w.writerow(row)
    return EXIT_OK


def _read_matrix(path):
    path = Path(path)
    if not path.is_file():
        raise CliError(f"no such file: {path}")
    try:
        m = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise CliError(f"{path}: cannot parse matrix ({exc})") from None
    return m


def _read_vector(path):
    m = _read_matrix(path)
    if min(m.shape) != 1:
        raise CliError(f"{path}: expected a single row or column, got shape {m.shape}")
    return m.ravel()


def cmd_solve_ot(args):
    cost = _read_matrix(args.cost)
    mu = _read_vector(args.mu)
    nu = _read_vector(args.nu)
    gamma = solve_exact_ot(cost, mu, nu)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in gamma:
            w.writerow([_g(v) for v in row])
    print(f"objective={transport_cost(gamma, cost):.6f}")
    return EXIT_OK


def cmd_gen_data(args):
    raw = cfg.read_json(args.config) if args.config is not None else {}
    if "name" not in raw and set(raw) & {"train", "model", "data", "out_dir"}:
        # A full run configuration: use its generator.
        raw = dict(raw.get("data", {}).get("generator") or {})
        if not raw:
            raise CliError("the run configuration has no data.generator")
    raw = cfg.apply_overrides(raw, args.set or ())
    if "name" not in raw:
        raw = {**cfg.DEFAULT_DATA["generator"], **raw}
    if args.seed is not None:
        raw["seed"] = args.seed
    spec = cfg.resolve_generator(raw)
    source, target = cfg.run_generator(spec)
    prefix = args.out
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    data_mod.write_csv(f"{prefix}.source.csv", source)
    data_mod.write_csv(f"{prefix}.target.csv", target)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="deepjdot", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    def add_config_flags(sp):
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a dotted config key (repeatable)")

    def add_dataset_flags(sp):
        sp.add_argument("--model", required=True, help="model checkpoint")
        sp.add_argument("--data", help="CSV dataset")
        sp.add_argument("--idx-images", help="IDX image file")
        sp.add_argument("--idx-labels", help="IDX label file")
        add_config_flags(sp)
        sp.add_argument("--split", choices=("source", "target", "eval"), default="eval",
                        help="which dataset of --config to use (default: eval)")
        sp.add_argument("--domain", default="", help="domain tag for the dataset")

    sp = sub.add_parser("train", help="run the alternating training")
    add_config_flags(sp)
    sp.add_argument("--out", help="output directory (overrides out_dir)")
    sp.add_argument("--seed", type=int, help="training seed (overrides train.seed)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="accuracy of a checkpoint on a labeled dataset")
    add_dataset_flags(sp)
    sp.set_defaults(func=cmd_eval, unlabeled=False)

    sp = sub.add_parser("export-embeddings", help="write embeddings of a dataset as CSV")
    add_dataset_flags(sp)
    sp.add_argument("--unlabeled", action="store_true", help="ignore labels in the dataset")
    sp.add_argument("--out", required=True, help="output CSV")
    sp.set_defaults(func=cmd_export_embeddings)

    sp = sub.add_parser("solve-ot", help="solve an exact OT problem from CSV matrices")
    sp.add_argument("--cost", required=True, help="cost matrix CSV (no header)")
    sp.add_argument("--mu", required=True, help="source weights CSV (one row or column)")
    sp.add_argument("--nu", required=True, help="target weights CSV (one row or column)")
    sp.add_argument("--out", required=True, help="coupling CSV to write")
    sp.set_defaults(func=cmd_solve_ot)

    sp = sub.add_parser("gen-data", help="write a synthetic source/target pair as CSV")
    add_config_flags(sp)
    sp.add_argument("--seed", type=int, help="generator seed")
    sp.add_argument("--out", required=True, help="output prefix; writes <prefix>.source.csv and <prefix>.target.csv")
    sp.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (DeepJDOTError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

"""Plain-text model checkpoints.

Layout (one record per line, whitespace separated, floats at 17 significant
digits)::

    DEEPJDOT-MLP 1
    embed_split <k>
    layers <L>
    layer <index> <activation> <in_dim> <out_dim>
    W <in_dim * out_dim values, row-major>
    b <out_dim values>
    ... (layer/W/b repeated L times)
    standardize <d>            optional
    mean <d values>
    sd <d values>
    end
"""

from pathlib import Path

import numpy as np

from deepjdot.data import Standardizer
from deepjdot.errors import DataFormatError
from deepjdot.nn import Layer, Mlp

MAGIC = "DEEPJDOT-MLP"
VERSION = 1


def _fmt(values):
    return " ".join(f"{v:.17g}" for v in np.asarray(values).ravel())


def save_checkpoint(path, model, standardizer=None):
    lines = [f"{MAGIC} {VERSION}", f"embed_split {model.embed_split}", f"layers {len(model.layers)}"]
    for k, layer in enumerate(model.layers):
        lines.append(f"layer {k} {layer.activation} {layer.in_dim} {layer.out_dim}")
        lines.append("W " + _fmt(layer.weight))
        lines.append("b " + _fmt(layer.bias))
    if standardizer is not None:
        lines.append(f"standardize {standardizer.mean.size}")
        lines.append("mean " + _fmt(standardizer.mean))
        lines.append("sd " + _fmt(standardizer.sd))
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _expect(tokens, key, n_values=None):
    if not tokens or tokens[0] != key:
        raise DataFormatError(f"checkpoint: expected '{key}' record, got {tokens[:1]}")
    rest = tokens[1:]
    if n_values is not None and len(rest) != n_values:
        raise DataFormatError(f"checkpoint: '{key}' has {len(rest)} values, expected {n_values}")
    return rest


def load_checkpoint(path):
    """Return ``(model, standardizer_or_None)``."""
    try:
        lines = [ln.split() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    except FileNotFoundError:
        raise
    except (OSError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"checkpoint: cannot read {path}: {exc}") from None
    it = iter(lines)
    try:
        head = next(it)
        if head != [MAGIC, str(VERSION)]:
            raise DataFormatError(f"checkpoint: unsupported header {' '.join(head)!r}")
        (split,) = _expect(next(it), "embed_split", 1)
        (n_layers,) = _expect(next(it), "layers", 1)
        layers = []
        for k in range(int(n_layers)):
            idx, act, d_in, d_out = _expect(next(it), "layer", 4)
            if int(idx) != k:
                raise DataFormatError(f"checkpoint: layer index {idx}, expected {k}")
            d_in, d_out = int(d_in), int(d_out)
            w = np.array(_expect(next(it), "W", d_in * d_out), dtype=np.float64).reshape(d_in, d_out)
            b = np.array(_expect(next(it), "b", d_out), dtype=np.float64)
            layers.append(Layer(w, b, act))
        standardizer = None
        tokens = next(it)
        if tokens[0] == "standardize":
            (d,) = _expect(tokens, "standardize", 1)
            mean = np.array(_expect(next(it), "mean", int(d)), dtype=np.float64)
            sd = np.array(_expect(next(it), "sd", int(d)), dtype=np.float64)
            standardizer = Standardizer(mean, sd)
            tokens = next(it)
        _expect(tokens, "end", 0)
    except StopIteration:
        raise DataFormatError("checkpoint: truncated file") from None
    except ValueError as exc:
        if isinstance(exc, DataFormatError):
            raise
        raise DataFormatError(f"checkpoint: malformed value ({exc})") from None
    try:
        model = Mlp(tuple(layers), int(split))
    except ValueError as exc:
        raise DataFormatError(f"checkpoint: inconsistent model ({exc})") from None
    return model, standardizer

"""Datasets: synthetic domain-shift generators, CSV/IDX loading, standardization."""

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from deepjdot.errors import DataFormatError, InvalidInputError, ShapeError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
SD_FLOOR = 1e-8


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None = None
    domain_tag: str = ""
    class_count: int | None = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise ShapeError(f"features must be 2-d, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("features contain non-finite values")
        object.__setattr__(self, "features", x)
        if self.labels is None:
            return
        y = np.asarray(self.labels)
        if y.ndim != 1 or y.size != x.shape[0]:
            raise ShapeError("labels must be a vector with one entry per row")
        if y.size and not np.all(y == np.round(y)):
            raise InvalidInputError("labels must be integers")
        y = y.astype(np.int64)
        k = self.class_count
        if k is None:
            k = int(y.max()) + 1 if y.size else 0
        if k < 2:
            raise InvalidInputError("labeled datasets need at least 2 classes")
        if y.size and (y.min() < 0 or y.max() >= k):
            raise InvalidInputError(f"labels must lie in [0, {k})")
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "class_count", int(k))

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def labeled(self):
        return self.labels is not None

    def subset(self, idx):
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.features[idx], labels, self.domain_tag, self.class_count)

    def with_tag(self, tag):
        return Dataset(self.features, self.labels, tag, self.class_count)

    def unlabeled(self):
        return Dataset(self.features, None, self.domain_tag, None)


def _rotation(deg):
    t = np.deg2rad(deg)
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


def blob_centers(k, class_sep, dim=2):
    angles = 2.0 * np.pi * np.arange(k) / k
    centers = np.zeros((k, dim))
    centers[:, 0] = class_sep * np.cos(angles)
    centers[:, 1] = class_sep * np.sin(angles)
    return centers


def make_blobs_shift(n_per_class, k, class_sep=3.0, shift_vector=(0.0, 0.0),
                     rotation_deg=0.0, noise_sd=1.0, seed=0):
    """Gaussian blobs on a circle of radius ``class_sep``; the target rotates
    the centers about the origin (first two coordinates) and then translates them.

    The feature dimension is ``len(shift_vector)`` (at least 2).
    """
    if k < 2:
        raise InvalidInputError("blobs need at least 2 classes")
    if n_per_class < 1:
        raise InvalidInputError("n_per_class must be positive")
    if not noise_sd > 0:
        raise InvalidInputError("noise_sd must be positive")
    shift = np.asarray(shift_vector, dtype=np.float64).reshape(-1)
    if shift.size < 2:
        raise InvalidInputError("shift_vector must have at least 2 coordinates")
    dim = shift.size
    centers = blob_centers(k, class_sep, dim)
    tcenters = centers.copy()
    tcenters[:, :2] = centers[:, :2] @ _rotation(rotation_deg).T
    tcenters += shift

    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(k), n_per_class)
    xs = centers[labels] + noise_sd * rng.standard_normal((labels.size, dim))
    xt = tcenters[labels] + noise_sd * rng.standard_normal((labels.size, dim))
    return (
        Dataset(xs, labels, "source", k),
        Dataset(xt, labels.copy(), "target", k),
    )


MOONS_CENTER = np.array([0.5, 0.25])


def _moons(n, noise_sd, rng):
    half = n // 2
    t0 = rng.uniform(0.0, np.pi, half)
    t1 = rng.uniform(0.0, np.pi, half)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    x = np.vstack([upper, lower]) + noise_sd * rng.standard_normal((n, 2))
    y = np.repeat([0, 1], half)
    return x, y


def make_moons_rotated(n, angle_deg=40.0, noise_sd=0.1, seed=0):
    """Two interleaved half-circles; the target is rotated by ``angle_deg``
    about the center of the noiseless moons' bounding box, (0.5, 0.25)."""
    if n < 2 or n % 2:
        raise InvalidInputError("n must be a positive even number")
    if not noise_sd > 0:
        raise InvalidInputError("noise_sd must be positive")
    rng = np.random.default_rng(seed)
    xs, ys = _moons(n, noise_sd, rng)
    xt, yt = _moons(n, noise_sd, rng)
    xt = (xt - MOONS_CENTER) @ _rotation(angle_deg).T + MOONS_CENTER
    return Dataset(xs, ys, "source", 2), Dataset(xt, yt, "target", 2)


GENERATORS = {
    "moons": make_moons_rotated,
    "blobs": make_blobs_shift,
}


def load_csv(path, labeled=True, domain_tag=""):
    """Load a headered CSV; the ``label`` column (required when ``labeled``) holds integer classes."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file, expected a header row") from None
        if labeled and "label" not in header:
            raise DataFormatError(f"{path}: no 'label' column")
        label_col = header.index("label") if "label" in header else None
        feat_cols = [c for c in range(len(header)) if c != label_col]
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(row[c]) for c in feat_cols])
                if label_col is not None and labeled:
                    lab = float(row[label_col])
                    if lab != int(lab):
                        raise ValueError(row[label_col])
                    labels.append(int(lab))
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: cannot parse value ({exc})") from None
    features = np.array(rows, dtype=np.float64).reshape(len(rows), len(feat_cols))
    if not np.all(np.isfinite(features)):
        raise DataFormatError(f"{path}: non-finite feature values")
    if not labeled:
        return Dataset(features, None, domain_tag)
    labels = np.array(labels, dtype=np.int64)
    # A file may hold only some classes (even a single row); at least two are implied.
    k = max(int(labels.max()) + 1, 2) if labels.size else 2
    return Dataset(features, labels, domain_tag, k)


def write_csv(path, dataset):
    """Write ``f0..f{d-1}[,label]`` with 17 significant digits."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = [f"f{k}" for k in range(dataset.dim)]
        if dataset.labeled:
            header.append("label")
        writer.writerow(header)
        for i in range(dataset.n):
            row = [f"{v:.17g}" for v in dataset.features[i]]
            if dataset.labeled:
                row.append(str(int(dataset.labels[i])))
            writer.writerow(row)


def _read_idx(path, magic, ndim):
    data = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(data) < 4:
        raise DataFormatError(f"{path}: truncated IDX header")
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise DataFormatError(f"{path}: bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(data) < header:
        raise DataFormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    size = int(np.prod(dims))
    if len(data) - header < size:
        raise DataFormatError(f"{path}: truncated IDX payload ({len(data) - header} of {size} bytes)")
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, domain_tag=""):
    """Load an IDX image/label pair; pixels are flattened row-major and scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(f"image count {images.shape[0]} != label count {labels.shape[0]}")
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    k = max(int(labels.max()) + 1, 2) if labels.size else 2
    return Dataset(features, labels.astype(np.int64), domain_tag, k)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    sd: np.ndarray

    def apply(self, dataset):
        if dataset.dim != self.mean.size:
            raise ShapeError(f"dataset has {dataset.dim} features, stats have {self.mean.size}")
        x = (dataset.features - self.mean) / self.sd
        return Dataset(x, dataset.labels, dataset.domain_tag, dataset.class_count)


def fit_standardizer(dataset):
    mean = dataset.features.mean(axis=0)
    sd = np.maximum(dataset.features.std(axis=0), SD_FLOOR)
    return Standardizer(mean, sd)


def standardize(source, target):
    """Scale both domains with per-feature statistics of the source only."""
    if source.dim != target.dim:
        raise ShapeError(f"source has {source.dim} features, target has {target.dim}")
    stats = fit_standardizer(source)
    return stats.apply(source), stats.apply(target), stats

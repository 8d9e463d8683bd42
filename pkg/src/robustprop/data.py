"""Datasets: synthetic 2-D generators, IDX image loading, CSV export, splits and batching."""
from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.datasets import make_blobs, make_moons

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DatasetError(ValueError):
    pass


class IDXParseError(DatasetError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: at byte offset {offset}: {message}")
        self.path = path
        self.offset = offset


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray      # (N, n) float
    labels: np.ndarray      # (N,) int
    name: str = "dataset"
    n_classes: int = 2

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2:
            raise DatasetError(f"inputs must be 2-D, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DatasetError(f"{X.shape[0]} inputs but labels have shape {y.shape}")
        if X.shape[0] == 0:
            raise DatasetError("dataset is empty")
        if np.isnan(X).any():
            raise DatasetError("inputs contain NaN")
        if self.n_classes < 2:
            raise DatasetError("n_classes must be >= 2")
        if y.min() < 0 or y.max() >= self.n_classes:
            raise DatasetError(f"labels must lie in [0, {self.n_classes})")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def n_features(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx, name=None) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(self.inputs[idx], self.labels[idx], name or self.name, self.n_classes)

    def head(self, k: int) -> Dataset:
        return self.subset(np.arange(min(k, len(self))))


# -- synthetic ------------------------------------------------------------

# make_moons arcs span x in [-1, 2], y in [-0.5, 1]
_MOONS_LO = np.array([-1.0, -0.5])
_MOONS_SPAN = np.array([3.0, 1.5])


def gen_two_moons(n: int, noise_sigma: float = 0.0, seed: int = 0) -> Dataset:
    """Two interleaved half circles rescaled into the unit square.

    The noise-free arcs map exactly onto ``[0, 1]^2``; noisy points that fall
    outside are clipped.
    """
    if n < 2:
        raise DatasetError("two moons needs n >= 2")
    X, y = make_moons(n_samples=n, noise=noise_sigma or None, random_state=seed)
    X = np.clip((X - _MOONS_LO) / _MOONS_SPAN, 0.0, 1.0)
    return Dataset(X, y, f"two_moons(n={n},noise={noise_sigma:g},seed={seed})", 2)


def gen_blobs(n: int, k_classes: int = 2, centers=None, sigma: float = 0.05,
              seed: int = 0, dim: int = 2) -> Dataset:
    """Isotropic Gaussian clusters, one per class, clipped to ``[0, 1]^n``.

    Without explicit ``centers`` they are drawn uniformly from ``[0.2, 0.8]^dim``.
    """
    if centers is None:
        centers = np.random.default_rng(seed).uniform(0.2, 0.8, size=(k_classes, dim))
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if centers.shape[0] != k_classes:
        raise DatasetError(f"expected {k_classes} centers, got {centers.shape[0]}")
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.abs(diff).max(axis=2) + np.eye(k_classes)
    if (dist == 0).any():
        raise DatasetError("blob centers must be pairwise distinct")
    X, y = make_blobs(n_samples=n, centers=centers, cluster_std=sigma, random_state=seed)
    X = np.clip(X, 0.0, 1.0)
    return Dataset(X, y, f"blobs(n={n},k={k_classes},sigma={sigma:g},seed={seed})", k_classes)


# -- IDX ------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(path, expected_magic: int, ndim: int) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise IDXParseError(path, len(raw), "truncated magic number")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise IDXParseError(path, 0, f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IDXParseError(path, len(raw), "truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) < header + size:
        raise IDXParseError(path, len(raw), f"truncated data: expected {size} bytes after offset {header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, limit: int | None = None, name: str | None = None,
             n_classes: int | None = None) -> Dataset:
    """Unsigned-byte IDX images (flattened, scaled to [0, 1]) with their labels.

    ``limit`` keeps the first ``limit`` items.
    """
    if limit is not None and limit <= 0:
        raise DatasetError("limit must be positive (an empty dataset is not allowed)")
    images = _parse_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _parse_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise DatasetError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    X = images.reshape(images.shape[0], -1).astype(float) / 255.0
    y = labels.astype(np.int64)
    k = n_classes if n_classes is not None else max(2, int(y.max()) + 1)
    return Dataset(X, y, name or Path(images_path).name, k)


def write_idx_images(path, images: np.ndarray):
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise DatasetError("images must have shape (N, rows, cols)")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I3I", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


# -- CSV ------------------------------------------------------------------

def save_csv(ds: Dataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(ds.n_features)] + ["label"])
        for x, y in zip(ds.inputs, ds.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def load_csv(path, n_classes: int | None = None, name: str | None = None) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header = rows[0]
    n = len(header) - 1
    if header != [f"x{i}" for i in range(n)] + ["label"]:
        raise DatasetError(f"{path}: header must be x0..x{{n-1}},label")
    try:
        X = np.array([[float(v) for v in r[:n]] for r in rows[1:]], dtype=float).reshape(-1, n)
        y = np.array([int(r[n]) for r in rows[1:]], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    k = n_classes if n_classes is not None else max(2, int(y.max()) + 1 if y.size else 2)
    return Dataset(X, y, name or Path(path).stem, k)


# -- splits and batching ----------------------------------------------------

def train_test_split(ds: Dataset, test_fraction: float = 0.25, seed: int = 0):
    if not 0 < test_fraction < 1:
        raise DatasetError("test_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(len(ds))
    n_test = max(1, int(round(test_fraction * len(ds))))
    if n_test >= len(ds):
        raise DatasetError("dataset too small to split")
    return ds.subset(perm[n_test:], ds.name + ":train"), ds.subset(perm[:n_test], ds.name + ":test")


def batch_indices(n: int, batch_size: int, rng: np.random.Generator | None = None):
    """Index arrays covering ``range(n)`` in batches; shuffled when ``rng`` is given."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(n) if rng is not None else np.arange(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]

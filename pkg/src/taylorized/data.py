"""Desk-scale datasets: Gaussian blobs, unit-sphere regression data, IDX files."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import RngStream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    classes: int

    @property
    def n_train(self) -> int:
        return len(self.x_train)

    def check_nonempty(self):
        if len(self.x_train) == 0 or len(self.x_test) == 0:
            raise ValueError("dataset is empty; nothing to train or evaluate on")


def standardize(train: np.ndarray, *others, axis=None):
    """Standardize with statistics from ``train`` only.

    ``axis`` defaults to all but the last axis (per-feature / per-channel).
    """
    if axis is None:
        axis = tuple(range(train.ndim - 1))
    mean = train.mean(axis=axis, keepdims=True)
    std = train.std(axis=axis, keepdims=True)
    std = np.where(std > 0, std, 1.0)
    return tuple((a - mean) / std for a in (train,) + others)


def make_blobs(n_train=2048, n_test=512, dim=32, classes=2, clusters_per_class=4,
               spread=1.0, separation=2.0, informative=None, seed=0, standardized=True) -> Dataset:
    """Mixture of isotropic Gaussian blobs, ``clusters_per_class`` per label.

    Centres are ``separation * N(0, I)`` restricted to the first
    ``informative`` coordinates (all of them by default); points are
    ``centre + spread * N(0, I)``.  Train and test come from disjoint seeded
    streams.
    """
    gen = RngStream(seed, 101).generator()
    n_clusters = classes * clusters_per_class
    informative = dim if informative is None else informative
    centres = np.zeros((n_clusters, dim))
    centres[:, :informative] = separation * gen.standard_normal((n_clusters, informative))
    labels_of_cluster = np.repeat(np.arange(classes), clusters_per_class)

    def draw(n, stream):
        g = RngStream(seed, stream).generator()
        which = g.integers(0, n_clusters, size=n)
        x = centres[which] + spread * g.standard_normal((n, dim))
        return x, labels_of_cluster[which]

    x_tr, y_tr = draw(n_train, 102)
    x_te, y_te = draw(n_test, 103)
    if standardized and n_train:
        x_tr, x_te = standardize(x_tr, x_te)
    return Dataset(x_tr, y_tr, x_te, y_te, classes)


def sample_sphere(n: int, dim: int, rng: RngStream) -> np.ndarray:
    """``n`` points uniform on the unit sphere in ``R^dim`` (rows)."""
    z = rng.generator().standard_normal((n, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def make_sphere(n_train=32, n_test=32, dim=16, seed=0) -> Dataset:
    """Unit-norm inputs with random +-1 regression targets."""
    x_tr = sample_sphere(n_train, dim, RngStream(seed, 201))
    x_te = sample_sphere(n_test, dim, RngStream(seed, 202))
    g = RngStream(seed, 203).generator()
    y_tr = g.choice([-1.0, 1.0], size=n_train)
    y_te = g.choice([-1.0, 1.0], size=n_test)
    return Dataset(x_tr, y_tr, x_te, y_te, 0)


# ------------------------------------------------------------------- IDX

def _read_idx(path, expected_magic: int, limit: int | None):
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise IdxFormatError(f"{path}: truncated header at byte offset {len(data)}")
    magic, count = struct.unpack(">II", data[:8])
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x} at byte offset 0, "
                             f"expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxFormatError(f"{path}: truncated header at byte offset {len(data)}")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    n = count if limit is None else min(limit, count)
    item = int(np.prod(dims[1:])) if ndim > 1 else 1
    need = header + n * item
    if len(data) < need:
        raise IdxFormatError(f"{path}: truncated payload at byte offset {len(data)}, "
                             f"need {need} bytes for {n} items")
    arr = np.frombuffer(data, dtype=np.uint8, count=n * item, offset=header)
    return arr.reshape((n,) + tuple(dims[1:]))


def load_idx(images_path, labels_path, limit: int | None = None, classes: int = 10):
    """Return ``(images, labels)``; pixels scaled to ``[0, 1]``.

    Images come back as ``(n, H, W, 1)`` float arrays.
    """
    if limit is not None and limit < 0:
        raise ValueError("limit must be non-negative")
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, limit)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, limit).astype(np.int64)
    if len(images) != len(labels):
        raise IdxFormatError(f"image count {len(images)} != label count {len(labels)}")
    if labels.size and labels.max() >= classes:
        bad = int(np.argmax(labels >= classes))
        raise IdxFormatError(f"{labels_path}: label {labels[bad]} out of range at byte offset {8 + bad}")
    x = images.astype(np.float64)[..., None] / 255.0
    return x, labels


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array in IDX layout (images: 3-d, labels: 1-d)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x0800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def idx_dataset(train_images, train_labels, test_images, test_labels,
                n_train=None, n_test=None, standardized=True, classes=10) -> Dataset:
    x_tr, y_tr = load_idx(train_images, train_labels, n_train, classes)
    x_te, y_te = load_idx(test_images, test_labels, n_test, classes)
    if standardized and len(x_tr):
        x_tr, x_te = standardize(x_tr, x_te)
    return Dataset(x_tr, y_tr, x_te, y_te, classes)

"""Dataset ingestion: CSV and IDX loaders, scaling, pooling and splits."""

from __future__ import annotations

import csv
import dataclasses
import struct
from pathlib import Path

import numpy as np

from .errors import SerializationError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclasses.dataclass
class Dataset:
    """Feature matrix scaled to [0, 1] plus integer class labels."""

    x: np.ndarray
    y: np.ndarray
    classes: int

    def __post_init__(self):
        if self.x.shape[0] != self.y.shape[0]:
            raise SerializationError("feature and label row counts differ")
        if self.y.min(initial=0) < 0 or (self.y.size and self.y.max() >= self.classes):
            raise SerializationError("label outside the declared class range")

    @property
    def feature_dim(self) -> int:
        return self.x.shape[1]

    def one_hot(self, i: int) -> np.ndarray:
        v = np.zeros(self.classes)
        v[self.y[i]] = 1.0
        return v


def min_max_scale(x: np.ndarray) -> np.ndarray:
    """Per-feature min-max to [0, 1]; constant features map to 0."""
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = hi - lo
    out = np.zeros_like(x, dtype=np.float64)
    live = span > 0
    out[:, live] = (x[:, live] - lo[live]) / span[live]
    return out


def load_csv(path: str | Path, label_col: str | int) -> Dataset:
    """RFC-4180-subset CSV with a header row; features are numeric columns."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SerializationError(f"{path}: empty CSV") from None
        rows = [row for row in reader if row]
    if isinstance(label_col, str):
        try:
            label_idx = header.index(label_col)
        except ValueError:
            raise SerializationError(f"{path}: no column named {label_col!r}") from None
    else:
        label_idx = int(label_col)
        if not (0 <= label_idx < len(header)):
            raise SerializationError(f"{path}: label column {label_idx} out of range")
    feats, labels_raw = [], []
    for row in rows:
        if len(row) != len(header):
            raise SerializationError(f"{path}: ragged row {row!r}")
        labels_raw.append(row[label_idx])
        try:
            feats.append([float(v) for i, v in enumerate(row) if i != label_idx])
        except ValueError as exc:
            raise SerializationError(f"{path}: non-numeric feature: {exc}") from None
    order = sorted(set(labels_raw))
    mapping = {name: i for i, name in enumerate(order)}
    x = min_max_scale(np.asarray(feats, dtype=np.float64))
    y = np.asarray([mapping[v] for v in labels_raw], dtype=np.int64)
    return Dataset(x=x, y=y, classes=len(order))


def _read_idx_header(blob: bytes, path, expected_magic: int, dims: int) -> tuple[int, ...]:
    need = 4 * (1 + dims)
    if len(blob) < need:
        raise SerializationError(f"{path}: truncated IDX header")
    fields = struct.unpack(f">{1 + dims}I", blob[:need])
    if fields[0] != expected_magic:
        raise SerializationError(
            f"{path}: bad IDX magic 0x{fields[0]:08x}, expected 0x{expected_magic:08x}")
    return fields[1:]


def average_pool(images: np.ndarray, factor: int) -> np.ndarray:
    """Non-overlapping average pooling of square images by the given factor."""
    if factor == 1:
        return images
    n, rows, cols = images.shape
    if rows % factor or cols % factor:
        raise SerializationError(
            f"image size {rows}x{cols} is not divisible by pooling factor {factor}")
    pooled = images.reshape(n, rows // factor, factor, cols // factor, factor)
    return pooled.mean(axis=(2, 4))


def load_idx(images_path: str | Path, labels_path: str | Path, pool: int = 1) -> Dataset:
    """Standard big-endian IDX image/label pair, scaled by 1/255 and pooled."""
    if pool < 1:
        raise SerializationError("pooling factor must be a positive integer")
    img_blob = Path(images_path).read_bytes()
    lbl_blob = Path(labels_path).read_bytes()
    n, rows, cols = _read_idx_header(img_blob, images_path, IDX_IMAGES_MAGIC, 3)
    (n_labels,) = _read_idx_header(lbl_blob, labels_path, IDX_LABELS_MAGIC, 1)
    if n != n_labels:
        raise SerializationError(
            f"image count {n} does not match label count {n_labels}")
    body = img_blob[16:]
    if len(body) != n * rows * cols:
        raise SerializationError(f"{images_path}: body length mismatch")
    images = np.frombuffer(body, dtype=np.uint8).reshape(n, rows, cols).astype(np.float64)
    images = average_pool(images / 255.0, pool)
    x = images.reshape(n, -1)
    labels = np.frombuffer(lbl_blob[8:8 + n], dtype=np.uint8).astype(np.int64)
    if len(lbl_blob) < 8 + n:
        raise SerializationError(f"{labels_path}: body length mismatch")
    classes = int(labels.max()) + 1 if n else 0
    return Dataset(x=x, y=labels, classes=classes)


def split_dataset(ds: Dataset, train_size: int, test_size: int,
                  seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle split with fixed row counts."""
    n = ds.x.shape[0]
    if train_size + test_size > n:
        raise SerializationError(
            f"split {train_size}+{test_size} exceeds {n} available rows")
    order = np.random.default_rng(seed).permutation(n)
    tr, te = order[:train_size], order[train_size:train_size + test_size]
    return (Dataset(x=ds.x[tr], y=ds.y[tr], classes=ds.classes),
            Dataset(x=ds.x[te], y=ds.y[te], classes=ds.classes))


def batch_indices(n: int, batch_size: int, iterations: int, seed: int):
    """Deterministic epoch-reshuffled index stream of exactly ``iterations`` batches."""
    rng = np.random.default_rng(seed)
    produced = 0
    while produced < iterations:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            if produced == iterations:
                return
            yield order[start:start + batch_size]
            produced += 1


def batches(ds: Dataset, batch_size: int, iterations: int, seed: int):
    """Deterministic epoch-reshuffled batch stream of exactly ``iterations`` batches."""
    for idx in batch_indices(ds.x.shape[0], batch_size, iterations, seed):
        yield [(ds.x[i], ds.one_hot(i)) for i in idx]

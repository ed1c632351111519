"""Dataset ingestion, synthetic data, and fixed-feature transforms.

The only external format is IDX, the big-endian container used by the
MNIST-family datasets:

    images file:  magic 0x00000803, then [count, rows, cols] as u32,
                  then count*rows*cols unsigned bytes, row-major
    labels file:  magic 0x00000801, then [count] as u32, then count
                  unsigned byte labels

Files ending in ".gz" are decompressed transparently. Pixels are scaled to
[0, 1] by division by 255 on load.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .core import RngStream
from .errors import DataFormatError, DimensionError

__all__ = [
    "Dataset",
    "FeatureSpec",
    "load_idx",
    "save_idx",
    "synth_blobs",
    "apply_features",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

IDENTITY = "identity"
NORMALIZE = "normalize"
RANDOM_PROJECTION = "random_projection"


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (n, d) with integer labels in [0, num_classes)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError(f"features must be a nonempty matrix, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise DimensionError(
                f"{self.labels.shape[0] if self.labels.ndim == 1 else self.labels.shape} labels "
                f"for {self.features.shape[0]} feature rows"
            )
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if np.any((self.labels < 0) | (self.labels >= self.num_classes)):
            bad = int(self.labels[(self.labels < 0) | (self.labels >= self.num_classes)][0])
            raise ValueError(f"label {bad} out of range [0, {self.num_classes})")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.num_classes)


@dataclass(frozen=True)
class FeatureSpec:
    """Fixed, non-learned feature transform applied before training.

    identity          passes features through
    normalize         per-coordinate (x - mean) / std
    random_projection multiplies by a seeded d x out_dim Gaussian matrix
                      scaled by 1/sqrt(d)
    """

    kind: str = IDENTITY
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    out_dim: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (IDENTITY, NORMALIZE, RANDOM_PROJECTION):
            raise ValueError(f"unknown feature kind: {self.kind!r}")
        if self.kind == NORMALIZE:
            if self.mean is None or self.std is None:
                raise ValueError("normalize needs mean and std arrays")
            if np.any(np.asarray(self.std) <= 0):
                raise ValueError("normalize std entries must be > 0")
        if self.kind == RANDOM_PROJECTION:
            if self.out_dim is None or self.out_dim < 1:
                raise ValueError(f"random_projection needs out_dim >= 1, got {self.out_dim}")


def _open(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_u32(f, path, offset: int, what: str) -> tuple[int, int]:
    raw = f.read(4)
    if len(raw) < 4:
        raise DataFormatError(
            f"{path}: truncated while reading {what} at byte {offset} "
            f"(got {len(raw)} of 4 bytes)",
            offset=offset,
        )
    return struct.unpack(">I", raw)[0], offset + 4


def _read_payload(f, path, offset: int, count: int, what: str) -> np.ndarray:
    raw = f.read(count)
    if len(raw) < count:
        raise DataFormatError(
            f"{path}: truncated {what} at byte {offset + len(raw)} "
            f"(expected {count} bytes, found {len(raw)})",
            offset=offset + len(raw),
        )
    extra = f.read(1)
    if extra:
        raise DataFormatError(
            f"{path}: {len(extra)}+ trailing bytes after {what} at byte {offset + count}",
            offset=offset + count,
        )
    return np.frombuffer(raw, dtype=np.uint8)


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair into a Dataset.

    Each rows x cols image is flattened row-major; pixel values are divided
    by 255 so features land in [0, 1]. Parse failures raise DataFormatError
    naming the byte offset.
    """
    with _open(images_path) as f:
        magic, off = _read_u32(f, images_path, 0, "magic number")
        if magic != IMAGE_MAGIC:
            raise DataFormatError(
                f"{images_path}: bad magic 0x{magic:08x} at byte 0 "
                f"(expected image magic 0x{IMAGE_MAGIC:08x})",
                offset=0,
            )
        count, off = _read_u32(f, images_path, off, "image count")
        if count < 1:
            raise DataFormatError(
                f"{images_path}: image count 0 at byte 4", offset=4
            )
        rows, off = _read_u32(f, images_path, off, "row count")
        cols, off = _read_u32(f, images_path, off, "column count")
        pixels = _read_payload(f, images_path, off, count * rows * cols, "pixel data")

    with _open(labels_path) as f:
        magic, off = _read_u32(f, labels_path, 0, "magic number")
        if magic != LABEL_MAGIC:
            raise DataFormatError(
                f"{labels_path}: bad magic 0x{magic:08x} at byte 0 "
                f"(expected label magic 0x{LABEL_MAGIC:08x})",
                offset=0,
            )
        label_count, off = _read_u32(f, labels_path, off, "label count")
        if label_count != count:
            raise DataFormatError(
                f"{labels_path}: {label_count} labels at byte 4 but "
                f"{images_path} holds {count} images",
                offset=4,
            )
        labels = _read_payload(f, labels_path, off, label_count, "label data")

    features = pixels.reshape(count, rows * cols).astype(np.float64)
    features /= 255.0
    labels = labels.astype(np.int64)
    return Dataset(features, labels, num_classes=int(labels.max()) + 1)


def save_idx(dataset: Dataset, images_path, labels_path, rows: int, cols: int) -> None:
    """Write a Dataset back to an IDX pair (inverse of load_idx).

    Features must have dimension rows*cols and values in [0, 1]; they are
    quantized with round(x * 255).
    """
    if dataset.dim != rows * cols:
        raise DimensionError(f"dataset dim {dataset.dim} != rows*cols = {rows * cols}")
    pixels = np.round(dataset.features * 255.0)
    if pixels.min() < 0 or pixels.max() > 255:
        raise ValueError("features must lie in [0, 1] to serialize as bytes")
    with _open_write(images_path) as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, dataset.n, rows, cols))
        f.write(pixels.astype(np.uint8).tobytes())
    with _open_write(labels_path) as f:
        f.write(struct.pack(">II", LABEL_MAGIC, dataset.n))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def _open_write(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "wb")
    return open(path, "wb")


def synth_blobs(
    m: int, d: int, n_per_class: int, separation: float, stream: RngStream
) -> Dataset:
    """Gaussian class blobs: class c is N(separation * e_{c mod d}, I).

    Deterministic given the stream; rows are grouped by class.
    """
    if m < 2:
        raise ValueError(f"need at least 2 classes, got {m}")
    if d < 1 or n_per_class < 1:
        raise ValueError("d and n_per_class must be >= 1")
    rng = stream.generator()
    features = np.empty((m * n_per_class, d))
    labels = np.empty(m * n_per_class, dtype=np.int64)
    for c in range(m):
        center = np.zeros(d)
        center[c % d] = separation
        block = slice(c * n_per_class, (c + 1) * n_per_class)
        features[block] = center + rng.standard_normal((n_per_class, d))
        labels[block] = c
    return Dataset(features, labels, num_classes=m)


def apply_features(dataset: Dataset, spec: FeatureSpec) -> Dataset:
    """Apply a fixed feature transform, returning a new Dataset."""
    if spec.kind == IDENTITY:
        return dataset
    if spec.kind == NORMALIZE:
        mean = np.asarray(spec.mean, dtype=float)
        std = np.asarray(spec.std, dtype=float)
        if mean.shape != (dataset.dim,) or std.shape != (dataset.dim,):
            raise DimensionError(
                f"normalize arrays have shapes {mean.shape}/{std.shape}, "
                f"expected ({dataset.dim},)"
            )
        return Dataset((dataset.features - mean) / std, dataset.labels, dataset.num_classes)
    # random projection
    proj_stream = RngStream(spec.seed).child("feature-projection")
    matrix = proj_stream.generator().standard_normal((dataset.dim, spec.out_dim))
    projected = dataset.features @ matrix / np.sqrt(dataset.dim)
    return Dataset(projected, dataset.labels, dataset.num_classes)

"""Datasets and the one-pass mini-batch stream.

Binary dataset files (little-endian)::

    magic     4 bytes  b"OPDS"
    version   u32      1
    n         u64      number of records
    dim       u32      feature dimension D
    classes   u32      class count C
    records   n * (D float32 features, u32 label)

Train and test sets are written to separate files.
"""

from __future__ import annotations

import math
import struct
from collections.abc import Iterator
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"OPDS"
VERSION = 1
_HEADER = struct.Struct("<4sIQII")


class DatasetParseError(ValueError):
    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class DatasetSpec:
    n_examples: int = 50_000
    feature_dim: int = 20
    n_classes: int = 10
    source: str = "synthetic-blobs"
    seed: int = 0
    order_seed: int = 0
    spread: float = 1.0
    center_scale: float = 1.0
    test_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.feature_dim < 1:
            raise ValueError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.n_examples < self.n_classes:
            raise ValueError("n_examples must be >= n_classes")
        if self.spread < 0 or self.center_scale <= 0:
            raise ValueError("spread must be >= 0 and center_scale > 0")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")


@dataclass
class Dataset:
    """Features are float32 (the on-disk precision); labels int64."""

    x: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self) -> None:
        if self.x.ndim != 2 or len(self.x) != len(self.y):
            raise ValueError("x must be (n, D) and match y in length")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError("label outside [0, n_classes)")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.n_classes == other.n_classes
            and self.x.shape == other.x.shape
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )


@dataclass
class Blobs:
    train: Dataset
    test: Dataset
    centers: np.ndarray
    spread: float


def generate_blobs(spec: DatasetSpec) -> Blobs:
    """Equal-weight isotropic Gaussian clusters, one per class, split 90/10 by default.

    Centers are drawn from ``N(0, center_scale^2 I)``; every cluster has
    standard deviation ``spread`` along each axis.
    """
    rng = np.random.default_rng(spec.seed)
    centers = rng.normal(0.0, spec.center_scale, size=(spec.n_classes, spec.feature_dim))
    y = rng.integers(spec.n_classes, size=spec.n_examples)
    noise = rng.normal(0.0, 1.0, size=(spec.n_examples, spec.feature_dim))
    x = (centers[y] + spec.spread * noise).astype(np.float32)
    n_test = max(1, int(round(spec.test_fraction * spec.n_examples)))
    n_train = spec.n_examples - n_test
    return Blobs(
        train=Dataset(x[:n_train], y[:n_train], spec.n_classes),
        test=Dataset(x[n_train:], y[n_train:], spec.n_classes),
        centers=centers,
        spread=spec.spread,
    )


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("x", "<f4", (dim,)), ("y", "<u4")])


def write_dataset(path: str | Path, data: Dataset) -> None:
    records = np.empty(len(data), dtype=_record_dtype(data.dim))
    records["x"] = data.x
    records["y"] = data.y
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(data), data.dim, data.n_classes))
        fh.write(records.tobytes())


def read_dataset(path: str | Path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetParseError(f"header truncated: file has {len(raw)} bytes, need {_HEADER.size}", len(raw))
    magic, version, n, dim, classes = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetParseError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise DatasetParseError(f"unsupported version {version}", 4)
    if dim == 0:
        raise DatasetParseError("feature dimension is 0", 16)
    if classes < 2:
        raise DatasetParseError(f"class count {classes} is below 2", 20)
    dtype = _record_dtype(dim)
    body = len(raw) - _HEADER.size
    complete = body // dtype.itemsize
    if complete < n:
        offset = _HEADER.size + complete * dtype.itemsize
        raise DatasetParseError(
            f"truncated payload: header promises {n} records, record {complete} is incomplete", offset
        )
    if body > n * dtype.itemsize:
        raise DatasetParseError("trailing bytes after last record", _HEADER.size + n * dtype.itemsize)
    records = np.frombuffer(raw, dtype=dtype, count=n, offset=_HEADER.size)
    labels = records["y"].astype(np.int64)
    bad = np.flatnonzero(labels >= classes)
    if bad.size:
        i = int(bad[0])
        offset = _HEADER.size + i * dtype.itemsize + 4 * dim
        raise DatasetParseError(f"record {i} has label {labels[i]} >= {classes} classes", offset)
    return Dataset(np.array(records["x"], dtype=np.float32), labels, int(classes))


@dataclass
class StreamBatch:
    x: np.ndarray
    y: np.ndarray
    indices: np.ndarray
    step_index: int
    is_final: bool

    def __len__(self) -> int:
        return len(self.y)


def n_batches(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def one_pass_iter(
    data: Dataset,
    order_seed: int | np.random.Generator,
    batch_size: int,
) -> Iterator[StreamBatch]:
    """Yield the dataset once, in a seeded uniform random order.

    ``order_seed`` may also be a Generator, in which case one permutation is
    drawn from it (used for successive epochs of multi-epoch training).
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    rng = order_seed if isinstance(order_seed, np.random.Generator) else np.random.default_rng(order_seed)
    order = rng.permutation(len(data))
    total = n_batches(len(data), batch_size)
    for b in range(total):
        idx = order[b * batch_size : (b + 1) * batch_size]
        yield StreamBatch(
            x=data.x[idx].astype(np.float64),
            y=data.y[idx],
            indices=idx,
            step_index=b,
            is_final=b == total - 1,
        )

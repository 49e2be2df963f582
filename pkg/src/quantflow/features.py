"""Feature sets: the on-disk QODF format, validation, CSV ingestion, batching.

QODF v1 layout (little-endian):

    magic   4 bytes  b"QODF"
    version u32      1
    count   u32      N
    dim     u32      m
    labels  u8       1 if a label block follows the data, else 0
    pad     3 bytes  zero
    data    N*m float32, row-major
    labels  N u32    (only if the flag is set)

Feature values are stored and held in memory as float32; training and
scoring upcast to float64 at their boundary. A feature dimension must be
even and at least 2 because the flow splits each vector into two halves.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    DimensionError,
    FeatureFormatError,
    NonFiniteValueError,
    ShapeMismatchError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from .seeding import check_seed, stream

MAGIC = b"QODF"
VERSION = 1
_HEADER = struct.Struct("<4sIIIB3x")


def _check_dim(m: int) -> None:
    if m < 2:
        raise DimensionError(f"feature dimension must be at least 2, got {m}")
    if m % 2 != 0:
        raise DimensionError(f"odd feature dimension: {m}")


@dataclass(frozen=True)
class FeatureSet:
    """Immutable N x m matrix of feature vectors with optional labels."""

    data: np.ndarray
    labels: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise ShapeMismatchError(f"feature data must be 2-D, got shape {data.shape}")
        _check_dim(data.shape[1])
        if not np.isfinite(data).all():
            raise NonFiniteValueError("feature data contains NaN or infinity")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        if self.labels is not None:
            labels = np.ascontiguousarray(self.labels, dtype=np.uint32)
            if labels.shape != (data.shape[0],):
                raise ShapeMismatchError(
                    f"labels must have length {data.shape[0]}, got shape {labels.shape}"
                )
            labels.flags.writeable = False
            object.__setattr__(self, "labels", labels)

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def as_float64(self) -> np.ndarray:
        """Training/scoring precision copy of the data."""
        return self.data.astype(np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureSet):
            return NotImplemented
        if self.data.shape != other.data.shape:
            return False
        if not np.array_equal(self.data, other.data):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        return self.labels is None or np.array_equal(self.labels, other.labels)


def save_features(fs: FeatureSet, path) -> None:
    """Write a QODF v1 file. The set is validated before anything is written."""
    if not np.isfinite(fs.data).all():
        raise NonFiniteValueError("feature data contains NaN or infinity")
    flag = 1 if fs.labels is not None else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, fs.count, fs.dim, flag))
        fh.write(np.ascontiguousarray(fs.data, dtype="<f4").tobytes())
        if fs.labels is not None:
            fh.write(np.ascontiguousarray(fs.labels, dtype="<u4").tobytes())


def load_features(path, name: str | None = None) -> FeatureSet:
    """Read a QODF v1 file, validating header, payload size, and values."""
    with open(path, "rb") as fh:
        raw = fh.read()
    header = raw[: _HEADER.size]
    if len(header) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: file shorter than the 20-byte header")
    magic, version, count, dim, flag = _HEADER.unpack(header)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    _check_dim(dim)
    if flag not in (0, 1):
        raise FeatureFormatError(f"{path}: label flag must be 0 or 1, got {flag}")
    body = raw[_HEADER.size :]
    need = count * dim * 4 + (count * 4 if flag else 0)
    if len(body) < need:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(body)} bytes, header declares {need}"
        )
    if len(body) > need:
        raise FeatureFormatError(f"{path}: {len(body) - need} trailing bytes after payload")
    data = np.frombuffer(body[: count * dim * 4], dtype="<f4").reshape(count, dim)
    if not np.isfinite(data).all():
        raise NonFiniteValueError(f"{path}: payload contains NaN or infinity")
    labels = None
    if flag:
        labels = np.frombuffer(body[count * dim * 4 :], dtype="<u4").copy()
    return FeatureSet(data=data.copy(), labels=labels, name=name or str(path))


def load_csv(path, labels: bool = False, name: str | None = None) -> FeatureSet:
    """Read a headerless CSV, one sample per row.

    With labels=True the final column is parsed as an integer class id.
    """
    try:
        table = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise FeatureFormatError(f"{path}: cannot parse CSV: {exc}") from exc
    if table.size == 0:
        raise FeatureFormatError(f"{path}: empty CSV")
    if labels:
        if table.shape[1] < 3:
            raise DimensionError(f"{path}: need at least 2 feature columns plus labels")
        lab = table[:, -1]
        if not np.all(lab == np.floor(lab)) or np.any(lab < 0):
            raise FeatureFormatError(f"{path}: final column is not non-negative integers")
        return FeatureSet(
            data=table[:, :-1].astype(np.float32),
            labels=lab.astype(np.uint32),
            name=name or str(path),
        )
    return FeatureSet(data=table.astype(np.float32), name=name or str(path))


def save_csv(fs: FeatureSet, path) -> None:
    """Write a headerless CSV mirroring load_csv (labels as a final column)."""
    with open(path, "w") as fh:
        for i in range(fs.count):
            row = ",".join(repr(float(v)) for v in fs.data[i])
            if fs.labels is not None:
                row += f",{int(fs.labels[i])}"
            fh.write(row + "\n")


@dataclass(frozen=True)
class BatchPlan:
    """Deterministic shuffled batching of {0..N-1}."""

    batch_size: int
    shuffle_seed: int
    drop_last: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        check_seed(self.shuffle_seed)


def make_batches(fs: FeatureSet, plan: BatchPlan) -> list[np.ndarray]:
    """Index slices covering one epoch, shuffled by plan.shuffle_seed.

    The same (count, plan) always yields the same sequence. Every index
    appears exactly once; with drop_last a final short batch is omitted.
    """
    n = fs.count
    if plan.batch_size > n:
        raise ValueError(f"batch_size {plan.batch_size} exceeds sample count {n}")
    perm = stream(plan.shuffle_seed).permutation(n)
    batches = [perm[i : i + plan.batch_size] for i in range(0, n, plan.batch_size)]
    if plan.drop_last and len(batches[-1]) < plan.batch_size:
        batches.pop()
    return batches

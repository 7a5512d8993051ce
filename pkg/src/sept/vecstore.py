"""Embedding pools and the SEPT binary pool format.

Layout (little-endian)::

    magic      4 bytes  b"SEPT"
    version    u32      1
    metric     u8       0 = cosine, 1 = l2
    dimension  u32
    count      u64
    ids        count * i64
    vectors    count * dimension * f32   (row-major, id order)
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import FormatError, ParseError, ValidationError

MAGIC = b"SEPT"
VERSION = 1
HEADER = struct.Struct("<4sIBIQ")
HEADER_SIZE = HEADER.size  # 21

METRICS = ("cosine", "l2")
UNIT_NORM_TOL = 1e-5


@dataclass(eq=False)
class EmbeddingPool:
    """Id-addressed set of fixed-dimension float32 vectors.

    Construction only coerces dtypes and checks shapes; call :meth:`validate`
    for the full invariant check (unique ids, finiteness, unit norms).
    """

    ids: np.ndarray
    vectors: np.ndarray
    metric: str = "cosine"

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValidationError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        self.ids = np.ascontiguousarray(self.ids, dtype=np.int64).reshape(-1)
        vectors = np.asarray(self.vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ValidationError(f"vectors must be 2-d, got shape {vectors.shape}")
        self.vectors = np.ascontiguousarray(vectors)
        if self.vectors.shape[1] == 0:
            raise ValidationError("dimension must be positive")
        if len(self.ids) != len(self.vectors):
            raise ValidationError(f"{len(self.ids)} ids but {len(self.vectors)} vectors")

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def validate(self) -> "EmbeddingPool":
        uniq, counts = np.unique(self.ids, return_counts=True)
        if len(uniq) != len(self.ids):
            dup = uniq[counts > 1][:10].tolist()
            raise ValidationError(f"duplicate ids: {dup}")
        bad = ~np.isfinite(self.vectors).all(axis=1)
        if bad.any():
            raise ValidationError(f"non-finite components in ids {self.ids[bad][:10].tolist()}")
        if self.metric == "cosine" and len(self):
            norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
            off = np.abs(norms - 1.0) > UNIT_NORM_TOL
            if off.any():
                raise ValidationError(
                    f"cosine pool holds non-unit vectors, ids {self.ids[off][:10].tolist()}"
                )
        return self

    def equals(self, other: "EmbeddingPool") -> bool:
        """Bitwise equality of ids, vectors, and metric."""
        return (
            self.metric == other.metric
            and self.vectors.shape == other.vectors.shape
            and np.array_equal(self.ids, other.ids)
            and self.vectors.tobytes() == other.vectors.tobytes()
        )

    @cached_property
    def vectors64(self) -> np.ndarray:
        return self.vectors.astype(np.float64)

    @cached_property
    def sorted_order(self) -> np.ndarray:
        return np.argsort(self.ids, kind="stable")

    def index_of(self) -> dict[int, int]:
        return {int(i): row for row, i in enumerate(self.ids)}

    def subset(self, rows) -> "EmbeddingPool":
        rows = np.asarray(rows, dtype=np.intp)
        return EmbeddingPool(self.ids[rows], self.vectors[rows], self.metric)

    @classmethod
    def empty(cls, dimension: int, metric: str = "cosine") -> "EmbeddingPool":
        return cls(np.empty(0, np.int64), np.empty((0, dimension), np.float32), metric)


def normalize(pool: EmbeddingPool) -> EmbeddingPool:
    """Scale every vector to unit L2 norm. Zero vectors are rejected."""
    v = pool.vectors.astype(np.float64)
    norms = np.linalg.norm(v, axis=1)
    zero = norms == 0.0
    if zero.any():
        raise ValidationError(f"zero vectors cannot be normalized, ids {pool.ids[zero].tolist()}")
    out = (v / norms[:, None]).astype(np.float32)
    return EmbeddingPool(pool.ids.copy(), out, pool.metric)


def write_pool(pool: EmbeddingPool, sink: BinaryIO) -> int:
    pool.validate()
    n, d = pool.vectors.shape
    header = HEADER.pack(MAGIC, VERSION, METRICS.index(pool.metric), d, n)
    sink.write(header)
    sink.write(pool.ids.astype("<i8", copy=False).tobytes())
    sink.write(pool.vectors.astype("<f4", copy=False).tobytes())
    return HEADER_SIZE + 8 * n + 4 * n * d


def pool_nbytes(count: int, dimension: int) -> int:
    return HEADER_SIZE + 8 * count + 4 * count * dimension


def _read_exact(source: BinaryIO, out: np.ndarray, offset: int, what: str) -> None:
    """Fill ``out`` from ``source`` without an intermediate copy."""
    view = memoryview(out).cast("B")
    got = 0
    while got < len(view):
        n = source.readinto(view[got:])
        if not n:
            raise FormatError(
                f"truncated {what}: expected {len(view)} bytes, got {got}", offset + got
            )
        got += n


def read_header(source: BinaryIO) -> tuple[str, int, int]:
    raw = source.read(HEADER_SIZE)
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}", 0)
    if len(raw) < HEADER_SIZE:
        raise FormatError("truncated header", len(raw))
    _, version, metric_tag, dimension, count = HEADER.unpack(raw)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if metric_tag >= len(METRICS):
        raise FormatError(f"bad metric tag {metric_tag}", 8)
    if dimension == 0:
        raise FormatError("dimension must be positive", 9)
    return METRICS[metric_tag], dimension, count


def read_pool(source: BinaryIO) -> EmbeddingPool:
    metric, d, n = read_header(source)
    ids = np.empty(n, dtype="<i8")
    _read_exact(source, ids, HEADER_SIZE, "id block")
    vectors = np.empty((n, d), dtype="<f4")
    _read_exact(source, vectors, HEADER_SIZE + 8 * n, "vector block")
    return EmbeddingPool(ids, vectors, metric).validate()


def save_pool(pool: EmbeddingPool, path) -> int:
    with open(path, "wb") as fh:
        return write_pool(pool, fh)


def load_pool(path) -> EmbeddingPool:
    with open(path, "rb") as fh:
        return read_pool(fh)


def pool_bytes(pool: EmbeddingPool) -> bytes:
    buf = io.BytesIO()
    write_pool(pool, buf)
    return buf.getvalue()


def read_labels(path) -> dict[int, int]:
    """Read a ``id<TAB>label`` sidecar file."""
    labels: dict[int, int] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"expected 2 fields, got {len(parts)}", lineno, str(path))
        try:
            labels[int(parts[0])] = int(parts[1])
        except ValueError as exc:
            raise ParseError(str(exc), lineno, str(path)) from None
    return labels


def write_labels(ids: np.ndarray, labels: np.ndarray, path) -> None:
    lines = ["# id\tlabel"] + [f"{int(i)}\t{int(y)}" for i, y in zip(ids, labels)]
    Path(path).write_text("\n".join(lines) + "\n")


def labels_for(pool: EmbeddingPool, mapping: dict[int, int]) -> np.ndarray:
    missing = [int(i) for i in pool.ids if int(i) not in mapping]
    if missing:
        raise ValidationError(f"no label for ids {missing[:10]}")
    return np.array([mapping[int(i)] for i in pool.ids], dtype=np.int64)

"""IVF coarse quantizer + SQ8 inverted lists.

Vectors are assigned to their nearest k-means centroid (always by l2; on unit
vectors this orders cells the same way cosine would) and stored as 8-bit
per-dimension codes. A query scans the ``nprobe`` nearest cells, scores the
decoded vectors asymmetrically, and optionally reranks against the exact pool.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from .errors import FormatError, ValidationError
from .exact import RankedList, check_query, score_rows, search_exact, top_k_order
from .vecstore import METRICS, EmbeddingPool

INDEX_MAGIC = b"SEPI"
INDEX_VERSION = 1
INDEX_HEADER = struct.Struct("<4sIBIIQ")
_KMEANS_HEAD = struct.Struct("<Id")
_U64 = struct.Struct("<Q")

RERANK_FACTOR = 4
# absolute slack on the quantization error bound, covers float32 rounding of stored vectors
_BOUND_SLACK = 1e-6
_CHUNK = 16384


@dataclass(frozen=True)
class IndexPreset:
    nlist: int
    nprobe: int
    dimension: int


# operating point of the original retrieval pipeline (155M vectors, 768-d features)
PRESETS = {"paper-default": IndexPreset(nlist=16384, nprobe=256, dimension=768)}


@dataclass(eq=False)
class KMeansModel:
    centroids: np.ndarray
    inertia: float
    iterations_run: int
    inertia_history: list[float] = field(default_factory=list)

    @property
    def nlist(self) -> int:
        return len(self.centroids)


@dataclass(frozen=True)
class SearchParams:
    nprobe: int = 1
    k: int = 10
    rerank: bool = False

    def __post_init__(self):
        if self.nprobe < 1:
            raise ValidationError(f"nprobe must be >= 1, got {self.nprobe}")
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


def _sq_norms(x: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", x, x)


def assign(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest-centroid index per row (ties go to the lower index)."""
    c = np.asarray(centroids, dtype=np.float64)
    cn = _sq_norms(c)
    out = np.empty(len(x), dtype=np.int64)
    for start in range(0, len(x), _CHUNK):
        block = x[start : start + _CHUNK]
        d2 = cn[None, :] - 2.0 * (block @ c.T)
        out[start : start + _CHUNK] = np.argmin(d2, axis=1)
    return out


def _point_dist2(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> np.ndarray:
    diff = x - centroids[labels]
    return _sq_norms(diff)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    xn = _sq_norms(x)

    def dist2(i: int) -> np.ndarray:
        d = xn - 2.0 * (x @ x[i]) + xn[i]
        np.maximum(d, 0.0, out=d)
        return d

    chosen = [int(rng.integers(n))]
    closest = dist2(chosen[0])
    closest[chosen[0]] = 0.0
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            cum = np.cumsum(closest)
            idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
            idx = min(idx, n - 1)
        else:
            taken = set(chosen)
            idx = next(i for i in range(n) if i not in taken)
        chosen.append(idx)
        np.minimum(closest, dist2(idx), out=closest)
        closest[idx] = 0.0
    return x[chosen].copy()


def _update(x: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    d = x.shape[1]
    counts = np.bincount(labels, minlength=k)
    sums = np.stack([np.bincount(labels, weights=x[:, j], minlength=k) for j in range(d)], axis=1)
    centroids = sums / np.maximum(counts, 1)[:, None]
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        # reseed each empty cell with the point currently farthest from its centroid
        dist = _point_dist2(x, centroids, labels)
        far = np.argsort(-dist, kind="stable")[: len(empty)]
        centroids[empty] = x[far]
    return centroids


def train(
    pool: EmbeddingPool, nlist: int, max_iters: int = 25, seed: int = 0, tol: float = 1e-4
) -> KMeansModel:
    """Lloyd's k-means with k-means++ seeding.

    Stops after ``max_iters`` or once the relative inertia improvement drops
    below ``tol``. A step that would raise inertia (possible only through
    rounding) is rejected, so the recorded history is non-increasing.
    """
    n = len(pool)
    if nlist < 1 or n < nlist:
        raise ValidationError(f"need at least nlist={nlist} training vectors, got {n}")
    if max_iters < 1:
        raise ValidationError("max_iters must be positive")
    x = pool.vectors64
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, nlist, rng)
    labels = assign(x, centroids)
    inertia = float(_point_dist2(x, centroids, labels).sum())
    history = [inertia]
    iterations = 0
    for _ in range(max_iters):
        if inertia == 0.0:
            break
        new_centroids = _update(x, labels, nlist)
        new_labels = assign(x, new_centroids)
        new_inertia = float(_point_dist2(x, new_centroids, new_labels).sum())
        if new_inertia > inertia:
            break
        improvement = (inertia - new_inertia) / inertia
        centroids, labels, inertia = new_centroids, new_labels, new_inertia
        iterations += 1
        history.append(inertia)
        if improvement < tol:
            break
    return KMeansModel(centroids.astype(np.float32), inertia, iterations, history)


# ---------------------------------------------------------------------------
# SQ8
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Sq8Codec:
    vmin: np.ndarray
    vmax: np.ndarray

    def __post_init__(self):
        self.vmin = np.ascontiguousarray(self.vmin, dtype=np.float32)
        self.vmax = np.ascontiguousarray(self.vmax, dtype=np.float32)
        if self.vmin.shape != self.vmax.shape or self.vmin.ndim != 1:
            raise ValidationError("codec min/max must be 1-d and equal length")
        if (self.vmin > self.vmax).any():
            raise ValidationError("codec min exceeds max")

    @property
    def dimension(self) -> int:
        return len(self.vmin)

    @property
    def step(self) -> np.ndarray:
        return (self.vmax.astype(np.float64) - self.vmin) / 255.0

    @property
    def degenerate(self) -> np.ndarray:
        return self.vmax == self.vmin

    def encode(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        step = self.step
        safe = np.where(self.degenerate, 1.0, step)
        codes = np.rint((x - self.vmin) / safe)
        codes = np.clip(codes, 0, 255)
        codes[..., self.degenerate] = 0
        return codes.astype(np.uint8)

    def decode(self, codes: np.ndarray) -> np.ndarray:
        return self.vmin + codes.astype(np.float64) * self.step


def fit_codec(pool: EmbeddingPool) -> Sq8Codec:
    if len(pool) == 0:
        raise ValidationError("cannot fit a codec on an empty pool")
    return Sq8Codec(pool.vectors.min(axis=0), pool.vectors.max(axis=0))


# ---------------------------------------------------------------------------
# index
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class IvfIndex:
    kmeans: KMeansModel
    codec: Sq8Codec
    metric: str
    list_ids: list[np.ndarray]
    list_codes: list[np.ndarray]
    # per-dimension worst reconstruction error over indexed vectors; drives the rerank bound
    error_bound: np.ndarray

    @property
    def dimension(self) -> int:
        return self.codec.dimension

    @property
    def nlist(self) -> int:
        return self.kmeans.nlist

    @property
    def ntotal(self) -> int:
        return int(sum(len(i) for i in self.list_ids))

    @property
    def list_sizes(self) -> np.ndarray:
        return np.array([len(i) for i in self.list_ids], dtype=np.int64)


def build(pool: EmbeddingPool, kmeans: KMeansModel, codec: Sq8Codec) -> IvfIndex:
    d = pool.dimension
    if kmeans.centroids.shape[1] != d or codec.dimension != d:
        raise ValidationError(
            f"pool dimension {d} does not match centroids {kmeans.centroids.shape[1]} "
            f"/ codec {codec.dimension}"
        )
    nlist = kmeans.nlist
    x = pool.vectors64
    labels = assign(x, kmeans.centroids)
    codes = codec.encode(x) if len(pool) else np.empty((0, d), np.uint8)
    if len(pool):
        err = np.abs(codec.decode(codes) - x).max(axis=0)
        bound = np.maximum(codec.step / 2.0, err)
    else:
        bound = codec.step / 2.0
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(nlist + 1))
    list_ids, list_codes = [], []
    for c in range(nlist):
        rows = order[bounds[c] : bounds[c + 1]]
        list_ids.append(pool.ids[rows].copy())
        list_codes.append(np.ascontiguousarray(codes[rows]))
    return IvfIndex(kmeans, codec, pool.metric, list_ids, list_codes, bound)


def build_index(
    pool: EmbeddingPool, nlist: int, seed: int, max_iters: int = 25
) -> IvfIndex:
    """Train, fit the codec, and build in one call."""
    return build(pool, train(pool, nlist, max_iters, seed), fit_codec(pool))


def probe_order(index: IvfIndex, query: np.ndarray) -> np.ndarray:
    """Cells ordered by l2 distance from the query (ties by cell number)."""
    d2 = -score_rows(index.kmeans.centroids.astype(np.float64), query, "l2")
    return np.lexsort((np.arange(index.nlist), d2))


def _rows_for(pool: EmbeddingPool, ids: np.ndarray) -> np.ndarray:
    order = pool.sorted_order
    pos = np.searchsorted(pool.ids[order], ids)
    pos = np.minimum(pos, len(order) - 1)
    rows = order[pos]
    if len(ids) and not np.array_equal(pool.ids[rows], ids):
        missing = ids[pool.ids[rows] != ids]
        raise ValidationError(f"rerank pool lacks indexed ids {missing[:10].tolist()}")
    return rows


def search(
    index: IvfIndex,
    query,
    params: SearchParams,
    pool: EmbeddingPool | None = None,
    query_id: int = -1,
) -> RankedList:
    if query is None or np.asarray(query).shape != (index.dimension,):
        raise ValidationError(
            f"query shape {np.shape(query)} does not match index dimension {index.dimension}"
        )
    query = np.asarray(query)
    if params.nprobe > index.nlist:
        raise ValidationError(f"nprobe={params.nprobe} exceeds nlist={index.nlist}")
    if params.rerank:
        if pool is None:
            raise ValidationError("rerank requested but no pool supplied")
        check_query(pool, query)

    cells = probe_order(index, query)[: params.nprobe]
    ids = np.concatenate([index.list_ids[c] for c in cells])
    k = params.k
    if len(ids) == 0:
        return RankedList(int(query_id), ids, np.empty(0, np.float32))
    codes = np.concatenate([index.list_codes[c] for c in cells])
    decoded = index.codec.decode(codes)
    approx = score_rows(decoded, query, index.metric)

    if not params.rerank:
        approx32 = approx.astype(np.float32)
        top = top_k_order(ids, approx32, k)
        return RankedList(int(query_id), ids[top], approx32[top])

    q = query.astype(np.float64)
    err = index.error_bound
    if index.metric == "cosine":
        slack = float(np.abs(q) @ err) + _BOUND_SLACK
    else:
        slack = (2.0 * np.abs(decoded - q) + err) @ err + _BOUND_SLACK
    lower = approx - slack
    kk = min(k, len(ids))
    kth_lower = np.partition(lower, len(lower) - kk)[len(lower) - kk]
    keep = approx + slack >= kth_lower
    depth = min(RERANK_FACTOR * k, len(ids))
    keep[top_k_order(ids, approx, depth)] = True
    cand = ids[keep]
    exact = score_rows(pool.vectors64[_rows_for(pool, cand)], query, pool.metric).astype(np.float32)
    top = top_k_order(cand, exact, k)
    return RankedList(int(query_id), cand[top], exact[top])


def search_batch(
    index: IvfIndex, queries: EmbeddingPool, params: SearchParams, pool: EmbeddingPool | None = None
) -> list[RankedList]:
    return [
        search(index, queries.vectors[r], params, pool, int(queries.ids[r]))
        for r in range(len(queries))
    ]


def eval_recall(
    index: IvfIndex, queries: EmbeddingPool, pool: EmbeddingPool, params: SearchParams
) -> float:
    """Mean fraction of the exact top-k recovered by the approximate search."""
    if len(queries) == 0:
        raise ValidationError("no queries")
    k = min(params.k, len(pool))
    total = 0.0
    for r in range(len(queries)):
        q = queries.vectors[r]
        truth = search_exact(pool, q, k).ids
        got = search(index, q, params, pool).ids
        total += len(np.intersect1d(truth, got)) / k
    return total / len(queries)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_index(index: IvfIndex, sink: BinaryIO) -> int:
    d, nlist = index.dimension, index.nlist
    parts = [
        INDEX_HEADER.pack(
            INDEX_MAGIC, INDEX_VERSION, METRICS.index(index.metric), d, nlist, index.ntotal
        ),
        _KMEANS_HEAD.pack(index.kmeans.iterations_run, index.kmeans.inertia),
        index.kmeans.centroids.astype("<f4").tobytes(),
        index.codec.vmin.astype("<f4").tobytes(),
        index.codec.vmax.astype("<f4").tobytes(),
        np.asarray(index.error_bound, dtype="<f8").tobytes(),
    ]
    for ids, codes in zip(index.list_ids, index.list_codes):
        parts.append(_U64.pack(len(ids)))
        parts.append(ids.astype("<i8").tobytes())
        parts.append(codes.astype(np.uint8).tobytes())
    written = 0
    for p in parts:
        sink.write(p)
        written += len(p)
    return written


class _Reader:
    def __init__(self, source: BinaryIO):
        self.source = source
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        raw = self.source.read(n)
        if len(raw) != n:
            raise FormatError(f"truncated {what}: expected {n} bytes, got {len(raw)}", self.offset + len(raw))
        self.offset += n
        return raw

    def array(self, dtype: str, count: int, what: str) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count, what), dtype=dt).copy()


def load_index(source: BinaryIO) -> IvfIndex:
    r = _Reader(source)
    head = r.source.read(INDEX_HEADER.size)
    if len(head) < 4 or head[:4] != INDEX_MAGIC:
        raise FormatError(f"bad magic {head[:4]!r}, expected {INDEX_MAGIC!r}", 0)
    if len(head) < INDEX_HEADER.size:
        raise FormatError("truncated index header", len(head))
    r.offset = INDEX_HEADER.size
    _, version, metric_tag, d, nlist, count = INDEX_HEADER.unpack(head)
    if version != INDEX_VERSION:
        raise FormatError(f"unsupported index version {version}", 4)
    if metric_tag >= len(METRICS):
        raise FormatError(f"bad metric tag {metric_tag}", 8)
    if d == 0 or nlist == 0:
        raise FormatError("dimension and nlist must be positive", 9)
    iterations, inertia = _KMEANS_HEAD.unpack(r.take(_KMEANS_HEAD.size, "k-means header"))
    centroids = r.array("<f4", nlist * d, "centroid block").reshape(nlist, d)
    vmin = r.array("<f4", d, "codec block")
    vmax = r.array("<f4", d, "codec block")
    bound = r.array("<f8", d, "codec block")
    list_ids, list_codes = [], []
    for _ in range(nlist):
        (n,) = _U64.unpack(r.take(_U64.size, "list header"))
        list_ids.append(r.array("<i8", n, "list ids").astype(np.int64))
        list_codes.append(r.array("u1", n * d, "list codes").reshape(n, d))
    total = sum(len(i) for i in list_ids)
    if total != count:
        raise FormatError(f"header count {count} != stored entries {total}", r.offset)
    kmeans = KMeansModel(centroids.astype(np.float32), inertia, iterations)
    return IvfIndex(kmeans, Sq8Codec(vmin, vmax), METRICS[metric_tag], list_ids, list_codes, bound)


def save_index_file(index: IvfIndex, path) -> int:
    with open(path, "wb") as fh:
        return save_index(index, fh)


def load_index_file(path) -> IvfIndex:
    with open(path, "rb") as fh:
        return load_index(fh)


def index_nbytes(index: IvfIndex) -> int:
    d, nlist = index.dimension, index.nlist
    return (
        INDEX_HEADER.size
        + _KMEANS_HEAD.size
        + 4 * nlist * d
        + 16 * d
        + 8 * nlist
        + index.ntotal * (8 + d)
    )

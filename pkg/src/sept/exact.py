"""Brute-force flat search. Ground truth for recall and for the selector oracle."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ValidationError
from .vecstore import EmbeddingPool


class SearchHit(NamedTuple):
    id: int
    score: float


@dataclass(eq=False)
class RankedList:
    """Hits in (score desc, id asc) order. Scores are float32; for l2 they are negated squared distances."""

    query_id: int
    ids: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def hits(self) -> list[SearchHit]:
        return [SearchHit(int(i), float(s)) for i, s in zip(self.ids, self.scores)]

    def same_as(self, other: "RankedList") -> bool:
        return (
            self.query_id == other.query_id
            and np.array_equal(self.ids, other.ids)
            and self.scores.tobytes() == other.scores.tobytes()
        )


def score_rows(vectors64: np.ndarray, query: np.ndarray, metric: str) -> np.ndarray:
    """Per-row similarity in double precision.

    Each row is reduced independently, so scoring a subset of rows gives
    bit-identical values to scoring the full matrix. The IVF rerank relies on this.
    """
    q = np.asarray(query, dtype=np.float64)
    if metric == "cosine":
        return np.einsum("ij,j->i", vectors64, q)
    diff = vectors64 - q
    return -np.einsum("ij,ij->i", diff, diff)


def top_k_order(ids: np.ndarray, scores: np.ndarray, k: int) -> np.ndarray:
    """Positions of the top-k entries under (score desc, id asc)."""
    n = len(scores)
    if k < n:
        part = np.argpartition(-scores, k - 1)[:k]
        cand = np.flatnonzero(scores >= scores[part].min())
    else:
        cand = np.arange(n)
    order = np.lexsort((ids[cand], -scores[cand]))
    return cand[order[:k]]


def check_query(pool: EmbeddingPool, query: np.ndarray) -> np.ndarray:
    query = np.asarray(query)
    if query.ndim != 1 or query.shape[0] != pool.dimension:
        raise ValidationError(f"query has shape {query.shape}, pool dimension is {pool.dimension}")
    if not np.isfinite(query).all():
        raise ValidationError("query has non-finite components")
    return query


def search_exact(pool: EmbeddingPool, query, k: int, query_id: int = -1) -> RankedList:
    query = check_query(pool, query)
    if not 1 <= k <= len(pool):
        raise ValidationError(f"k={k} outside [1, {len(pool)}]")
    scores = score_rows(pool.vectors64, query, pool.metric).astype(np.float32)
    top = top_k_order(pool.ids, scores, k)
    return RankedList(int(query_id), pool.ids[top], scores[top])


def search_exact_batch(
    pool: EmbeddingPool, queries: EmbeddingPool, k: int, workers: int = 1
) -> list[RankedList]:
    if queries.dimension != pool.dimension:
        raise ValidationError(
            f"query dimension {queries.dimension} != pool dimension {pool.dimension}"
        )
    pool.vectors64  # materialize the cache before fanning out

    def one(row: int) -> RankedList:
        return search_exact(pool, queries.vectors[row], k, int(queries.ids[row]))

    rows = range(len(queries))
    if workers <= 1:
        return [one(r) for r in rows]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(one, rows))

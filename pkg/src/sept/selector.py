"""Task-specific instance search.

Every task sample gets a similarity-ranked list over the unlabeled pool. The
lists are merged breadth-first: at depth ``j`` each task sample, in input
order, offers its ``j``-th candidate, which is admitted unless already
selected. Selection stops the moment the budget is met.

Ranked lists are materialized lazily (initial depth ``2 * ceil(k / |T|)``,
doubled on demand) since full pool-length lists are infeasible at scale.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, TextIO

import numpy as np

from .errors import BudgetError, ParseError, ValidationError
from .exact import RankedList, search_exact
from .ivf import IvfIndex, SearchParams, save_index, search
from .vecstore import EmbeddingPool, write_pool

log = logging.getLogger(__name__)

MANIFEST_MAGIC = "# sept-manifest v1"
COLUMNS = "# pool_id\tquery_id\trank\tscore"


@dataclass(frozen=True)
class SelectionBudget:
    k: int

    def __post_init__(self):
        if self.k < 0:
            raise ValidationError(f"budget must be non-negative, got {self.k}")


class ManifestEntry(NamedTuple):
    pool_id: int
    query_id: int
    rank: int  # 1-based position in the query's ranked list
    score: np.float32


@dataclass(eq=False)
class SelectionManifest:
    entries: list[ManifestEntry]
    budget: SelectionBudget
    digest: str = ""
    short: bool = False

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def pool_ids(self) -> np.ndarray:
        return np.array([e.pool_id for e in self.entries], dtype=np.int64)

    def same_entries(self, other: "SelectionManifest") -> bool:
        if len(self.entries) != len(other.entries):
            return False
        return all(
            a.pool_id == b.pool_id
            and a.query_id == b.query_id
            and a.rank == b.rank
            and np.float32(a.score).tobytes() == np.float32(b.score).tobytes()
            for a, b in zip(self.entries, other.entries)
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, SelectionManifest):
            return NotImplemented
        return (
            self.budget == other.budget
            and self.digest == other.digest
            and self.same_entries(other)
        )


def default_exclusion(queries: EmbeddingPool, pool: EmbeddingPool) -> set[int]:
    """Task samples that also sit in the pool: same id and bit-identical vector."""
    shared = np.intersect1d(queries.ids, pool.ids)
    if not len(shared):
        return set()
    qrow, prow = queries.index_of(), pool.index_of()
    out = {
        int(i)
        for i in shared
        if queries.vectors[qrow[int(i)]].tobytes() == pool.vectors[prow[int(i)]].tobytes()
    }
    if out:
        log.info("excluding %d task samples found in the pool", len(out))
    return out


class _HashSink:
    def __init__(self, h):
        self.h = h

    def write(self, b) -> int:
        self.h.update(b)
        return len(b)


def config_digest(
    queries: EmbeddingPool,
    pool: EmbeddingPool,
    index: IvfIndex | None,
    params: SearchParams | None,
    exclude: set[int],
) -> str:
    h = hashlib.sha256()
    sink = _HashSink(h)
    if index is None:
        h.update(b"exact\0")
    else:
        h.update(b"ivf\0")
        save_index(index, sink)
        h.update(f"nprobe={params.nprobe};rerank={int(params.rerank)}\0".encode())
    write_pool(pool, sink)
    write_pool(queries, sink)
    h.update(np.array(sorted(exclude), dtype="<i8").tobytes())
    return h.hexdigest()[:32]


class _Lists:
    """Lazily deepened ranked lists, one per task sample."""

    def __init__(self, queries, pool, index, params, exclude):
        self.queries = queries
        self.index = index
        self.params = params
        if exclude:
            keep = ~np.isin(pool.ids, np.fromiter(exclude, np.int64, len(exclude)))
            n_excluded = int(len(pool) - keep.sum())
            self.eligible = pool.subset(np.flatnonzero(keep)) if n_excluded else pool
        else:
            self.eligible = pool
            n_excluded = 0
        self.pool = pool
        self.exclude = exclude
        self.n_excluded = n_excluded
        n = len(queries)
        self.lists: list[RankedList | None] = [None] * n
        self.exhausted = [False] * n

    def materialize(self, i: int, depth: int) -> None:
        q = self.queries.vectors[i]
        qid = int(self.queries.ids[i])
        size = len(self.eligible)
        if self.index is None:
            depth = min(depth, size)
            self.lists[i] = search_exact(self.eligible, q, depth, qid) if depth else None
            self.exhausted[i] = depth >= size
            return
        want = depth + self.n_excluded
        p = SearchParams(self.params.nprobe, want, self.params.rerank)
        got = search(self.index, q, p, self.pool, qid)
        short = len(got) < want
        if self.n_excluded:
            mask = ~np.isin(got.ids, np.fromiter(self.exclude, np.int64, len(self.exclude)))
            got = RankedList(qid, got.ids[mask][:depth], got.scores[mask][:depth])
        self.lists[i] = got
        self.exhausted[i] = short or len(got) >= size


def select(
    queries: EmbeddingPool,
    pool: EmbeddingPool,
    budget: SelectionBudget | int,
    index: IvfIndex | None = None,
    params: SearchParams | None = None,
    exclude: set[int] | None = None,
    allow_short: bool = False,
) -> SelectionManifest:
    """Pick ``budget`` pool ids for the task samples in ``queries``.

    ``index=None`` ranks by exact search; otherwise ``params`` controls the IVF
    probe (its ``k`` is ignored). ``exclude`` defaults to task samples present
    in the pool.
    """
    if not isinstance(budget, SelectionBudget):
        budget = SelectionBudget(int(budget))
    k = budget.k
    if queries.dimension != pool.dimension:
        raise ValidationError(
            f"task dimension {queries.dimension} != pool dimension {pool.dimension}"
        )
    if index is not None:
        if index.dimension != pool.dimension:
            raise ValidationError(
                f"index dimension {index.dimension} != pool dimension {pool.dimension}"
            )
        params = params or SearchParams()
    if exclude is None:
        exclude = default_exclusion(queries, pool)
    exclude = {int(i) for i in exclude}
    digest = config_digest(queries, pool, index, params, exclude)
    if k == 0:
        return SelectionManifest([], budget, digest)
    if len(queries) == 0:
        raise ValidationError("no task samples to query with")

    lists = _Lists(queries, pool, index, params, exclude)
    eligible = len(lists.eligible)
    if k > eligible and not allow_short:
        raise BudgetError(
            f"budget {k} exceeds the {eligible} pool samples available after exclusion"
        )
    # the outer loop runs over list depth j < k
    cap = min(k, eligible)
    if cap == 0:
        return _finish([], budget, digest, allow_short)
    depth = min(cap, 2 * math.ceil(k / len(queries)))
    for i in range(len(queries)):
        lists.materialize(i, depth)

    entries: list[ManifestEntry] = []
    seen: set[int] = set()
    j = 0
    while j < cap and len(entries) < k:
        for i in range(len(queries)):
            lst = lists.lists[i]
            n = 0 if lst is None else len(lst)
            if j >= n and not lists.exhausted[i] and n < cap:
                old = lst
                lists.materialize(i, min(cap, max(2 * n, j + 1)))
                lst = lists.lists[i]
                if old is not None and not (
                    np.array_equal(old.ids, lst.ids[: len(old)])
                    and old.scores.tobytes() == lst.scores[: len(old)].tobytes()
                ):
                    # the deeper list reordered its head; replay from scratch
                    return _replay(queries, lists, cap, budget, digest, allow_short)
                n = len(lst)
            if j >= n:
                continue
            pid = int(lst.ids[j])
            if pid in seen:
                continue
            seen.add(pid)
            entries.append(ManifestEntry(pid, int(lst.query_id), j + 1, lst.scores[j]))
            if len(entries) >= k:
                break
        j += 1
    return _finish(entries, budget, digest, allow_short)


def _replay(queries, lists, cap, budget, digest, allow_short) -> SelectionManifest:
    """Plain merge over lists deepened to ``cap`` up front."""
    for i in range(len(queries)):
        lst = lists.lists[i]
        if not lists.exhausted[i] and (lst is None or len(lst) < cap):
            lists.materialize(i, cap)
    entries: list[ManifestEntry] = []
    seen: set[int] = set()
    for j in range(cap):
        for lst in lists.lists:
            if lst is None or j >= len(lst):
                continue
            pid = int(lst.ids[j])
            if pid not in seen:
                seen.add(pid)
                entries.append(ManifestEntry(pid, int(lst.query_id), j + 1, lst.scores[j]))
                if len(entries) >= budget.k:
                    return _finish(entries, budget, digest, allow_short)
    return _finish(entries, budget, digest, allow_short)


def _finish(entries, budget, digest, allow_short) -> SelectionManifest:
    short = len(entries) < budget.k
    if short:
        if not allow_short:
            raise BudgetError(
                f"only {len(entries)} distinct samples retrievable for budget {budget.k}"
            )
        log.warning("short selection: %d of %d requested", len(entries), budget.k)
    return SelectionManifest(entries, budget, digest, short)


def verify_manifest(
    manifest: SelectionManifest,
    queries: EmbeddingPool,
    pool: EmbeddingPool,
    budget: SelectionBudget | int | None = None,
    exclude: set[int] | None = None,
) -> bool:
    """Re-derive the selection with exact search and compare entry by entry."""
    known = set(pool.ids.tolist())
    dangling = [e.pool_id for e in manifest.entries if e.pool_id not in known]
    if dangling:
        raise ValidationError(f"manifest refers to ids missing from the pool: {dangling[:10]}")
    if budget is None:
        budget = manifest.budget
    try:
        ref = select(queries, pool, budget, exclude=exclude, allow_short=True)
    except BudgetError:
        return False
    return ref.same_entries(manifest)


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------


def format_score(score) -> str:
    return format(float(np.float32(score)), ".9g")


def write_manifest(manifest: SelectionManifest, sink: TextIO) -> None:
    sink.write(f"{MANIFEST_MAGIC}\n")
    sink.write(f"# budget={manifest.budget.k}\n")
    sink.write(f"# digest={manifest.digest}\n")
    sink.write(f"{COLUMNS}\n")
    for e in manifest.entries:
        sink.write(f"{e.pool_id}\t{e.query_id}\t{e.rank}\t{format_score(e.score)}\n")


def read_manifest(source: TextIO) -> SelectionManifest:
    header: dict[str, str] = {}
    entries: list[ManifestEntry] = []
    for lineno, raw in enumerate(source, 1):
        line = raw.rstrip("\n")
        if lineno == 1:
            if line != MANIFEST_MAGIC:
                raise ParseError(f"not a manifest (first line {line!r})", lineno)
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                header[key.strip()] = value.strip()
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ParseError(f"expected 4 tab-separated fields, got {len(parts)}", lineno)
        try:
            pid, qid, rank = int(parts[0]), int(parts[1]), int(parts[2])
            score = np.float32(float(parts[3]))
        except ValueError as exc:
            raise ParseError(f"bad field: {exc}", lineno) from None
        entries.append(ManifestEntry(pid, qid, rank, score))
    if "budget" not in header:
        raise ParseError("missing '# budget=' header line", None)
    try:
        budget = SelectionBudget(int(header["budget"]))
    except ValueError as exc:
        raise ParseError(f"bad budget: {exc}", None) from None
    if len({e.pool_id for e in entries}) != len(entries):
        raise ValidationError("manifest lists a pool id more than once")
    return SelectionManifest(entries, budget, header.get("digest", ""), len(entries) < budget.k)


def save_manifest(manifest: SelectionManifest, path) -> None:
    with open(path, "w", newline="\n") as fh:
        write_manifest(manifest, fh)


def load_manifest(path) -> SelectionManifest:
    with open(path) as fh:
        return read_manifest(fh)

"""Reference implementations used as test oracles.

These deliberately take the slow, literal route: full sorts over every pool
vector and a line-by-line transcription of the selection pseudocode.
"""

from __future__ import annotations

import numpy as np

from sept.exact import score_rows


def full_ranked_ids(pool, query) -> tuple[np.ndarray, np.ndarray]:
    """All pool ids sorted by (float32 score desc, id asc) via Python's sort."""
    scores = score_rows(pool.vectors64, query, pool.metric).astype(np.float32)
    order = sorted(range(len(pool)), key=lambda r: (-float(scores[r]), int(pool.ids[r])))
    return pool.ids[order], scores[order]


def reference_scores(pool, query) -> np.ndarray:
    """Independent double-precision scores via a plain Python loop."""
    q = [float(v) for v in query]
    out = []
    for row in pool.vectors:
        if pool.metric == "cosine":
            out.append(sum(float(a) * b for a, b in zip(row, q)))
        else:
            out.append(-sum((float(a) - b) ** 2 for a, b in zip(row, q)))
    return np.array(out)


def breadth_first_oracle(task, pool, K, exclude=frozenset()):
    """Breadth-first merge over fully materialized, fully sorted lists.

    Every task sample gets its complete ranking of the pool. Depth j runs from
    0 to K-1; at each depth the task samples take turns in input order and the
    j-th candidate is admitted unless already chosen. Stops at K entries.
    Excluded ids are dropped from the pool before ranking.
    """
    keep = [r for r in range(len(pool)) if int(pool.ids[r]) not in exclude]
    eligible = pool.subset(keep)
    ranked = []
    for i in range(len(task)):
        ids, scores = full_ranked_ids(eligible, task.vectors[i])
        ranked.append((ids, scores))
    chosen_rows = []
    chosen = set()
    if K == 0:
        return chosen_rows
    for j in range(K):
        for i in range(len(task)):
            ids, scores = ranked[i]
            if j >= len(ids):
                continue
            cand = int(ids[j])
            if cand not in chosen:
                chosen.add(cand)
                chosen_rows.append((cand, int(task.ids[i]), j + 1, scores[j]))
                if len(chosen_rows) >= K:
                    return chosen_rows
    return chosen_rows


def central_difference(f, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    g = np.zeros_like(x, dtype=np.float64)
    for i in range(len(x)):
        e = np.zeros_like(x, dtype=np.float64)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2 * step)
    return g

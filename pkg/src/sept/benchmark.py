"""Paired-seed synthetic benchmark: retrieval-selected subsets vs random subsets.

The task is a labeled Gaussian mixture. The unlabeled pool mixes fresh draws
from the task mixture with ``distractor_factor`` times as many draws from an
unrelated mixture. For each seed both a selector manifest and a size-matched
random subset are scored by proxy A-distance to the task set and by the
nearest-centroid downstream proxy.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, TextIO

import numpy as np

from .config import parse_kv, typed_fields
from .discrepancy import (
    MixtureSpec,
    estimate_discrepancy,
    eval_downstream_proxy,
    generate_mixture_pool,
    random_unit_means,
)
from .ivf import SearchParams, build_index
from .selector import select
from .vecstore import EmbeddingPool

REPORT_HEADER = "seed\tmethod\tproxy_a_distance\taccuracy"

# id ranges keep the generated sets disjoint
_TASK_IDS = 1_000_000_000
_TEST_IDS = 2_000_000_000
_DISTRACTOR_IDS = 500_000_000


@dataclass(frozen=True)
class BenchmarkConfig:
    dimension: int = 32
    task_components: int = 10
    distractor_components: int = 10
    stddev: float = 0.3
    task_per_class: int = 20
    test_per_class: int = 100
    pool_task_samples: int = 2000
    distractor_factor: int = 5
    budget: int = 1000
    nlist: int = 0  # 0 selects by exact search
    nprobe: int = 8
    rerank: bool = True
    pad_epochs: int = 200
    pad_learning_rate: float = 1.0
    pad_train_fraction: float = 0.5

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "BenchmarkConfig":
        return cls(**typed_fields(cls, parse_kv(text, source), source))

    @classmethod
    def from_file(cls, path) -> "BenchmarkConfig":
        return cls.from_text(Path(path).read_text(), str(path))


@dataclass(eq=False)
class BenchmarkData:
    pool: EmbeddingPool
    task: EmbeddingPool
    task_labels: np.ndarray
    test: EmbeddingPool
    test_labels: np.ndarray


class BenchmarkRow(NamedTuple):
    seed: int
    method: str
    proxy_a_distance: float
    accuracy: float


def generate_benchmark(cfg: BenchmarkConfig, seed: int) -> BenchmarkData:
    ss = np.random.SeedSequence(seed)
    s_means, s_dmeans, s_task, s_test, s_pool, s_dist = (
        int(c.generate_state(1)[0]) for c in ss.spawn(6)
    )
    task_mix = random_unit_means(cfg.task_components, cfg.dimension, s_means)
    dist_mix = random_unit_means(cfg.distractor_components, cfg.dimension, s_dmeans)

    def draw(means, n, mix_seed, id_start, balanced: bool):
        if balanced:
            # equal class sizes keep every class present in the labeled sets
            per = n // len(means)
            pools, labels = [], []
            for c in range(len(means)):
                p, _ = generate_mixture_pool(
                    MixtureSpec(means[c : c + 1], cfg.stddev, seed=mix_seed + c),
                    per,
                    id_start=id_start + c * per,
                )
                pools.append(p)
                labels.append(np.full(per, c))
            ids = np.concatenate([p.ids for p in pools])
            vecs = np.vstack([p.vectors for p in pools])
            return EmbeddingPool(ids, vecs), np.concatenate(labels)
        return generate_mixture_pool(MixtureSpec(means, cfg.stddev, seed=mix_seed), n, id_start=id_start)

    k = cfg.task_components
    task, task_y = draw(task_mix, cfg.task_per_class * k, s_task, _TASK_IDS, True)
    test, test_y = draw(task_mix, cfg.test_per_class * k, s_test, _TEST_IDS, True)
    in_dist, _ = draw(task_mix, cfg.pool_task_samples, s_pool, 0, False)
    n_dist = cfg.distractor_factor * cfg.pool_task_samples
    distract, _ = draw(dist_mix, n_dist, s_dist, _DISTRACTOR_IDS, False)
    pool = EmbeddingPool(
        np.concatenate([in_dist.ids, distract.ids]),
        np.vstack([in_dist.vectors, distract.vectors]),
    )
    return BenchmarkData(pool, task, task_y, test, test_y)


def score_subset(
    cfg: BenchmarkConfig, data: BenchmarkData, subset: EmbeddingPool, seed: int
) -> tuple[float, float]:
    est = estimate_discrepancy(
        subset,
        data.task,
        cfg.pad_train_fraction,
        cfg.pad_epochs,
        cfg.pad_learning_rate,
        seed,
    )
    acc = eval_downstream_proxy(subset, data.task, data.task_labels, data.test, data.test_labels)
    return est.proxy_a_distance, acc


def random_subset(pool: EmbeddingPool, size: int, seed: int) -> EmbeddingPool:
    rows = np.sort(np.random.default_rng(seed).choice(len(pool), size, replace=False))
    return pool.subset(rows)


def rows_for_ids(pool: EmbeddingPool, ids: Iterable[int]) -> np.ndarray:
    lookup = pool.index_of()
    return np.array([lookup[int(i)] for i in ids], dtype=np.intp)


def run_seed(cfg: BenchmarkConfig, seed: int) -> list[BenchmarkRow]:
    data = generate_benchmark(cfg, seed)
    if cfg.nlist:
        index = build_index(data.pool, cfg.nlist, seed)
        params = SearchParams(cfg.nprobe, 1, cfg.rerank)
        manifest = select(data.task, data.pool, cfg.budget, index, params)
    else:
        manifest = select(data.task, data.pool, cfg.budget)
    chosen = data.pool.subset(rows_for_ids(data.pool, manifest.pool_ids))
    baseline = random_subset(data.pool, len(chosen), seed)
    pad_s, acc_s = score_subset(cfg, data, chosen, seed)
    pad_r, acc_r = score_subset(cfg, data, baseline, seed)
    return [BenchmarkRow(seed, "sept", pad_s, acc_s), BenchmarkRow(seed, "random", pad_r, acc_r)]


def run_benchmark(cfg: BenchmarkConfig, seeds: Iterable[int]) -> list[BenchmarkRow]:
    rows: list[BenchmarkRow] = []
    for s in seeds:
        rows.extend(run_seed(cfg, s))
    return rows


def write_report(rows: Iterable[BenchmarkRow], sink: TextIO) -> None:
    sink.write(REPORT_HEADER + "\n")
    for r in rows:
        sink.write(f"{r.seed}\t{r.method}\t{r.proxy_a_distance:.6f}\t{r.accuracy:.6f}\n")


def summarize(rows: list[BenchmarkRow]) -> dict[str, float]:
    """Paired comparison of sept vs random rows."""
    by_seed: dict[int, dict[str, BenchmarkRow]] = {}
    for r in rows:
        by_seed.setdefault(r.seed, {})[r.method] = r
    pairs = [(v["sept"], v["random"]) for v in by_seed.values() if {"sept", "random"} <= v.keys()]
    if not pairs:
        return {"pairs": 0}
    return {
        "pairs": len(pairs),
        "pad_win_fraction": float(np.mean([s.proxy_a_distance < r.proxy_a_distance for s, r in pairs])),
        "mean_pad_sept": float(np.mean([s.proxy_a_distance for s, _ in pairs])),
        "mean_pad_random": float(np.mean([r.proxy_a_distance for _, r in pairs])),
        "mean_acc_sept": float(np.mean([s.accuracy for s, _ in pairs])),
        "mean_acc_random": float(np.mean([r.accuracy for _, r in pairs])),
    }


def config_as_text(cfg: BenchmarkConfig) -> str:
    return "".join(f"{f.name}={getattr(cfg, f.name)}\n" for f in dataclasses.fields(cfg))

"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are echoed again in the terminal summary (see conftest.py), so a
plain ``pytest tests/test_acceptance.py`` shows all nine verdicts.
"""

import io
import time

import numpy as np
import pytest

from sept.benchmark import BenchmarkConfig, run_benchmark, summarize
from sept.cli import main
from sept.discrepancy import classifier_gradient, logistic_loss
from sept.exact import search_exact
from sept.ivf import (
    SearchParams,
    build,
    build_index,
    eval_recall,
    fit_codec,
    load_index,
    save_index,
    search,
    train,
)
from sept.selector import read_manifest, select, write_manifest
from sept.vecstore import EmbeddingPool, normalize, pool_bytes, read_pool

from conftest import ACCEPTANCE_KEY, BIG_COMPONENTS, BIG_D, BIG_N, BIG_NLIST, BIG_STDDEV, make_pool, mixture_pool
from oracles import breadth_first_oracle, central_difference


@pytest.fixture
def verdict(request):
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        lines.append(line)
        return ok

    return record



def random_instance(rng, max_n, max_d, max_t, metric=None):
    n = int(rng.integers(1, max_n + 1))
    d = int(rng.integers(1, max_d + 1))
    t = int(rng.integers(1, max_t + 1))
    metric = metric or str(rng.choice(["cosine", "l2"]))
    seed = int(rng.integers(2**31))
    pool = make_pool(n, d, seed=seed, metric=metric, shuffle_ids=True)
    if rng.random() < 0.25:
        # coarse grid values force exact score ties
        pool = EmbeddingPool(pool.ids, np.round(pool.vectors * 2) / 2 + 0.01, metric)
        if metric == "cosine":
            pool = normalize(pool)
    task = make_pool(t, d, seed=seed + 1, metric=metric, id_start=10**7)
    return pool, task


def test_criterion_1_oracle_equivalence(verdict):
    rng = np.random.default_rng(20240101)
    start = time.perf_counter()
    select_time = 0.0
    failures = []
    for inst in range(200):
        pool, task = random_instance(rng, 10_000, 64, 100)
        exclude = frozenset()
        if rng.random() < 0.25:
            # some task samples also sit in the pool and are excluded by default
            rows = rng.choice(len(pool), min(len(pool), len(task)), replace=False)
            task = pool.subset(np.sort(rows))
            exclude = frozenset(task.ids.tolist())
        k = int(rng.integers(0, min(1000, len(pool) - len(exclude)) + 1))
        t0 = time.perf_counter()
        got = select(task, pool, k)
        select_time += time.perf_counter() - t0
        want = breadth_first_oracle(task, pool, k, exclude)
        got_rows = [(e.pool_id, e.query_id, e.rank, np.float32(e.score).tobytes()) for e in got.entries]
        want_rows = [(p, q, r, np.float32(s).tobytes()) for p, q, r, s in want]
        if got_rows != want_rows:
            failures.append(inst)
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 120
    verdict(1, ok, f"200 instances, mismatches={len(failures)}, total={elapsed:.1f}s (select {select_time:.1f}s), limit 120s")
    assert ok, failures[:10]


def test_criterion_2_exactness_degeneracy(verdict):
    rng = np.random.default_rng(2)
    worst = 0.0
    bad = []
    for inst in range(50):
        pool, task = random_instance(rng, 3000, 32, 1)
        nlist = int(rng.integers(1, min(64, len(pool)) + 1))
        index = build_index(pool, nlist, seed=inst)
        k = int(rng.integers(1, min(100, len(pool)) + 1))
        q = task.vectors[0]
        got = search(index, q, SearchParams(nlist, k, True), pool)
        ref = search_exact(pool, q, k)
        if got.ids.tolist() != ref.ids.tolist():
            bad.append(inst)
            continue
        worst = max(worst, float(np.abs(got.scores.astype(np.float64) - ref.scores).max()))
    ok = not bad and worst <= 1e-6
    verdict(2, ok, f"50 instances, order mismatches={len(bad)}, max score diff={worst:.2e} (tol 1e-6)")
    assert ok


def test_criterion_3_ann_recall(verdict, big_queries):
    start = time.perf_counter()
    pool = mixture_pool(BIG_N, BIG_D, BIG_COMPONENTS, BIG_STDDEV, seed=7)
    index = build(pool, train(pool, BIG_NLIST, max_iters=25, seed=0), fit_codec(pool))
    recalls = {p: eval_recall(index, big_queries, pool, SearchParams(p, 10, True)) for p in (1, 4, 16, 64)}
    elapsed = time.perf_counter() - start
    values = [recalls[p] for p in (1, 4, 16, 64)]
    monotone = all(a <= b for a, b in zip(values, values[1:]))
    ok = recalls[16] >= 0.90 and monotone and elapsed < 300
    sweep = ", ".join(f"{p}:{r:.3f}" for p, r in recalls.items())
    verdict(3, ok, f"recall@10 by nprobe {{{sweep}}}, monotone={monotone}, {elapsed:.1f}s (limit 300s)")
    assert ok


def test_criterion_4_quantization_bound(verdict):
    pool = make_pool(10_000, 64, seed=4, metric="l2")
    codec = fit_codec(pool)
    recon = codec.decode(codec.encode(pool.vectors))
    err = np.abs(recon - pool.vectors.astype(np.float64))
    bound = (codec.vmax.astype(np.float64) - codec.vmin) / 255 / 2 + 1e-7
    slack = float((bound - err).min())
    ok = bool(np.all(err <= bound))
    verdict(4, ok, f"10000x64 exhaustive scan, max err={err.max():.3e}, min slack to bound={slack:.3e}")
    assert ok


def test_criterion_5_kmeans(verdict):
    rises = 0
    for seed in range(20):
        pool = mixture_pool(2000, 16, 8, 0.3, seed=100 + seed)
        km = train(pool, 32, max_iters=30, seed=seed)
        rises += int(np.sum(np.diff(km.inertia_history) > 0))
    small = make_pool(64, 8, seed=5)
    zero = train(small, 64, seed=1).inertia
    ok = rises == 0 and zero == 0.0
    verdict(5, ok, f"20 runs, inertia increases={rises}; k=N inertia={zero}")
    assert ok


def test_criterion_6_gradient(verdict):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        n, d = int(rng.integers(1, 50)), int(rng.integers(1, 20))
        x = rng.standard_normal((n, d)) * rng.uniform(0.1, 3)
        y = rng.integers(0, 2, n).astype(float)
        p = rng.standard_normal(d + 1)
        num = central_difference(lambda v: logistic_loss(v, x, y), p, step=1e-4)
        ana = classifier_gradient(p, x, y)
        rel = np.linalg.norm(num - ana) / max(np.linalg.norm(ana), 1e-12)
        worst = max(worst, rel)
    ok = worst <= 1e-5
    verdict(6, ok, f"100 instances, max relative error={worst:.2e} (tol 1e-5)")
    assert ok


def test_criterion_7_benchmark_direction(verdict):
    start = time.perf_counter()
    rows = run_benchmark(BenchmarkConfig(), range(20))
    elapsed = time.perf_counter() - start
    s = summarize(rows)
    ok = (
        s["pairs"] == 20
        and s["pad_win_fraction"] >= 0.95
        and s["mean_acc_sept"] >= s["mean_acc_random"]
        and elapsed < 600
    )
    verdict(
        7,
        ok,
        f"PAD wins={s['pad_win_fraction']:.2f} (need 0.95), mean PAD sept={s['mean_pad_sept']:.3f} "
        f"random={s['mean_pad_random']:.3f}, mean acc sept={s['mean_acc_sept']:.4f} "
        f"random={s['mean_acc_random']:.4f}, {elapsed:.1f}s",
    )
    assert ok


def _pipeline(d):
    d.mkdir()
    (d / "mix.cfg").write_text("dimension=16\ncomponents=5\nstddev=0.2\n")
    (d / "bench.cfg").write_text("dimension=16\npool_task_samples=400\ntask_per_class=10\ntest_per_class=20\nbudget=200\n")
    steps = [
        ["ingest", "--synth", d / "mix.cfg", "--n", 3000, "--seed", 11, "--out", d / "pool.sept", "--labels-out", d / "pool.labels.tsv"],
        ["synth", "--config", d / "bench.cfg", "--seed", 12, "--out-dir", d / "bench"],
        ["index-build", "--pool", d / "bench" / "pool.sept", "--nlist", 32, "--seed", 13, "--out", d / "bench.idx"],
        ["index-build", "--pool", d / "pool.sept", "--nlist", 16, "--seed", 14, "--out", d / "pool.idx"],
        ["select", "--task", d / "bench" / "task.sept", "--pool", d / "bench" / "pool.sept", "--index", d / "bench.idx",
         "--nprobe", 8, "--rerank", "--k", 200, "--out", d / "ivf.manifest"],
        ["select", "--task", d / "bench" / "task.sept", "--pool", d / "bench" / "pool.sept", "--exact", "--k", 200, "--out", d / "exact.manifest"],
        ["eval", "--manifest", d / "ivf.manifest", "--pool", d / "bench" / "pool.sept", "--task", d / "bench" / "task.sept",
         "--task-labels", d / "bench" / "task.labels.tsv", "--test", d / "bench" / "test.sept",
         "--test-labels", d / "bench" / "test.labels.tsv", "--seeds", 2, "--seed", 15, "--out", d / "manifest.report"],
        ["eval", "--benchmark", d / "bench.cfg", "--seeds", 2, "--seed", 16, "--out", d / "bench.report"],
    ]
    for argv in steps:
        assert main([str(a) for a in argv]) == 0, argv
    return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_criterion_8_reproducibility(verdict, tmp_path, capsys):
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    capsys.readouterr()
    differing = sorted(str(k) for k in a if a[k] != b.get(k))
    kinds = {".sept", ".idx", ".manifest", ".report"}
    covered = {k.suffix for k in a} & kinds
    ok = a.keys() == b.keys() and not differing and covered == kinds
    verdict(8, ok, f"{len(a)} files from two seeded CLI runs, differing={differing or 'none'}")
    assert ok


def test_criterion_9_round_trips(verdict):
    rng = np.random.default_rng(9)
    broken = []
    for inst in range(20):
        pool, task = random_instance(rng, 3000, 48, 20)
        raw = pool_bytes(pool)
        if pool_bytes(read_pool(io.BytesIO(raw))) != raw:
            broken.append((inst, "pool"))
        nlist = int(rng.integers(1, min(32, len(pool)) + 1))
        buf = io.BytesIO()
        save_index(build_index(pool, nlist, seed=inst), buf)
        again = io.BytesIO()
        save_index(load_index(io.BytesIO(buf.getvalue())), again)
        if again.getvalue() != buf.getvalue():
            broken.append((inst, "index"))
        k = int(rng.integers(0, len(pool) + 1))
        text = io.StringIO()
        write_manifest(select(task, pool, k), text)
        back = io.StringIO()
        write_manifest(read_manifest(io.StringIO(text.getvalue())), back)
        if back.getvalue() != text.getvalue():
            broken.append((inst, "manifest"))
    ok = not broken
    verdict(9, ok, f"20 instances x (pool, index, manifest), byte mismatches={broken or 'none'}")
    assert ok

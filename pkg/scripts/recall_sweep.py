"""Recall@k of the IVF+SQ8 index over an nprobe sweep on a seeded mixture pool.

Defaults reproduce the 100k x 64, nlist=256 setting used by the test suite.
Reports recall with and without rerank plus per-query search time.
"""

import argparse
import sys
import time

from sept.discrepancy import MixtureSpec, generate_mixture_pool, random_unit_means
from sept.ivf import SearchParams, build, eval_recall, fit_codec, train


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--dimension", type=int, default=64)
    ap.add_argument("--components", type=int, default=100)
    ap.add_argument("--stddev", type=float, default=0.0625)
    ap.add_argument("--queries", type=int, default=200)
    ap.add_argument("--nlist", type=int, default=256)
    ap.add_argument("--nprobe", default="1,4,16,64")
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    means = random_unit_means(args.components, args.dimension, args.seed)
    pool, _ = generate_mixture_pool(MixtureSpec(means, args.stddev, seed=args.seed + 1), args.n)
    queries, _ = generate_mixture_pool(
        MixtureSpec(means, args.stddev, seed=args.seed + 2), args.queries, id_start=10**9
    )

    t0 = time.perf_counter()
    kmeans = train(pool, args.nlist, seed=0)
    index = build(pool, kmeans, fit_codec(pool))
    print(f"# build_seconds={time.perf_counter() - t0:.1f}\titerations={kmeans.iterations_run}", file=sys.stderr)

    print("nprobe\tk\trerank\trecall\tms_per_query")
    for p in (int(v) for v in args.nprobe.split(",")):
        for rerank in (False, True):
            t0 = time.perf_counter()
            r = eval_recall(index, queries, pool, SearchParams(p, args.k, rerank))
            ms = 1000 * (time.perf_counter() - t0) / len(queries)
            print(f"{p}\t{args.k}\t{int(rerank)}\t{r:.4f}\t{ms:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Run the paired-seed synthetic benchmark and print a summary.

    python scripts/run_benchmark.py --seeds 20 --out report.tsv
    python scripts/run_benchmark.py --config bench.cfg --nlist 64 --nprobe 8
"""

import argparse
import dataclasses
import sys
import time

from sept.benchmark import BenchmarkConfig, run_benchmark, summarize, write_report


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", help="key=value file overriding BenchmarkConfig defaults")
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0, help="first seed")
    ap.add_argument("--nlist", type=int, help="select through an IVF index with this many cells")
    ap.add_argument("--nprobe", type=int)
    ap.add_argument("--out", help="report TSV path (default: stdout)")
    args = ap.parse_args()

    cfg = BenchmarkConfig.from_file(args.config) if args.config else BenchmarkConfig()
    overrides = {k: v for k, v in (("nlist", args.nlist), ("nprobe", args.nprobe)) if v is not None}
    cfg = dataclasses.replace(cfg, **overrides)

    start = time.perf_counter()
    rows = run_benchmark(cfg, range(args.seed, args.seed + args.seeds))
    elapsed = time.perf_counter() - start

    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            write_report(rows, fh)
    else:
        write_report(rows, sys.stdout)
    for key, value in summarize(rows).items():
        print(f"# {key}={value:.4f}" if isinstance(value, float) else f"# {key}={value}", file=sys.stderr)
    print(f"# seconds={elapsed:.1f}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())

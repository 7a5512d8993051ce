"""Command-line entry point: ``sept <verb> ...``.

Errors go to stderr as ``ERROR <code>: <message>`` with a nonzero exit.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import benchmark as bench
from .config import RunConfig, mixture_from_file
from .discrepancy import estimate_discrepancy, eval_downstream_proxy, generate_mixture_pool
from .errors import ParseError, SeptError, ValidationError
from .exact import search_exact
from .ivf import (
    INDEX_MAGIC,
    SearchParams,
    build,
    eval_recall,
    fit_codec,
    load_index_file,
    save_index_file,
    search,
    train,
)
from .selector import (
    MANIFEST_MAGIC,
    format_score,
    load_manifest,
    save_manifest,
    select,
    verify_manifest,
)
from .vecstore import (
    MAGIC,
    EmbeddingPool,
    labels_for,
    load_pool,
    normalize,
    read_labels,
    save_pool,
    write_labels,
)

EXIT_ERROR = 2
EXIT_MISMATCH = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"ERROR usage: {message}\n")
        raise SystemExit(EXIT_ERROR)


def _out(path: str | None):
    return open(path, "w", newline="\n") if path else contextlib.nullcontext(sys.stdout)


# ---------------------------------------------------------------------------
# ingest / info
# ---------------------------------------------------------------------------


def read_tsv_matrix(path) -> tuple[np.ndarray, np.ndarray]:
    """Rows of ``id<TAB>v1<TAB>...<TAB>vD``; ``#`` lines are comments."""
    ids, rows = [], []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise ParseError("expected an id and at least one value", lineno, str(path))
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise ParseError(
                    f"ragged row: {len(parts) - 1} values, expected {width - 1}", lineno, str(path)
                )
            try:
                ids.append(int(parts[0]))
                rows.append([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise ParseError(str(exc), lineno, str(path)) from None
    if not rows:
        raise ParseError("no data rows", None, str(path))
    return np.array(ids, dtype=np.int64), np.array(rows)


def _print_pool_stats(pool: EmbeddingPool) -> None:
    print(f"count={len(pool)}\tdimension={pool.dimension}\tmetric={pool.metric}")


def cmd_ingest(args) -> int:
    labels = None
    if args.synth:
        if args.n is None:
            raise ValidationError("--synth needs --n")
        spec, metric = mixture_from_file(args.synth, args.seed)
        if args.metric:
            metric = args.metric
        pool, labels = generate_mixture_pool(spec, args.n, metric, args.id_start)
    else:
        metric = args.metric or "cosine"
        if args.tsv:
            ids, x = read_tsv_matrix(args.tsv)
        else:
            x = np.load(args.npy)
            if x.ndim != 2:
                raise ValidationError(f"{args.npy}: expected a 2-d matrix, got shape {x.shape}")
            ids = np.arange(args.id_start, args.id_start + len(x))
        pool = EmbeddingPool(ids, x, metric)
        if metric == "cosine":
            pool = normalize(pool)
    save_pool(pool, args.out)
    if args.labels_out:
        if labels is None:
            raise ValidationError("--labels-out only applies to --synth")
        write_labels(pool.ids, labels, args.labels_out)
    _print_pool_stats(pool)
    return 0


def cmd_info(args) -> int:
    path = Path(args.file)
    with open(path, "rb") as fh:
        head = fh.read(len(MANIFEST_MAGIC))
    if head[:4] == MAGIC:
        _print_pool_stats(load_pool(path))
    elif head[:4] == INDEX_MAGIC:
        index = load_index_file(path)
        sizes = index.list_sizes
        print(
            f"count={index.ntotal}\tdimension={index.dimension}\tmetric={index.metric}"
            f"\tnlist={index.nlist}\tinertia={index.kmeans.inertia:.6f}"
            f"\titerations={index.kmeans.iterations_run}"
            f"\tlist_min={sizes.min()}\tlist_max={sizes.max()}\tempty_lists={(sizes == 0).sum()}"
        )
    elif head == MANIFEST_MAGIC.encode():
        m = load_manifest(path)
        print(f"entries={len(m)}\tbudget={m.budget.k}\tdigest={m.digest}")
    else:
        raise ValidationError(f"{path}: unrecognized file type")
    return 0


# ---------------------------------------------------------------------------
# index
# ---------------------------------------------------------------------------


def _run_config(args) -> RunConfig:
    cfg = RunConfig(
        nlist=getattr(args, "nlist", None),
        nprobe=getattr(args, "nprobe", None),
        seed=getattr(args, "seed", None),
        preset=getattr(args, "preset", None),
    ).apply_preset()
    return cfg


def _check_dimension(cfg: RunConfig, pool: EmbeddingPool) -> None:
    if cfg.dimension is not None and cfg.dimension != pool.dimension:
        raise ValidationError(
            f"preset {cfg.preset!r} expects dimension {cfg.dimension}, pool has {pool.dimension}"
        )


def size_histogram(sizes: np.ndarray, bins: int = 8) -> list[tuple[int, int, int, int]]:
    """(lo, hi, lists, vectors) rows over inclusive list-size ranges."""
    lo, hi = int(sizes.min()), int(sizes.max())
    edges = np.unique(np.linspace(lo, hi + 1, bins + 1).astype(np.int64))
    rows = []
    for a, b in zip(edges[:-1], edges[1:]):
        mask = (sizes >= a) & (sizes < b)
        rows.append((int(a), int(b - 1), int(mask.sum()), int(sizes[mask].sum())))
    return rows


def cmd_index_build(args) -> int:
    cfg = _run_config(args)
    if cfg.nlist is None:
        raise ValidationError("index-build needs --nlist or --preset")
    pool = load_pool(args.pool)
    _check_dimension(cfg, pool)
    kmeans = train(pool, cfg.nlist, args.max_iters, args.seed)
    index = build(pool, kmeans, fit_codec(pool))
    save_index_file(index, args.out)
    sizes = index.list_sizes
    print(f"inertia={kmeans.inertia:.6f}\titerations={kmeans.iterations_run}\tnlist={index.nlist}")
    print(f"lists\tmin={sizes.min()}\tmax={sizes.max()}\tmean={sizes.mean():.2f}\tempty={(sizes == 0).sum()}")
    print("size_lo\tsize_hi\tlists\tvectors")
    for row in size_histogram(sizes):
        print("\t".join(map(str, row)))
    return 0


def _load_index_for(args, pool: EmbeddingPool):
    index = load_index_file(args.index)
    if index.dimension != pool.dimension:
        raise ValidationError(
            f"index dimension {index.dimension} != pool dimension {pool.dimension}"
        )
    return index


def cmd_query(args) -> int:
    pool = load_pool(args.pool)
    queries = load_pool(args.queries)
    k = min(args.k, len(pool))
    with _out(args.out) as out:
        out.write("query_id\trank\tpool_id\tscore\n")
        if args.exact or not args.index:
            results = [search_exact(pool, queries.vectors[r], k, int(queries.ids[r])) for r in range(len(queries))]
        else:
            cfg = _run_config(args)
            index = _load_index_for(args, pool)
            params = SearchParams(cfg.nprobe or 1, k, args.rerank)
            results = [
                search(index, queries.vectors[r], params, pool, int(queries.ids[r]))
                for r in range(len(queries))
            ]
        for res in results:
            for rank, (pid, score) in enumerate(zip(res.ids, res.scores), 1):
                out.write(f"{res.query_id}\t{rank}\t{pid}\t{format_score(score)}\n")
    return 0


def cmd_select(args) -> int:
    pool = load_pool(args.pool)
    task = load_pool(args.task)
    exclude = None
    if args.exclude:
        exclude = {
            int(line.split()[0])
            for line in Path(args.exclude).read_text().splitlines()
            if line.strip() and not line.startswith("#")
        }
    if args.exact:
        manifest = select(task, pool, args.k, exclude=exclude, allow_short=args.allow_short)
    else:
        if not args.index:
            raise ValidationError("select needs --index or --exact")
        cfg = _run_config(args)
        index = _load_index_for(args, pool)
        params = SearchParams(cfg.nprobe or 1, 1, args.rerank)
        manifest = select(task, pool, args.k, index, params, exclude, args.allow_short)
    save_manifest(manifest, args.out)
    print(f"selected={len(manifest)}\tbudget={args.k}\tdigest={manifest.digest}")
    return 0


def cmd_verify(args) -> int:
    manifest = load_manifest(args.manifest)
    ok = verify_manifest(manifest, load_pool(args.task), load_pool(args.pool))
    if not ok:
        sys.stderr.write(f"ERROR mismatch: {args.manifest} differs from the exact re-derivation\n")
        return EXIT_MISMATCH
    print(f"verified\tentries={len(manifest)}")
    return 0


def cmd_eval_recall(args) -> int:
    pool = load_pool(args.pool)
    queries = load_pool(args.queries)
    index = _load_index_for(args, pool)
    try:
        probes = [int(v) for v in args.nprobe.split(",")]
    except ValueError:
        raise ValidationError(f"bad --nprobe list {args.nprobe!r}") from None
    with _out(args.out) as out:
        out.write("nprobe\tk\trerank\trecall\n")
        for p in probes:
            r = eval_recall(index, queries, pool, SearchParams(p, args.k, args.rerank))
            out.write(f"{p}\t{args.k}\t{int(args.rerank)}\t{r:.6f}\n")
    return 0


def cmd_eval(args) -> int:
    seeds = range(args.seed, args.seed + args.seeds)
    if args.benchmark:
        cfg = bench.BenchmarkConfig.from_file(args.benchmark)
        rows = bench.run_benchmark(cfg, seeds)
    else:
        missing = [f for f in ("manifest", "pool", "task", "test") if not getattr(args, f)]
        if missing:
            raise ValidationError(f"eval needs --benchmark or --{', --'.join(missing)}")
        if not (args.task_labels and args.test_labels):
            raise ValidationError("downstream eval needs --task-labels and --test-labels")
        pool = load_pool(args.pool)
        task = load_pool(args.task)
        test = load_pool(args.test)
        task_y = labels_for(task, read_labels(args.task_labels))
        test_y = labels_for(test, read_labels(args.test_labels))
        manifest = load_manifest(args.manifest)
        lookup = pool.index_of()
        dangling = [e.pool_id for e in manifest.entries if e.pool_id not in lookup]
        if dangling:
            raise ValidationError(f"manifest ids missing from pool: {dangling[:10]}")
        chosen = pool.subset([lookup[e.pool_id] for e in manifest.entries])
        rows = []
        for s in seeds:
            baseline = bench.random_subset(pool, len(chosen), s)
            for method, subset in (("sept", chosen), ("random", baseline)):
                est = estimate_discrepancy(subset, task, args.train_fraction, args.epochs, args.lr, s)
                acc = eval_downstream_proxy(subset, task, task_y, test, test_y)
                rows.append(bench.BenchmarkRow(s, method, est.proxy_a_distance, acc))
    with _out(args.out) as out:
        bench.write_report(rows, out)
    return 0


def cmd_synth(args) -> int:
    cfg = bench.BenchmarkConfig.from_file(args.config) if args.config else bench.BenchmarkConfig()
    data = bench.generate_benchmark(cfg, args.seed)
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    save_pool(data.pool, d / "pool.sept")
    save_pool(data.task, d / "task.sept")
    save_pool(data.test, d / "test.sept")
    write_labels(data.task.ids, data.task_labels, d / "task.labels.tsv")
    write_labels(data.test.ids, data.test_labels, d / "test.labels.tsv")
    print(f"pool={len(data.pool)}\ttask={len(data.task)}\ttest={len(data.test)}\tdimension={cfg.dimension}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sept", description="Task-specific data selection over embedding pools.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="write a pool file from TSV, .npy, or a synthetic mixture")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--tsv")
    src.add_argument("--npy")
    src.add_argument("--synth", metavar="CFG")
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--metric", choices=["cosine", "l2"])
    s.add_argument("--id-start", type=int, default=0)
    s.add_argument("--labels-out")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest, stochastic=lambda a: bool(a.synth))

    s = sub.add_parser("info", help="print stats for a pool, index, or manifest file")
    s.add_argument("file")
    s.set_defaults(func=cmd_info)

    s = sub.add_parser("index-build", help="train k-means + SQ8 and write an index file")
    s.add_argument("--pool", required=True)
    s.add_argument("--nlist", type=int)
    s.add_argument("--max-iters", type=int, default=25)
    s.add_argument("--seed", type=int)
    s.add_argument("--preset", choices=["paper-default"])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_index_build, stochastic=lambda a: True)

    s = sub.add_parser("query", help="ranked lists for each query")
    s.add_argument("--pool", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--index")
    s.add_argument("--exact", action="store_true")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--nprobe", type=int)
    s.add_argument("--preset", choices=["paper-default"])
    s.add_argument("--rerank", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("select", help="budgeted task-specific selection")
    s.add_argument("--task", required=True)
    s.add_argument("--pool", required=True)
    s.add_argument("--index")
    s.add_argument("--exact", action="store_true")
    s.add_argument("--k", "--budget", dest="k", type=int, required=True)
    s.add_argument("--nprobe", type=int)
    s.add_argument("--preset", choices=["paper-default"])
    s.add_argument("--rerank", action="store_true")
    s.add_argument("--allow-short", action="store_true")
    s.add_argument("--exclude", help="file of pool ids to skip, one per line")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("verify", help="re-derive a manifest with exact search")
    s.add_argument("--manifest", required=True)
    s.add_argument("--task", required=True)
    s.add_argument("--pool", required=True)
    s.add_argument("--exact", action="store_true", help="accepted for symmetry; verification is always exact")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("eval-recall", help="recall@k of the index against exact search")
    s.add_argument("--index", required=True)
    s.add_argument("--pool", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--nprobe", default="1,4,16,64", help="comma-separated sweep")
    s.add_argument("--rerank", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval_recall)

    s = sub.add_parser("eval", help="proxy A-distance and downstream proxy, manifest vs random")
    s.add_argument("--benchmark", metavar="CFG", help="run the synthetic benchmark end to end")
    s.add_argument("--manifest")
    s.add_argument("--pool")
    s.add_argument("--task")
    s.add_argument("--task-labels")
    s.add_argument("--test")
    s.add_argument("--test-labels")
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--lr", type=float, default=1.0)
    s.add_argument("--train-fraction", type=float, default=0.5)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval, stochastic=lambda a: True)

    s = sub.add_parser("synth", help="write a synthetic benchmark dataset")
    s.add_argument("--config", metavar="CFG")
    s.add_argument("--seed", type=int)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth, stochastic=lambda a: True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    stochastic = getattr(args, "stochastic", None)
    if stochastic and stochastic(args) and args.seed is None:
        parser.error(f"{args.command} is stochastic and needs --seed")
    try:
        return args.func(args)
    except SeptError as exc:
        sys.stderr.write(f"ERROR {exc.code}: {exc}\n")
    except FileNotFoundError as exc:
        sys.stderr.write(f"ERROR io: {exc.filename}: no such file\n")
    except OSError as exc:
        sys.stderr.write(f"ERROR io: {exc}\n")
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

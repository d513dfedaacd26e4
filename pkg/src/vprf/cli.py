"""Command-line entry point: ``vprf <command> [options]``.

Commands
--------
synth    write a synthetic clustered corpus, queries and qrels
index    build a flat index file from a passage embedding file
search   first-stage retrieval to a TREC run file
vprf     two-stage retrieval with average or rocchio feedback
sweep    evaluate baseline + a parameter grid on one or more datasets
eval     score a TREC run file against qrels
report   aggregate sweep CSVs into Baseline / BIA / Oracle tables
timing   per-query time of baseline and feedback retrieval
"""

import argparse
import logging
import os
import sys

from . import embedding_store as store
from .evaluation import RankedRun, evaluate, load_qrels, load_run, save_qrels, save_run
from .exceptions import VprfError
from .feedback import GridSpec, VprfParams, batch_vprf, param_grid
from .flat_index import batch_search, build, load_index, save_index
from .sweep import (
    Dataset,
    aggregate,
    emit_report,
    format_timing_table,
    read_sweep_csv,
    run_sweep,
    timing_table,
    write_sweep_csv,
)

logger = logging.getLogger("vprf")

_EXT = {"binary": "bin", "line_record": "tsv"}


def _fmt(name):
    return "line_record" if name == "line" else name


def _kappas(text):
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad kappa list {text!r}") from None


def _load_index(args):
    if args.index:
        return load_index(args.index)
    return build(store.load_embeddings(args.passages, _fmt(args.format), kind="passages"))


def _load_queries(args):
    return store.load_embeddings(args.queries, _fmt(args.format), kind="queries")


def default_tag(params):
    alpha = 1.0 if params.alpha is None else params.alpha
    beta = 0.0 if params.beta is None else params.beta
    return f"llm-vprf-{params.method}-k{params.kappa}-a{alpha:g}-b{beta:g}"


# -- commands -------------------------------------------------------------


def cmd_synth(args):
    passages, queries, qrels = store.synth_corpus(
        args.clusters, args.docs_per_cluster, args.dim, args.noise, args.seed
    )
    os.makedirs(args.out_dir, exist_ok=True)
    fmt = _fmt(args.format)
    ext = _EXT[fmt]
    store.save_embeddings(passages, os.path.join(args.out_dir, f"passages.{ext}"), fmt)
    store.save_embeddings(queries, os.path.join(args.out_dir, f"queries.{ext}"), fmt)
    save_qrels(qrels, os.path.join(args.out_dir, "qrels.txt"))
    logger.info("wrote %d passages, %d queries to %s", len(passages), len(queries), args.out_dir)
    return 0


def cmd_index(args):
    corpus = store.load_embeddings(args.passages, _fmt(args.format), kind="passages")
    index = build(corpus, prenormalize=args.prenormalize)
    save_index(index, args.output)
    logger.info("indexed %d passages (dimension %d) into %s", len(index), index.dimension, args.output)
    return 0


def cmd_search(args):
    index = _load_index(args)
    queries = _load_queries(args)
    hits = batch_search(index, queries, args.k_final, threads=args.threads)
    save_run(RankedRun(hits), args.output, tag=args.tag or "llm-vprf-baseline")
    return 0


def cmd_vprf(args):
    index = _load_index(args)
    queries = _load_queries(args)
    params = VprfParams(args.method, args.kappa, args.alpha, args.beta)
    hits = batch_vprf(index, queries, params, args.k_final, normalize=args.normalize, threads=args.threads)
    save_run(RankedRun(hits), args.output, tag=args.tag or default_tag(params))
    return 0


def _grid(args):
    variants = {
        "alpha-beta": ["alpha_beta_grid"],
        "fixed-alpha-one": ["fixed_alpha_one"],
        "average": ["average"],
        "all": ["average", "alpha_beta_grid", "fixed_alpha_one"],
    }[args.grid]
    grid = []
    for v in variants:
        grid.extend(param_grid(GridSpec(v, args.kappas)))
    return grid


def _datasets(args):
    fmt = _fmt(args.format)
    specs = [tuple(d) for d in args.dataset or ()]
    for d in args.data_dir or ():
        ext = _EXT[fmt]
        specs.append((
            os.path.basename(os.path.normpath(d)),
            os.path.join(d, f"passages.{ext}"),
            os.path.join(d, f"queries.{ext}"),
            os.path.join(d, "qrels.txt"),
        ))
    if not specs:
        raise ValueError("no datasets given; use --dataset or --data-dir")
    for name, p, q, r in specs:
        yield Dataset(
            name,
            store.load_embeddings(p, fmt, kind="passages"),
            store.load_embeddings(q, fmt, kind="queries"),
            load_qrels(r),
        )


def cmd_sweep(args):
    grid = _grid(args)
    metrics = (f"ndcg@{args.ndcg_k}", f"recall@{args.recall_k}")
    results = run_sweep(
        _datasets(args), grid, metrics=metrics, k_final=args.k_final,
        min_grade=args.min_grade, normalize=args.normalize,
    )
    write_sweep_csv(results, args.output)
    for name, err in results.failures.items():
        print(f"dataset {name} failed: {err}", file=sys.stderr)
    return 1 if results.failures else 0


def cmd_eval(args):
    run = load_run(args.run)
    qrels = load_qrels(args.qrels)
    metrics = (f"ndcg@{args.ndcg_k}", f"recall@{args.recall_k}")
    reports = evaluate(run, qrels, metrics, min_grade=args.min_grade)
    p = args.precision
    for name, rep in reports.items():
        if args.per_query:
            for qid, v in rep.per_query.items():
                print(f"{name}\t{qid}\t{v:.{p}f}")
        print(f"{name}\tall\t{rep.mean:.{p}f}")
    return 0


def _parse_results_arg(text):
    if "=" in text:
        head, path = text.split("=", 1)
        label, _, group = head.partition("/")
    else:
        path = text
        label, group = os.path.splitext(os.path.basename(text))[0], ""
    return label, group, path


def cmd_report(args):
    reports = []
    for spec in args.results:
        label, group, path = _parse_results_arg(spec)
        results = read_sweep_csv(path)
        reports.append(aggregate(
            results, args.metrics, label=label, group=group,
            include_baseline=not args.oracle_excludes_baseline,
        ))
    text = emit_report(reports, args.report_format, path=args.output)
    if args.output is None:
        sys.stdout.write(text)
    return 0


def cmd_timing(args):
    index = _load_index(args)
    queries = _load_queries(args)
    table = timing_table(
        index, queries, kappa=args.kappa, alpha=args.alpha, beta=args.beta,
        warmup=args.warmup, repetitions=args.repetitions, k_final=args.k_final,
    )
    sys.stdout.write(format_timing_table({args.label: table}))
    return 0


# -- parser ---------------------------------------------------------------


def _add_io(p, index=True):
    if index:
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--index", help="index file written by `vprf index`")
        src.add_argument("--passages", help="passage embedding file (indexed on the fly)")
    p.add_argument("--queries", required=True, help="query embedding file")
    p.add_argument("--format", choices=("binary", "line"), default="binary")
    p.add_argument("--k-final", type=int, default=1000)
    p.add_argument("--threads", type=int, default=1)


def build_parser():
    parser = argparse.ArgumentParser(prog="vprf", description="Vector pseudo relevance feedback toolkit")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("--clusters", type=int, default=8)
    p.add_argument("--docs-per-cluster", type=int, default=50)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("binary", "line"), default="binary")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("index", help="build a flat index")
    p.add_argument("--passages", required=True)
    p.add_argument("--format", choices=("binary", "line"), default="binary")
    p.add_argument("--prenormalize", action="store_true")
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("search", help="first-stage retrieval")
    _add_io(p)
    p.add_argument("--tag")
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("vprf", help="retrieval with vector feedback")
    _add_io(p)
    p.add_argument("--method", choices=("average", "rocchio"), default="rocchio")
    p.add_argument("--kappa", type=int, default=3)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--normalize", action="store_true", help="L2-normalize vectors before combining")
    p.add_argument("--tag")
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_vprf)

    p = sub.add_parser("sweep", help="evaluate a parameter grid")
    p.add_argument("--dataset", nargs=4, action="append", metavar=("NAME", "PASSAGES", "QUERIES", "QRELS"))
    p.add_argument("--data-dir", action="append", help="directory laid out by `vprf synth`")
    p.add_argument("--format", choices=("binary", "line"), default="binary")
    p.add_argument("--grid", choices=("alpha-beta", "fixed-alpha-one", "average", "all"), default="all")
    p.add_argument("--kappas", type=_kappas, default=(1, 2, 3, 5, 10))
    p.add_argument("--k-final", type=int, default=1000)
    p.add_argument("--ndcg-k", type=int, default=10)
    p.add_argument("--recall-k", type=int, default=100)
    p.add_argument("--min-grade", type=int, default=1)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="score a run file")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--ndcg-k", type=int, default=10)
    p.add_argument("--recall-k", type=int, default=100)
    p.add_argument("--min-grade", type=int, default=1)
    p.add_argument("--per-query", action="store_true")
    p.add_argument("--precision", type=int, default=4)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="aggregate sweep CSVs")
    p.add_argument(
        "--results", action="append", required=True,
        help="sweep CSV, optionally as LABEL=PATH or LABEL/GROUP=PATH",
    )
    p.add_argument("--metrics", nargs="+")
    p.add_argument(
        "--oracle-excludes-baseline", action="store_true",
        help="per-dataset oracle picks only among feedback configs",
    )
    p.add_argument("--format", dest="report_format", choices=("csv", "markdown"), default="markdown")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("timing", help="per-query timing table")
    _add_io(p)
    p.add_argument("--kappa", type=int, default=3)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--label", default="model")
    p.set_defaults(func=cmd_timing)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (VprfError, ValueError, TypeError, OSError, KeyError) as exc:
        print(f"vprf {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

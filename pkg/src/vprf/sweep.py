"""Parameter sweeps, Baseline/BIA/Oracle aggregation, timing and result tables.

Terminology used throughout:

* *baseline*: first-stage retrieval only, no feedback.
* *best-in-average (BIA)*: the single feedback config whose metric, averaged
  over all datasets, is highest. Chosen separately for each metric; baseline
  does not compete.
* *oracle*: the best value on each dataset (baseline included), then
  averaged. Always >= BIA.
"""

import csv
import io
import logging
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from ._validation import atomic_write, check_positive_int
from .evaluation import RankedRun, evaluate, format_cell, mean, parse_metric, percent_change
from .exceptions import RaggedResultsError
from .feedback import FeedbackSet, VprfParams, refine
from .flat_index import build, search

logger = logging.getLogger(__name__)

DEFAULT_METRICS = ("ndcg@10", "recall@100")
SWEEP_CSV_COLUMNS = ("dataset", "method", "kappa", "alpha", "beta", "metric", "value", "per_query_time_s")
REPORT_CSV_COLUMNS = (
    "label", "group", "metric", "row", "value", "percent_change",
    "dataset", "method", "kappa", "alpha", "beta",
)
BASELINE = "baseline"


@dataclass(frozen=True)
class Dataset:
    name: str
    passages: object
    queries: object
    qrels: object


@dataclass
class SweepResult:
    dataset: str
    params: VprfParams | None
    metric_values: dict
    per_query_time_s: float = 0.0

    @property
    def is_baseline(self):
        return self.params is None

    @property
    def config(self):
        return BASELINE if self.params is None else self.params

    def same_outcome(self, other):
        """Equality ignoring the (wall-clock) timing field."""
        return (
            self.dataset == other.dataset
            and self.params == other.params
            and self.metric_values == other.metric_values
        )


class SweepResults(list):
    """List of :class:`SweepResult` that also records per-dataset failures."""

    def __init__(self, iterable=(), failures=None):
        super().__init__(iterable)
        self.failures = dict(failures or {})


def _as_dataset(i, item):
    if isinstance(item, Dataset):
        return item
    item = tuple(item)
    if len(item) == 4:
        return Dataset(*item)
    if len(item) == 3:
        return Dataset(f"dataset{i}", *item)
    raise ValueError("datasets must be Dataset objects or (name?, passages, queries, qrels) tuples")


def _metric_means(hits, qrels, metrics, min_grade):
    reports = evaluate(RankedRun(hits), qrels, metrics, min_grade=min_grade)
    return {name: rep.mean for name, rep in reports.items()}


def run_sweep(datasets, grid, metrics=DEFAULT_METRICS, k_final=1000, min_grade=1,
              normalize=False):
    """Evaluate the baseline and every config in ``grid`` on every dataset.

    The first-stage ranking of each query is computed once at depth
    ``max(k_final, max kappa)`` and shared: it is the baseline run and the
    source of feedback passages for all configs. Per-query time covers
    refinement and second-stage search only.

    A dataset that raises is logged and recorded in ``.failures``; the
    sweep continues with the next one.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("grid is empty")
    if len(set(grid)) != len(grid):
        raise ValueError("grid contains duplicate configs")
    k_final = check_positive_int(k_final, "k_final")
    metrics = tuple(metrics)
    for name in metrics:
        parse_metric(name)
    depth = max(k_final, max(p.kappa for p in grid))

    results = SweepResults()
    for i, item in enumerate(datasets):
        ds = _as_dataset(i, item)
        try:
            results.extend(_sweep_one(ds, grid, metrics, k_final, depth, min_grade, normalize))
        except Exception as exc:  # isolate per-dataset failures
            logger.error("dataset %s failed: %s", ds.name, exc)
            results.failures[ds.name] = f"{type(exc).__name__}: {exc}"
    return results


def _sweep_one(ds, grid, metrics, k_final, depth, min_grade, normalize):
    index = build(ds.passages)
    if ds.queries.dimension != index.dimension:
        raise ValueError(
            f"queries have dimension {ds.queries.dimension}, passages {index.dimension}"
        )
    qids = ds.queries.ids
    qvecs = ds.queries.vectors.astype(np.float64)
    n = len(qids)

    t0 = time.perf_counter()
    first = [search(index, q, depth) for q in qvecs]
    base_time = (time.perf_counter() - t0) / n
    baseline_hits = {qid: hits[:k_final] for qid, hits in zip(qids, first)}
    out = [SweepResult(ds.name, None, _metric_means(baseline_hits, ds.qrels, metrics, min_grade), base_time)]
    logger.info("%s: baseline %s", ds.name, out[0].metric_values)

    for params in grid:
        t0 = time.perf_counter()
        hits = {}
        for qid, q, fp in zip(qids, qvecs, first):
            fb = FeedbackSet.from_hits(index, fp[: params.kappa])
            hits[qid] = search(index, refine(q, fb, params, normalize=normalize), k_final)
        elapsed = (time.perf_counter() - t0) / n
        out.append(SweepResult(ds.name, params, _metric_means(hits, ds.qrels, metrics, min_grade), elapsed))
    return out


# -- aggregation ----------------------------------------------------------


def _table(results, metric):
    """Index results as ``{dataset: {config: value}}`` and check completeness."""
    datasets, configs = [], []
    values = {}
    for r in results:
        if metric not in r.metric_values:
            raise RaggedResultsError(f"{r.dataset}/{r.config}: metric {metric!r} missing")
        row = values.setdefault(r.dataset, {})
        if r.dataset not in datasets:
            datasets.append(r.dataset)
        if r.config in row:
            raise RaggedResultsError(f"{r.dataset}/{r.config}: duplicate result")
        if r.config not in configs:
            configs.append(r.config)
        row[r.config] = r.metric_values[metric]
    if not datasets:
        raise ValueError("no results to aggregate")
    for ds in datasets:
        missing = [c for c in configs if c not in values[ds]]
        if missing:
            raise RaggedResultsError(f"dataset {ds!r} is missing {len(missing)} configs, e.g. {missing[0]}")
    return datasets, configs, values


def baseline_mean(results, metric):
    datasets, configs, values = _table(results, metric)
    if BASELINE not in configs:
        raise ValueError("results contain no baseline")
    return mean(values[ds][BASELINE] for ds in datasets)


def best_in_average(results, metric):
    """Return ``(params, value)`` of the config with the best cross-dataset mean.

    Ties go to the config seen first (grid enumeration order).
    """
    datasets, configs, values = _table(results, metric)
    best, best_value = None, -np.inf
    for c in configs:
        if c == BASELINE:
            continue
        avg = mean(values[ds][c] for ds in datasets)
        if avg > best_value:
            best, best_value = c, avg
    if best is None:
        raise ValueError("results contain no feedback configs")
    return best, best_value


def oracle_picks(results, metric, include_baseline=True):
    """Per dataset, ``(params or None, value)`` of its best config.

    With ``include_baseline=False`` only feedback configs compete, so a
    dataset where feedback always loses contributes its best feedback value.
    """
    datasets, configs, values = _table(results, metric)
    # baseline first so it keeps ties
    order = sorted(configs, key=lambda c: c != BASELINE)
    if not include_baseline:
        order = [c for c in order if c != BASELINE]
        if not order:
            raise ValueError("results contain no feedback configs")
    picks = {}
    for ds in datasets:
        best = max(order, key=lambda c: values[ds][c])
        picks[ds] = (None if best == BASELINE else best, values[ds][best])
    return picks


def oracle(results, metric, include_baseline=True):
    """Mean over datasets of each dataset's best value."""
    return mean(v for _, v in oracle_picks(results, metric, include_baseline).values())


@dataclass
class MetricAggregate:
    metric: str
    baseline: float
    bia: float
    bia_params: VprfParams | None
    oracle: float
    oracle_picks: dict = field(default_factory=dict)

    @property
    def bia_percent(self):
        return percent_change(self.bia, self.baseline)

    @property
    def oracle_percent(self):
        return percent_change(self.oracle, self.baseline)


@dataclass
class AggregateReport:
    label: str
    group: str
    metrics: dict

    def __getitem__(self, metric):
        return self.metrics[metric]


def aggregate(results, metrics=None, label="", group="", include_baseline=True):
    """Baseline mean, BIA and Oracle for each metric of a sweep."""
    if metrics is None:
        metrics = list(dict.fromkeys(m for r in results for m in r.metric_values))
    out = {}
    for m in metrics:
        params, bia = best_in_average(results, m)
        out[m] = MetricAggregate(
            metric=m,
            baseline=baseline_mean(results, m),
            bia=bia,
            bia_params=params,
            oracle=oracle(results, m, include_baseline),
            oracle_picks=oracle_picks(results, m, include_baseline),
        )
    return AggregateReport(label, group, out)


# -- timing ---------------------------------------------------------------


def _first_stage(index, qvecs, kappa):
    return [search(index, q, kappa) for q in qvecs]


def time_per_query(index, queries, params=None, warmup=2, repetitions=5, k_final=1000,
                   normalize=False):
    """Median wall time per query over ``repetitions`` timed passes.

    With ``params=None`` a pass is a single-stage search of every query.
    Otherwise a pass is refinement plus second-stage search; the first-stage
    search that supplies feedback runs once, before timing starts.
    """
    repetitions = check_positive_int(repetitions, "repetitions")
    qvecs = queries.vectors.astype(np.float64)
    n = len(qvecs)
    if params is None:
        def one_pass():
            for q in qvecs:
                search(index, q, k_final)
    else:
        feedback = [FeedbackSet.from_hits(index, hits) for hits in _first_stage(index, qvecs, params.kappa)]

        def one_pass():
            for q, fb in zip(qvecs, feedback):
                search(index, refine(q, fb, params, normalize=normalize), k_final)

    return _median_time(one_pass, warmup, repetitions) / n


def refinement_time_per_query(index, queries, params, warmup=2, repetitions=5, normalize=False):
    """Median per-query time of building the feedback set and applying the operator."""
    qvecs = queries.vectors.astype(np.float64)
    first = _first_stage(index, qvecs, params.kappa)

    def one_pass():
        for q, hits in zip(qvecs, first):
            refine(q, FeedbackSet.from_hits(index, hits), params, normalize=normalize)

    return _median_time(one_pass, warmup, repetitions) / len(qvecs)


def _median_time(fn, warmup, repetitions):
    for _ in range(max(0, warmup)):
        fn()
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


TIMING_ROWS = ("Baseline", "VPRF-Average", "VPRF-Rocchio")


def timing_table(index, queries, kappa=3, alpha=1.0, beta=0.5, warmup=2, repetitions=5,
                 k_final=1000):
    """Per-query seconds for baseline, average and rocchio at feedback depth ``kappa``."""
    return {
        "Baseline": time_per_query(index, queries, None, warmup, repetitions, k_final),
        "VPRF-Average": time_per_query(
            index, queries, VprfParams("average", kappa), warmup, repetitions, k_final
        ),
        "VPRF-Rocchio": time_per_query(
            index, queries, VprfParams("rocchio", kappa, alpha, beta), warmup, repetitions, k_final
        ),
    }


def format_timing_table(tables):
    """Markdown table with one column per model: ``{model: timing_table(...)}``."""
    labels = list(tables)
    lines = [
        "| Models | " + " | ".join(labels) + " |",
        "|---|" + "---|" * len(labels),
    ]
    for row in TIMING_ROWS:
        cells = [f"{tables[m][row]:.4f}s" for m in labels]
        lines.append(f"| {row} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


# -- sweep CSV ------------------------------------------------------------


def _fmt_num(x):
    return "" if x is None else repr(x)


def sweep_rows(results):
    for r in results:
        p = r.params
        for metric, value in r.metric_values.items():
            yield {
                "dataset": r.dataset,
                "method": BASELINE if p is None else p.method,
                "kappa": "" if p is None else str(p.kappa),
                "alpha": "" if p is None else _fmt_num(p.alpha),
                "beta": "" if p is None else _fmt_num(p.beta),
                "metric": metric,
                "value": repr(float(value)),
                "per_query_time_s": repr(float(r.per_query_time_s)),
            }


def format_sweep_csv(results):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(sweep_rows(results))
    return buf.getvalue()


def write_sweep_csv(results, path):
    text = format_sweep_csv(results)
    with atomic_write(path, "w") as fh:
        fh.write(text)


def _params_from_row(row):
    method = row["method"].strip()
    if method == BASELINE:
        return None
    alpha = float(row["alpha"]) if row.get("alpha", "").strip() else None
    beta = float(row["beta"]) if row.get("beta", "").strip() else None
    return VprfParams(method, int(row["kappa"]), alpha, beta)


def parse_sweep_csv(text):
    """Rebuild :class:`SweepResult` records from sweep CSV text.

    Rows sharing (dataset, config) are merged; first-appearance order is kept.
    """
    reader = csv.DictReader(io.StringIO(text))
    missing = set(SWEEP_CSV_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"sweep CSV is missing columns: {sorted(missing)}")
    merged = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            params = _params_from_row(row)
            value = float(row["value"])
            t = float(row["per_query_time_s"]) if row["per_query_time_s"].strip() else 0.0
        except (TypeError, ValueError) as exc:
            raise ValueError(f"sweep CSV line {lineno}: {exc}") from exc
        key = (row["dataset"], BASELINE if params is None else params)
        res = merged.get(key)
        if res is None:
            res = merged[key] = SweepResult(row["dataset"], params, {}, t)
        if row["metric"] in res.metric_values:
            raise ValueError(f"sweep CSV line {lineno}: duplicate {row['metric']} for {key}")
        res.metric_values[row["metric"]] = value
    return list(merged.values())


def read_sweep_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_sweep_csv(fh.read())


# -- reports --------------------------------------------------------------


_METRIC_LABELS = {"ndcg": "nDCG", "recall": "R"}


def metric_label(name):
    try:
        base, cutoff = parse_metric(name)
    except ValueError:
        return name
    return f"{_METRIC_LABELS[base]}@{cutoff}"


def _param_fields(p):
    if p is None:
        return {"method": BASELINE, "kappa": "", "alpha": "", "beta": ""}
    return {"method": p.method, "kappa": str(p.kappa), "alpha": _fmt_num(p.alpha), "beta": _fmt_num(p.beta)}


def _report_csv(reports):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    blank = {"dataset": "", "method": "", "kappa": "", "alpha": "", "beta": ""}
    for rep in reports:
        for m, agg in rep.metrics.items():
            base = {"label": rep.label, "group": rep.group, "metric": m}
            writer.writerow({**base, **blank, "row": "baseline", "value": repr(agg.baseline), "percent_change": ""})
            writer.writerow({
                **base, **blank, **_param_fields(agg.bia_params),
                "row": "bia", "value": repr(agg.bia), "percent_change": repr(agg.bia_percent),
            })
            writer.writerow({
                **base, **blank, "row": "oracle", "value": repr(agg.oracle),
                "percent_change": repr(agg.oracle_percent),
            })
            for ds, (p, v) in agg.oracle_picks.items():
                writer.writerow({
                    **base, **blank, **_param_fields(p), "dataset": ds,
                    "row": "oracle_pick", "value": repr(v), "percent_change": "",
                })
    return buf.getvalue()


def parse_report_csv(text):
    """Inverse of the CSV form of :func:`emit_report`."""
    reports = {}
    for row in csv.DictReader(io.StringIO(text)):
        key = (row["label"], row["group"])
        rep = reports.setdefault(key, AggregateReport(row["label"], row["group"], {}))
        agg = rep.metrics.get(row["metric"])
        if agg is None:
            agg = rep.metrics[row["metric"]] = MetricAggregate(row["metric"], np.nan, np.nan, None, np.nan, {})
        kind, value = row["row"], float(row["value"])
        if kind == "baseline":
            agg.baseline = value
        elif kind == "bia":
            agg.bia, agg.bia_params = value, _params_from_row(row)
        elif kind == "oracle":
            agg.oracle = value
        elif kind == "oracle_pick":
            agg.oracle_picks[row["dataset"]] = (_params_from_row(row), value)
        else:
            raise ValueError(f"unknown report row kind {kind!r}")
    return list(reports.values())


def _markdown(reports):
    labels = list(dict.fromkeys(r.label for r in reports))
    blocks = list(dict.fromkeys((r.group, m) for r in reports for m in r.metrics))
    lookup = {(r.label, r.group): r for r in reports}
    lines = [
        "| Group | Metric | Method | " + " | ".join(labels) + " |",
        "|---|---|---|" + "---|" * len(labels),
    ]
    for group, m in blocks:
        rows = {"Baseline": [], "BIA": [], "Oracle": []}
        for label in labels:
            rep = lookup.get((label, group))
            agg = rep.metrics.get(m) if rep else None
            if agg is None:
                for cells in rows.values():
                    cells.append("-")
                continue
            vals = {"Baseline": agg.baseline, "BIA": agg.bia, "Oracle": agg.oracle}
            texts = {
                "Baseline": format_cell(agg.baseline),
                "BIA": format_cell(agg.bia, agg.baseline),
                "Oracle": format_cell(agg.oracle, agg.baseline),
            }
            top = max(vals.values())
            for name in rows:
                cell = texts[name]
                rows[name].append(f"**{cell}**" if vals[name] == top else cell)
        for name, cells in rows.items():
            lines.append(f"| {group} | {metric_label(m)} | {name} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def emit_report(aggregates, format="markdown", path=None):
    """Render one or more :class:`AggregateReport` as CSV or a markdown table.

    Markdown cells read ``0.6972(1.6%)`` (change relative to baseline, one
    decimal) and the best row of each metric block is bold. Output depends
    only on the input. Writes to ``path`` when given; returns the text.
    """
    reports = [aggregates] if isinstance(aggregates, AggregateReport) else list(aggregates)
    if format == "csv":
        text = _report_csv(reports)
    elif format == "markdown":
        text = _markdown(reports)
    else:
        raise ValueError(f"unknown report format {format!r}")
    if path is not None:
        with atomic_write(path, "w") as fh:
            fh.write(text)
    return text

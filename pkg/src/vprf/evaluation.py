"""Relevance judgments, TREC run files and rank-quality metrics.

Conventions follow trec_eval:

* nDCG gain is the raw grade with a ``log2(rank + 1)`` discount; the ideal
  ranking is built from all judged grades of the query.
* unjudged retrieved documents count as grade 0.
* a query with no relevant documents scores 0 for nDCG (and still counts
  towards the mean) and is left out of the recall mean.
"""

import logging
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

from ._validation import atomic_write, check_positive_int
from .exceptions import FormatError

logger = logging.getLogger(__name__)


class Qrels:
    """Graded judgments, ``{query_id: {doc_id: grade}}``."""

    def __init__(self, judgments=None):
        self._j = {}
        for qid, docs in (judgments or {}).items():
            for did, grade in docs.items():
                self.add(qid, did, grade)

    def add(self, query_id, doc_id, grade):
        if isinstance(grade, bool) or int(grade) != grade or grade < 0:
            raise ValueError(f"grade for ({query_id}, {doc_id}) must be a non-negative integer")
        docs = self._j.setdefault(query_id, {})
        if doc_id in docs:
            raise ValueError(f"duplicate judgment for ({query_id}, {doc_id})")
        docs[doc_id] = int(grade)

    @property
    def judgments(self):
        return self._j

    @property
    def query_ids(self):
        return list(self._j)

    def grades(self, query_id):
        return self._j.get(query_id, {})

    def relevant(self, query_id, min_grade=1):
        return {d for d, g in self.grades(query_id).items() if g >= min_grade}

    def pairs(self):
        for qid, docs in self._j.items():
            for did, grade in docs.items():
                yield qid, did, grade

    def __len__(self):
        return sum(len(d) for d in self._j.values())

    def __contains__(self, query_id):
        return query_id in self._j

    def __eq__(self, other):
        if not isinstance(other, Qrels):
            return NotImplemented
        return self._j == other._j

    __hash__ = None

    def __repr__(self):
        return f"Qrels(queries={len(self._j)}, judgments={len(self)})"


def load_qrels(path):
    """Read a 4-column TREC qrels file: ``query_id iteration doc_id grade``."""
    qrels = Qrels()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise FormatError(f"line {lineno}: expected 4 columns, got {len(parts)}", record=lineno)
            qid, _, did, grade = parts
            try:
                grade = int(grade)
            except ValueError:
                raise FormatError(f"line {lineno}: grade {grade!r} is not an integer", record=lineno) from None
            if grade < 0:
                raise FormatError(f"line {lineno}: negative grade {grade}", record=lineno)
            if did in qrels.grades(qid):
                raise FormatError(f"line {lineno}: duplicate judgment for ({qid}, {did})", record=lineno)
            qrels.add(qid, did, grade)
    return qrels


def save_qrels(qrels, path):
    with atomic_write(path, "w") as fh:
        for qid, did, grade in qrels.pairs():
            fh.write(f"{qid} 0 {did} {grade}\n")


class RankedRun:
    """Per-query ranked lists of ``(doc_id, score)`` with non-increasing scores."""

    def __init__(self, rankings=None):
        self._r = {}
        for qid, ranking in (rankings or {}).items():
            self.set(qid, ranking)

    def set(self, query_id, ranking):
        ranking = [
            (h.doc_id, float(h.score)) if hasattr(h, "doc_id") else (str(h[0]), float(h[1]))
            for h in ranking
        ]
        seen = set()
        prev = math.inf
        for did, score in ranking:
            if did in seen:
                raise ValueError(f"query {query_id!r}: document {did!r} ranked twice")
            if score > prev:
                raise ValueError(f"query {query_id!r}: scores increase at document {did!r}")
            seen.add(did)
            prev = score
        self._r[query_id] = ranking

    @classmethod
    def from_hits(cls, hits_by_query):
        return cls(hits_by_query)

    @property
    def rankings(self):
        return self._r

    @property
    def query_ids(self):
        return list(self._r)

    def doc_ids(self, query_id):
        return [d for d, _ in self._r.get(query_id, [])]

    def __getitem__(self, query_id):
        return self._r[query_id]

    def __len__(self):
        return len(self._r)

    def __eq__(self, other):
        if not isinstance(other, RankedRun):
            return NotImplemented
        return self._r == other._r

    __hash__ = None


def format_run(run, tag="vprf"):
    if any(c.isspace() for c in tag) or not tag:
        raise ValueError(f"run tag {tag!r} must be non-empty and contain no whitespace")
    lines = []
    for qid, ranking in run.rankings.items():
        for rank, (did, score) in enumerate(ranking, start=1):
            lines.append(f"{qid} Q0 {did} {rank} {score!r} {tag}\n")
    return "".join(lines)


def save_run(run, path, tag="vprf"):
    """Write a 6-column TREC run: ``query_id Q0 doc_id rank score tag``."""
    text = format_run(run, tag)
    with atomic_write(path, "w") as fh:
        fh.write(text)


def load_run(path):
    """Read a TREC run file; each query's rows are ordered by their rank column."""
    rows = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise FormatError(f"line {lineno}: expected 6 columns, got {len(parts)}", record=lineno)
            qid, _, did, rank, score, _tag = parts
            try:
                rank, score = int(rank), float(score)
            except ValueError:
                raise FormatError(f"line {lineno}: bad rank or score", record=lineno) from None
            rows.setdefault(qid, []).append((rank, did, score))
    run = RankedRun()
    for qid, entries in rows.items():
        entries.sort(key=lambda e: e[0])
        ranks = [e[0] for e in entries]
        if ranks != list(range(1, len(ranks) + 1)):
            raise FormatError(f"query {qid!r}: ranks are not 1..{len(ranks)}")
        try:
            run.set(qid, [(did, score) for _, did, score in entries])
        except ValueError as exc:
            raise FormatError(str(exc)) from exc
    return run


@dataclass
class MetricReport:
    name: str
    per_query: dict
    excluded: list = field(default_factory=list)

    @property
    def mean(self):
        if not self.per_query:
            return 0.0
        return math.fsum(self.per_query.values()) / len(self.per_query)

    def __float__(self):
        return self.mean


def _split_queries(run, qrels, name):
    excluded = [q for q in run.query_ids if q not in qrels]
    if excluded:
        logger.warning("%s: %d run queries have no judgments and are excluded", name, len(excluded))
    return excluded


def dcg(grades):
    return math.fsum(g / math.log2(i + 2) for i, g in enumerate(grades) if g > 0)


def ndcg_at_k(run, qrels, k=10):
    """nDCG@k per judged query; queries missing from the run score 0."""
    k = check_positive_int(k, "k")
    name = f"ndcg@{k}"
    excluded = _split_queries(run, qrels, name)
    per_query = {}
    for qid in qrels.query_ids:
        grades = qrels.grades(qid)
        ideal = dcg(sorted(grades.values(), reverse=True)[:k])
        if ideal == 0:
            per_query[qid] = 0.0
            continue
        gained = dcg([grades.get(d, 0) for d in run.doc_ids(qid)[:k]])
        per_query[qid] = gained / ideal
    return MetricReport(name, per_query, excluded)


def recall_at_k(run, qrels, k=100, min_grade=1):
    """Fraction of relevant (grade >= ``min_grade``) documents in the top k."""
    k = check_positive_int(k, "k")
    min_grade = check_positive_int(min_grade, "min_grade")
    name = f"recall@{k}"
    excluded = _split_queries(run, qrels, name)
    per_query = {}
    for qid in qrels.query_ids:
        relevant = qrels.relevant(qid, min_grade)
        if not relevant:
            continue
        found = relevant.intersection(run.doc_ids(qid)[:k])
        per_query[qid] = len(found) / len(relevant)
    return MetricReport(name, per_query, excluded)


def parse_metric(name):
    """Split ``"ndcg@10"`` into ``("ndcg", 10)``."""
    base, _, cutoff = name.lower().partition("@")
    if base not in ("ndcg", "recall") or not cutoff.isdigit():
        raise ValueError(f"unsupported metric {name!r}; expected ndcg@K or recall@K")
    return base, int(cutoff)


def evaluate(run, qrels, metrics=("ndcg@10", "recall@100"), min_grade=1):
    """Return ``{metric_name: MetricReport}`` for each named metric."""
    out = {}
    for name in metrics:
        base, cutoff = parse_metric(name)
        if base == "ndcg":
            out[f"ndcg@{cutoff}"] = ndcg_at_k(run, qrels, cutoff)
        else:
            out[f"recall@{cutoff}"] = recall_at_k(run, qrels, cutoff, min_grade=min_grade)
    return out


def percent_change(value, baseline):
    """Relative change of ``value`` over ``baseline``, in percent."""
    if not baseline > 0:
        raise ValueError(f"baseline must be positive, got {baseline}")
    return 100.0 * (value - baseline) / baseline


def round_half_up(value, places):
    """Decimal rounding as printed in result tables (0.75475 -> 0.7548).

    The value is first snapped to 12 decimals so binary noise from averaging
    (0.754749999...) does not decide the rounding direction.
    """
    snapped = Decimal(repr(round(float(value), 12)))
    return snapped.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP)


def format_score(value, places=4):
    return str(round_half_up(value, places))


def format_percent(value, baseline, places=1):
    pct = round_half_up(percent_change(value, baseline), places)
    if pct == 0:
        pct = abs(pct)
    return f"{pct}%"


def format_cell(value, baseline=None, places=4):
    """``"0.6972(1.6%)"`` style cell; the bare score when no baseline is given."""
    text = format_score(value, places)
    if baseline is None:
        return text
    return f"{text}({format_percent(value, baseline)})"


def mean(values):
    values = list(values)
    return math.fsum(values) / len(values) if values else float("nan")


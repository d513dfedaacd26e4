import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reference import ref_ndcg, ref_recall
from vprf.evaluation import (
    Qrels,
    RankedRun,
    evaluate,
    format_cell,
    load_qrels,
    load_run,
    ndcg_at_k,
    percent_change,
    recall_at_k,
    save_qrels,
    save_run,
)
from vprf.exceptions import FormatError


def run_of(**rankings):
    return RankedRun({q: [(d, -i) for i, d in enumerate(docs)] for q, docs in rankings.items()})


class TestQrels:
    def test_single_line(self, tmp_path):
        (tmp_path / "q").write_text("q1 0 d1 2\n")
        assert load_qrels(tmp_path / "q").judgments == {"q1": {"d1": 2}}

    def test_duplicate_reported_at_second_line(self, tmp_path):
        (tmp_path / "q").write_text("q1 0 d1 2\nq1 0 d2 1\nq1 0 d1 0\n")
        with pytest.raises(FormatError, match="line 3") as err:
            load_qrels(tmp_path / "q")
        assert err.value.record == 3

    @pytest.mark.parametrize("line", ["q1 0 d1", "q1 0 d1 x", "q1 0 d1 -1", "q1 0 d1 1 extra"])
    def test_malformed(self, tmp_path, line):
        (tmp_path / "q").write_text("q0 0 d0 1\n" + line + "\n")
        with pytest.raises(FormatError, match="line 2"):
            load_qrels(tmp_path / "q")

    def test_grade_histogram(self, rng, tmp_path):
        lines = [f"q{i % 17} Q0 doc{i} {rng.integers(0, 4)}" for i in range(2000)]
        (tmp_path / "q").write_text("\n".join(lines) + "\n")
        expected = Counter(line.split()[3] for line in lines)
        got = Counter(str(g) for _, _, g in load_qrels(tmp_path / "q").pairs())
        assert got == expected and set(got) == {"0", "1", "2", "3"}

    def test_round_trip(self, tmp_path):
        qrels = Qrels({"a": {"x": 1, "y": 0}, "b": {"x": 3}})
        save_qrels(qrels, tmp_path / "q")
        assert load_qrels(tmp_path / "q") == qrels


class TestNdcg:
    def test_perfect(self):
        assert ndcg_at_k(run_of(q=["d1", "x", "y"]), Qrels({"q": {"d1": 1}})).mean == 1.0

    def test_relevant_at_rank_two(self):
        rep = ndcg_at_k(run_of(q=["x", "d1"]), Qrels({"q": {"d1": 1}}), 10)
        assert rep.per_query["q"] == pytest.approx(1 / math.log2(3), abs=1e-12)
        assert rep.mean == pytest.approx(0.6309, abs=1e-4)

    def test_all_zero_grades(self):
        rep = ndcg_at_k(run_of(q=["a", "b"]), Qrels({"q": {"a": 0, "b": 0}}))
        assert rep.per_query == {"q": 0.0}

    def test_graded_closed_form(self):
        # ranking grades (0, 2, 1) against ideal (2, 1)
        rep = ndcg_at_k(run_of(q=["n", "g2", "g1"]), Qrels({"q": {"g2": 2, "g1": 1, "n": 0}}), 3)
        expected = (2 / math.log2(3) + 1 / 2) / (2 + 1 / math.log2(3))
        assert rep.mean == pytest.approx(expected, abs=1e-12)

    def test_missing_and_unjudged_queries(self):
        qrels = Qrels({"a": {"x": 1}, "b": {"y": 1}})
        rep = ndcg_at_k(run_of(a=["x"], extra=["x"]), qrels)
        assert rep.per_query == {"a": 1.0, "b": 0.0}
        assert rep.excluded == ["extra"]
        assert rep.mean == 0.5

    def test_cutoff(self):
        qrels = Qrels({"q": {"d": 1}})
        docs = [f"n{i}" for i in range(10)] + ["d"]
        assert ndcg_at_k(run_of(q=docs), qrels, 10).mean == 0.0
        assert ndcg_at_k(run_of(q=docs), qrels, 11).mean > 0


class TestRecall:
    def test_full(self):
        run = run_of(q=["a", "b", "c"] + [f"n{i}" for i in range(50)])
        assert recall_at_k(run, Qrels({"q": {"a": 1, "b": 2, "c": 1}})).mean == 1.0

    def test_quarter(self):
        run = run_of(q=["a", "n1", "n2"])
        assert recall_at_k(run, Qrels({"q": {"a": 1, "b": 1, "c": 1, "d": 1}}), 100).mean == 0.25

    def test_no_relevant_docs_excluded(self):
        qrels = Qrels({"a": {"x": 1}, "b": {"y": 0}})
        rep = recall_at_k(run_of(a=["x"], b=["y"]), qrels)
        assert rep.per_query == {"a": 1.0}

    def test_min_grade(self):
        qrels = Qrels({"q": {"a": 1, "b": 2}})
        run = run_of(q=["b"])
        assert recall_at_k(run, qrels, 100, min_grade=1).mean == 0.5
        assert recall_at_k(run, qrels, 100, min_grade=2).mean == 1.0


def random_instance(rng):
    n_docs = int(rng.integers(5, 300))
    docs = [f"d{i}" for i in range(n_docs)]
    judgments, rankings = {}, {}
    for qi in range(int(rng.integers(1, 12))):
        judged = rng.choice(n_docs, size=int(rng.integers(1, n_docs)), replace=False)
        judgments[f"q{qi}"] = {docs[j]: int(rng.integers(0, 4)) for j in judged}
        if rng.random() < 0.9:
            order = rng.permutation(n_docs)[: int(rng.integers(1, n_docs + 1))]
            rankings[f"q{qi}"] = [docs[j] for j in order]
    return judgments, rankings


def test_agrees_with_reference(rng):
    for _ in range(50):
        judgments, rankings = random_instance(rng)
        qrels, run = Qrels(judgments), run_of(**rankings)
        for k in (1, 10, 100):
            got = ndcg_at_k(run, qrels, k)
            for q, grades in judgments.items():
                assert got.per_query[q] == pytest.approx(ref_ndcg(rankings.get(q, []), grades, k), abs=1e-6)
            rec = recall_at_k(run, qrels, k)
            expected = {q: ref_recall(rankings.get(q, []), g, k) for q, g in judgments.items()}
            expected = {q: v for q, v in expected.items() if v is not None}
            assert rec.per_query == pytest.approx(expected, abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_metric_properties(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    judgments, rankings = random_instance(rng)
    qrels, run = Qrels(judgments), run_of(**rankings)
    nd = ndcg_at_k(run, qrels, 10).per_query
    assert all(0.0 <= v <= 1.0 + 1e-12 for v in nd.values())
    recalls = [recall_at_k(run, qrels, k).per_query for k in (1, 5, 10, 50, 100)]
    for r in recalls:
        assert all(0.0 <= v <= 1.0 for v in r.values())
    for lo, hi in zip(recalls, recalls[1:]):
        assert all(lo[q] <= hi[q] for q in lo)
    # positive affine transform of scores leaves the order and the metrics alone
    scaled = RankedRun({q: [(d, 3.0 * s + 7.0) for d, s in r] for q, r in run.rankings.items()})
    assert ndcg_at_k(scaled, qrels, 10).per_query == nd


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_swap_up_does_not_hurt_ndcg(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    judgments, rankings = random_instance(rng)
    q = data.draw(st.sampled_from(sorted(rankings))) if rankings else None
    if q is None or len(rankings[q]) < 2:
        return
    ranking = list(rankings[q])
    grades = judgments[q]
    i = data.draw(st.integers(1, len(ranking) - 1))
    j = data.draw(st.integers(0, i - 1))
    if grades.get(ranking[i], 0) <= grades.get(ranking[j], 0):
        return
    before = ndcg_at_k(run_of(**{q: ranking}), Qrels({q: grades}), 10).mean
    ranking[i], ranking[j] = ranking[j], ranking[i]
    after = ndcg_at_k(run_of(**{q: ranking}), Qrels({q: grades}), 10).mean
    assert after >= before - 1e-12


class TestRunFiles:
    def test_round_trip(self, rng, tmp_path):
        for seed in range(100):
            r = np.random.default_rng(seed)
            run = RankedRun({
                f"q{i}": list(zip(
                    [f"d{j}" for j in r.permutation(60)[: int(r.integers(1, 60))]],
                    sorted(r.standard_normal(60).tolist(), reverse=True),
                ))
                for i in range(int(r.integers(1, 6)))
            })
            save_run(run, tmp_path / "r.run", tag="t")
            assert load_run(tmp_path / "r.run") == run

    def test_format(self, tmp_path):
        save_run(RankedRun({"q1": [("a", 0.5), ("b", 0.25)]}), tmp_path / "r", tag="x")
        assert (tmp_path / "r").read_text() == "q1 Q0 a 1 0.5 x\nq1 Q0 b 2 0.25 x\n"

    def test_rank_order_wins_over_line_order(self, tmp_path):
        (tmp_path / "r").write_text("q Q0 b 2 0.1 t\nq Q0 a 1 0.9 t\n")
        assert load_run(tmp_path / "r").doc_ids("q") == ["a", "b"]

    @pytest.mark.parametrize("text", ["q Q0 a 1 0.5\n", "q Q0 a 2 0.5 t\n", "q Q0 a 1 x t\n",
                                      "q Q0 a 1 0.5 t\nq Q0 a 2 0.4 t\n"])
    def test_malformed(self, tmp_path, text):
        (tmp_path / "r").write_text(text)
        with pytest.raises(FormatError):
            load_run(tmp_path / "r")

    def test_run_invariants(self):
        with pytest.raises(ValueError):
            RankedRun({"q": [("a", 0.1), ("b", 0.2)]})
        with pytest.raises(ValueError):
            RankedRun({"q": [("a", 0.3), ("a", 0.2)]})

    def test_tag_without_whitespace(self, tmp_path):
        with pytest.raises(ValueError):
            save_run(RankedRun({"q": [("a", 1.0)]}), tmp_path / "r", tag="two words")


class TestPercent:
    def test_published_cells(self):
        assert percent_change(0.6972, 0.6859) == pytest.approx(1.6475, abs=1e-4)
        assert format_cell(0.6972, 0.6859) == "0.6972(1.6%)"
        assert format_cell(0.5131, 0.4351) == "0.5131(17.9%)"
        assert format_cell(0.5226, 0.5247) == "0.5226(-0.4%)"

    def test_identity(self):
        assert percent_change(0.42, 0.42) == 0.0
        assert format_cell(0.42, 0.42) == "0.4200(0.0%)"

    def test_zero_baseline(self):
        with pytest.raises(ValueError):
            percent_change(0.5, 0.0)

    def test_half_up_rounding_of_means(self):
        assert format_cell((0.7596 + 0.7499) / 2) == "0.7548"
        assert format_cell((0.4011 + 0.4690) / 2) == "0.4351"


def test_evaluate_names():
    reports = evaluate(run_of(q=["a"]), Qrels({"q": {"a": 1}}), ("ndcg@5", "recall@20"))
    assert list(reports) == ["ndcg@5", "recall@20"]
    with pytest.raises(ValueError):
        evaluate(run_of(q=["a"]), Qrels({"q": {"a": 1}}), ("map",))

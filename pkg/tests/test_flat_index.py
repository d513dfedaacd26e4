import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import random_corpus
from reference import full_sort_search
from vprf.embedding_store import EmbeddingCorpus, save_embeddings
from vprf.exceptions import DimensionMismatchError, FormatError, ZeroNormError
from vprf.flat_index import QueryError, batch_search, build, load_index, save_index, search


def _ids(hits):
    return [h.doc_id for h in hits]


def test_norm_of_3_4_vector():
    index = build(EmbeddingCorpus(["d"], [[3.0, 4.0]]))
    np.testing.assert_array_equal(index.norms, [5.0])


def test_zero_vector_names_offending_id():
    corpus = EmbeddingCorpus(["ok", "empty"], [[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ZeroNormError, match="'empty'"):
        build(corpus)


def test_build_rejects_query_corpus():
    with pytest.raises(ValueError):
        build(EmbeddingCorpus(["q"], [[1.0]], kind="queries"))


def test_stored_norms_match_recomputed(rng):
    corpus = random_corpus(rng, 1000, 64)
    index = build(corpus)
    v = corpus.vectors.astype(np.float64)
    expected = np.array([np.sqrt(sum(x * x for x in row)) for row in v])
    np.testing.assert_allclose(index.norms, expected, rtol=1e-6)
    assert (index.norms > 0).all()


def test_orthogonal_pair():
    index = build(EmbeddingCorpus(["d1", "d2"], [[1.0, 0.0], [0.0, 1.0]]))
    hits = search(index, [1.0, 0.0], 2)
    assert [(h.doc_id, h.score, h.rank) for h in hits] == [("d1", 1.0, 1), ("d2", 0.0, 2)]


def test_identical_direction_scores_one():
    basis = np.eye(8, dtype=np.float32)
    index = build(EmbeddingCorpus([f"e{i}" for i in range(8)], basis))
    hits = search(index, basis[5], 3)
    assert hits[0].doc_id == "e5"
    assert hits[0].score == pytest.approx(1.0, abs=1e-6)


def test_ties_broken_by_id_bytes():
    # same vector under ids whose byte order differs from insertion order
    ids = ["b", "a", "B", "é", "aa"]
    index = build(EmbeddingCorpus(ids, np.ones((5, 3))))
    assert _ids(search(index, [1, 1, 1], 5)) == sorted(ids, key=str.encode)
    assert _ids(search(index, [1, 1, 1], 2)) == ["B", "a"]


def test_k_larger_than_corpus_returns_everything(rng):
    index = build(random_corpus(rng, 7, 4))
    hits = search(index, rng.standard_normal(4), 100)
    assert len(hits) == 7
    assert [h.rank for h in hits] == list(range(1, 8))


@pytest.mark.parametrize("query, err", [([1.0, 0.0, 0.0], DimensionMismatchError), ([0.0, 0.0], ZeroNormError)])
def test_search_errors(query, err):
    index = build(EmbeddingCorpus(["d1", "d2"], [[1.0, 0.0], [0.0, 1.0]]))
    with pytest.raises(err):
        search(index, query, 1)


def test_search_rejects_bad_k():
    index = build(EmbeddingCorpus(["d1"], [[1.0]]))
    with pytest.raises(ValueError):
        search(index, [1.0], 0)


def test_matches_full_sort_reference(rng):
    corpus = random_corpus(rng, 1000, 64)
    index = build(corpus)
    for q in rng.standard_normal((50, 64)):
        assert _ids(search(index, q, 10)) == full_sort_search(corpus.ids, corpus.vectors, q, 10)


def test_scores_non_increasing_and_in_range(rng):
    index = build(random_corpus(rng, 300, 16))
    hits = search(index, rng.standard_normal(16), 300)
    scores = [h.score for h in hits]
    assert scores == sorted(scores, reverse=True)
    assert all(-1 - 1e-9 <= s <= 1 + 1e-9 for s in scores)


def test_exact_with_heavy_ties(rng):
    # many duplicated vectors so the k-th score is shared across the boundary
    base = rng.standard_normal((5, 6)).astype(np.float32)
    vectors = base[rng.integers(0, 5, size=200)]
    ids = [f"d{i}" for i in rng.permutation(200)]
    corpus = EmbeddingCorpus(ids, vectors)
    index = build(corpus)
    for q in rng.standard_normal((10, 6)):
        for k in (1, 7, 40, 200):
            assert _ids(search(index, q, k)) == full_sort_search(ids, vectors, q, k)


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float32, (20, 3), elements=st.floats(-4, 4, width=32)),
    arrays(np.float32, (3,), elements=st.floats(-4, 4, width=32)),
    st.floats(1e-3, 1e3),
)
def test_ranking_scale_invariant(vectors, q, c):
    vectors = vectors[np.linalg.norm(vectors, axis=1) > 1e-3]
    if len(vectors) == 0 or np.linalg.norm(q) < 1e-3:
        return
    index = build(EmbeddingCorpus([f"d{i}" for i in range(len(vectors))], vectors))
    a = search(index, q, 10)
    b = search(index, c * q.astype(np.float64), 10)
    assert [h.score for h in a] == pytest.approx([h.score for h in b], abs=1e-6)


def test_deterministic(rng):
    index = build(random_corpus(rng, 500, 32))
    q = rng.standard_normal(32)
    assert search(index, q, 20) == search(index, q, 20)


class TestBatch:
    def test_batch_of_one(self, rng):
        index = build(random_corpus(rng, 100, 8))
        queries = random_corpus(rng, 1, 8, kind="queries", prefix="q")
        assert batch_search(index, queries, 5) == {"q00000": search(index, queries.vectors[0], 5)}

    @pytest.mark.parametrize("threads", [1, 4])
    def test_pointwise_equality(self, rng, threads):
        index = build(random_corpus(rng, 800, 24))
        queries = random_corpus(rng, 40, 24, kind="queries", prefix="q")
        batch = batch_search(index, queries, 15, threads=threads)
        assert list(batch) == list(queries.ids)
        for rec in queries:
            assert batch[rec.id] == search(index, rec.vector, 15)

    def test_duplicate_queries(self, rng):
        index = build(random_corpus(rng, 200, 8))
        v = rng.standard_normal(8)
        queries = EmbeddingCorpus(["x", "y"], [v, v], kind="queries")
        out = batch_search(index, queries, 10)
        assert out["x"] == out["y"]

    def test_errors_carry_query_id(self, rng):
        index = build(random_corpus(rng, 10, 2))
        queries = EmbeddingCorpus(["fine", "zero"], [[1, 0], [0, 0]], kind="queries")
        with pytest.raises(QueryError, match="'zero'") as err:
            batch_search(index, queries, 3)
        assert err.value.query_id == "zero"

    def test_dimension_mismatch(self, rng):
        index = build(random_corpus(rng, 10, 2))
        with pytest.raises(DimensionMismatchError):
            batch_search(index, random_corpus(rng, 2, 3, kind="queries"), 3)


class TestPrenormalize:
    def test_same_ranking_unit_vectors(self, rng):
        corpus = random_corpus(rng, 200, 16)
        raw, unit = build(corpus), build(corpus, prenormalize=True)
        np.testing.assert_allclose(np.linalg.norm(unit.vectors, axis=1), 1.0, rtol=1e-12)
        for q in rng.standard_normal((10, 16)):
            assert _ids(search(raw, q, 20)) == _ids(search(unit, q, 20))


class TestPersistence:
    def test_round_trip(self, rng, tmp_path):
        corpus = random_corpus(rng, 50, 12)
        for pre in (False, True):
            index = build(corpus, prenormalize=pre)
            save_index(index, tmp_path / "i.bin")
            loaded = load_index(tmp_path / "i.bin")
            assert loaded.ids == index.ids and loaded.prenormalize == pre
            np.testing.assert_array_equal(loaded.vectors, index.vectors)
            np.testing.assert_array_equal(loaded.norms, index.norms)

    def test_deterministic_bytes(self, rng, tmp_path):
        corpus = random_corpus(rng, 50, 12)
        save_index(build(corpus), tmp_path / "a.bin")
        save_index(build(corpus), tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_embedding_file_is_not_an_index(self, rng, tmp_path):
        save_embeddings(random_corpus(rng, 5, 3), tmp_path / "e.bin")
        with pytest.raises(FormatError, match="norms block"):
            load_index(tmp_path / "e.bin")

    def test_corrupt_norm_detected(self, rng, tmp_path):
        save_index(build(random_corpus(rng, 5, 3)), tmp_path / "i.bin")
        data = bytearray((tmp_path / "i.bin").read_bytes())
        data[-8:] = np.float64(123.0).tobytes()
        (tmp_path / "i.bin").write_bytes(bytes(data))
        with pytest.raises(FormatError, match="d00004"):
            load_index(tmp_path / "i.bin")

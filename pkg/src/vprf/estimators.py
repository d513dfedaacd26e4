"""scikit-learn style estimators over the flat index and feedback operators.

``fit`` indexes a passage corpus, ``predict`` returns a :class:`RankedRun`,
and :class:`VectorPRF` additionally ``transform``s query vectors into their
refined form. Parameters are plain constructor arguments, so ``get_params``,
``set_params`` and ``sklearn.base.clone`` work as usual.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix
from .embedding_store import EmbeddingCorpus
from .evaluation import RankedRun, evaluate
from .feedback import FeedbackSet, VprfParams, refine
from .flat_index import batch_search, build, search


def _as_corpus(X, ids, kind):
    if isinstance(X, EmbeddingCorpus):
        return X if X.kind == kind else X.with_kind(kind)
    X = check_matrix(X, name="X", dtype=np.float32)
    if ids is None:
        prefix = "d" if kind == "passages" else "q"
        ids = [f"{prefix}{i}" for i in range(X.shape[0])]
    return EmbeddingCorpus(ids, X, kind=kind)


class FlatCosineRetriever(BaseEstimator):
    """Exact cosine top-k retrieval.

    Parameters
    ----------
    k : int, default=1000
        Hits returned per query.
    prenormalize : bool, default=False
        L2-normalize passage vectors at index time.
    threads : int, default=1
    """

    def __init__(self, k=1000, prenormalize=False, threads=1):
        self.k = k
        self.prenormalize = prenormalize
        self.threads = threads

    def fit(self, X, y=None, ids=None):
        corpus = _as_corpus(X, ids, "passages")
        self.index_ = build(corpus, prenormalize=self.prenormalize)
        self.n_features_in_ = corpus.dimension
        return self

    def _queries(self, X, ids):
        check_is_fitted(self, "index_")
        return _as_corpus(X, ids, "queries")

    def predict(self, X, ids=None):
        """Return a :class:`RankedRun` with the top ``k`` hits of each query."""
        queries = self._queries(X, ids)
        return RankedRun(batch_search(self.index_, queries, self.k, threads=self.threads))

    def score(self, X, qrels, ids=None, metric="ndcg@10", min_grade=1):
        run = self.predict(X, ids=ids)
        return evaluate(run, qrels, (metric,), min_grade=min_grade)[metric].mean


class VectorPRF(FlatCosineRetriever):
    """Two-stage retrieval with vector pseudo relevance feedback.

    Parameters
    ----------
    method : {"average", "rocchio"}, default="rocchio"
    kappa : int, default=3
        Number of first-stage passages used as feedback.
    alpha, beta : float, default=1.0, 0.5
        Query and feedback weights (rocchio only).
    normalize : bool, default=False
        L2-normalize the query and feedback vectors before combining them.
    k, prenormalize, threads
        As for :class:`FlatCosineRetriever`.
    """

    def __init__(self, method="rocchio", kappa=3, alpha=1.0, beta=0.5, normalize=False,
                 k=1000, prenormalize=False, threads=1):
        super().__init__(k=k, prenormalize=prenormalize, threads=threads)
        self.method = method
        self.kappa = kappa
        self.alpha = alpha
        self.beta = beta
        self.normalize = normalize

    @property
    def params_(self):
        return VprfParams(self.method, self.kappa, self.alpha, self.beta)

    def transform(self, X, ids=None):
        """Refined query vectors, shape (n_queries, dimension), float64."""
        queries = self._queries(X, ids)
        params = self.params_
        out = np.empty((len(queries), queries.dimension), dtype=np.float64)
        for i, q in enumerate(queries.vectors.astype(np.float64)):
            hits = search(self.index_, q, params.kappa)
            out[i] = refine(q, FeedbackSet.from_hits(self.index_, hits), params, normalize=self.normalize)
        return out

    def predict(self, X, ids=None):
        queries = self._queries(X, ids)
        refined = self.transform(queries)
        return RankedRun({
            qid: search(self.index_, v, self.k) for qid, v in zip(queries.ids, refined)
        })

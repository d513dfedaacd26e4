"""Vector pseudo relevance feedback: query refinement in embedding space.

Two operators combine a query vector with the vectors of the top-ranked
first-pass passages:

* average: the equally weighted mean of the query and the kappa feedback
  vectors (kappa + 1 terms);
* rocchio: ``alpha * q + beta * mean(feedback)``, where the mean covers the
  feedback vectors only.

So ``average(q, F) == rocchio(q, F, 1/(kappa+1), kappa/(kappa+1))``.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_matrix, check_non_negative, check_positive_int, check_vector
from .exceptions import DimensionMismatchError, VprfError
from .flat_index import QueryError, _ordered_map, search

METHODS = ("average", "rocchio")
GRID_VARIANTS = ("alpha_beta_grid", "fixed_alpha_one", "average")
DEFAULT_KAPPAS = (1, 2, 3, 5, 10)
# 0.1, 0.2, ..., 0.9 as the nearest doubles to the decimal literals
WEIGHTS = tuple(i / 10 for i in range(1, 10))


@dataclass(frozen=True)
class FeedbackSet:
    """Feedback passages in first-pass rank order."""

    doc_ids: tuple
    vectors: np.ndarray

    def __post_init__(self):
        vectors = check_matrix(np.atleast_2d(self.vectors), name="feedback vectors")
        if vectors.shape[0] < 1:
            raise ValueError("feedback set is empty")
        ids = tuple(self.doc_ids)
        if len(ids) != vectors.shape[0]:
            raise ValueError(f"{len(ids)} doc ids for {vectors.shape[0]} feedback vectors")
        vectors.setflags(write=False)
        object.__setattr__(self, "doc_ids", ids)
        object.__setattr__(self, "vectors", vectors)

    def __len__(self):
        return len(self.doc_ids)

    @classmethod
    def from_hits(cls, index, hits):
        ids = tuple(h.doc_id for h in hits)
        return cls(ids, np.stack([index.vector(d) for d in ids]))


@dataclass(frozen=True)
class VprfParams:
    """Feedback method and its hyperparameters.

    ``alpha`` and ``beta`` are only meaningful for rocchio and are stored as
    ``None`` for average.
    """

    method: str
    kappa: int
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        object.__setattr__(self, "kappa", check_positive_int(self.kappa, "kappa"))
        if self.method == "average":
            object.__setattr__(self, "alpha", None)
            object.__setattr__(self, "beta", None)
            return
        if self.alpha is None or self.beta is None:
            raise ValueError("rocchio requires alpha and beta")
        alpha = check_non_negative(self.alpha, "alpha")
        beta = check_non_negative(self.beta, "beta")
        if alpha == 0 and beta == 0:
            raise ValueError("alpha and beta cannot both be zero")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def tag(self):
        if self.method == "average":
            return f"average-k{self.kappa}"
        return f"rocchio-k{self.kappa}-a{self.alpha:g}-b{self.beta:g}"

    def __str__(self):
        return self.tag


@dataclass(frozen=True)
class GridSpec:
    variant: str = "alpha_beta_grid"
    kappa_set: tuple = field(default=DEFAULT_KAPPAS)

    def __post_init__(self):
        if self.variant not in GRID_VARIANTS:
            raise ValueError(f"variant must be one of {GRID_VARIANTS}, got {self.variant!r}")
        kappas = tuple(sorted({check_positive_int(k, "kappa") for k in self.kappa_set}))
        if not kappas:
            raise ValueError("kappa_set is empty")
        object.__setattr__(self, "kappa_set", kappas)


def param_grid(spec=None):
    """Enumerate configs: kappa outermost, then alpha, then beta, all ascending."""
    spec = spec or GridSpec()
    if spec.variant == "average":
        return [VprfParams("average", k) for k in spec.kappa_set]
    alphas = WEIGHTS if spec.variant == "alpha_beta_grid" else (1.0,)
    return [
        VprfParams("rocchio", k, a, b)
        for k, a, b in itertools.product(spec.kappa_set, alphas, WEIGHTS)
    ]


def _operands(query_vector, feedback):
    if isinstance(feedback, FeedbackSet):
        fb = feedback.vectors
    else:
        fb = np.atleast_2d(np.asarray(feedback, dtype=np.float64))
        if fb.size == 0:
            raise ValueError("feedback set is empty")
        fb = check_matrix(fb, name="feedback vectors")
    q = check_vector(query_vector, name="query vector")
    if fb.shape[1] != q.shape[0]:
        raise DimensionMismatchError(
            f"feedback vectors have dimension {fb.shape[1]}, query has {q.shape[0]}"
        )
    return q, fb


def _unit_rows(m):
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)


def average_feedback(query_vector, feedback, normalize=False):
    """Mean of the query vector and every feedback vector, equally weighted."""
    q, fb = _operands(query_vector, feedback)
    if normalize:
        q, fb = _unit_rows(q), _unit_rows(fb)
    return (q + fb.sum(axis=0)) / (fb.shape[0] + 1)


def rocchio_feedback(query_vector, feedback, alpha, beta, normalize=False):
    """``alpha * q + beta * mean(feedback)``; no negative term."""
    alpha = check_non_negative(alpha, "alpha")
    beta = check_non_negative(beta, "beta")
    if alpha == 0 and beta == 0:
        raise ValueError("alpha and beta cannot both be zero")
    q, fb = _operands(query_vector, feedback)
    if normalize:
        q, fb = _unit_rows(q), _unit_rows(fb)
    return alpha * q + beta * fb.mean(axis=0)


def refine(query_vector, feedback, params, normalize=False):
    if params.method == "average":
        return average_feedback(query_vector, feedback, normalize=normalize)
    return rocchio_feedback(query_vector, feedback, params.alpha, params.beta, normalize=normalize)


def run_vprf(index, query, params, k_final, normalize=False, first_pass=None):
    """Retrieve, refine the query from the top-kappa hits, retrieve again.

    ``query`` is an :class:`EmbeddingRecord` or a bare vector. A precomputed
    first-pass hit list of depth >= kappa may be passed as ``first_pass`` to
    skip stage one.
    """
    k_final = check_positive_int(k_final, "k_final")
    vector = getattr(query, "vector", query)
    q = check_vector(vector, index.dimension, name="query vector")
    if first_pass is None:
        first_pass = search(index, q, params.kappa)
    feedback = FeedbackSet.from_hits(index, first_pass[: params.kappa])
    refined = refine(q, feedback, params, normalize=normalize)
    return search(index, refined, k_final)


def batch_vprf(index, queries, params, k_final, normalize=False, threads=1):
    """Apply :func:`run_vprf` to every query of a corpus."""
    if queries.dimension != index.dimension:
        raise DimensionMismatchError(
            f"queries have dimension {queries.dimension}, index has {index.dimension}"
        )
    vectors = queries.vectors.astype(np.float64)

    def one(i):
        try:
            return run_vprf(index, vectors[i], params, k_final, normalize=normalize)
        except (ValueError, VprfError) as exc:
            raise QueryError(queries.ids[i], exc) from exc

    return _ordered_map(one, queries.ids, threads)

"""Exact (brute-force) cosine top-k search over a passage corpus."""

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._validation import atomic_write, check_nonzero_norm, check_positive_int, check_vector
from .embedding_store import EmbeddingCorpus, decode_binary, encode_binary
from .exceptions import DimensionMismatchError, FormatError, VprfError, ZeroNormError

logger = logging.getLogger(__name__)

NORMS_MAGIC = b"VPRN"
NORMS_VERSION = 1
_NORMS_HEADER = struct.Struct("<4sIIQ")
_FLAG_PRENORMALIZED = 1
NORM_RTOL = 1e-6


@dataclass(frozen=True)
class ScoredHit:
    doc_id: str
    score: float
    rank: int


class FlatIndex:
    """Immutable exact-search index over raw passage vectors.

    Vectors are widened to float64 at build time and norms are precomputed,
    so a search is one matrix-vector product followed by an exact top-k
    selection. Ties on score are broken by ascending doc id (byte order).

    With ``prenormalize=True`` the stored vectors are L2-normalized at build
    time (an ablation switch; rankings are unchanged but feedback vectors
    drawn from the index become unit length).
    """

    def __init__(self, ids, vectors, norms, prenormalize=False, source=None):
        self._ids = tuple(ids)
        self._source = source
        self._vectors = vectors
        self._norms = norms
        self.prenormalize = prenormalize
        # rank of each id under byte-wise ordering, for tie-breaking
        order = sorted(range(len(self._ids)), key=lambda i: self._ids[i].encode("utf-8"))
        id_rank = np.empty(len(self._ids), dtype=np.int64)
        id_rank[order] = np.arange(len(self._ids))
        self._id_rank = id_rank
        self._positions = {rid: i for i, rid in enumerate(self._ids)}
        for arr in (self._vectors, self._norms, self._id_rank):
            arr.setflags(write=False)

    @property
    def ids(self):
        return self._ids

    @property
    def vectors(self):
        """Read-only float64 matrix of stored vectors."""
        return self._vectors

    @property
    def norms(self):
        return self._norms

    @property
    def dimension(self):
        return self._vectors.shape[1]

    def __len__(self):
        return len(self._ids)

    def vector(self, doc_id):
        return self._vectors[self._positions[doc_id]]

    def position(self, doc_id):
        return self._positions[doc_id]

    def __repr__(self):
        return f"FlatIndex(n={len(self)}, dimension={self.dimension}, prenormalize={self.prenormalize})"


def _row_norms(vectors):
    vectors = np.asarray(vectors, dtype=np.float64)
    return np.sqrt(np.einsum("ij,ij->i", vectors, vectors))


def build(passages, prenormalize=False):
    """Build a :class:`FlatIndex` from a passage corpus.

    Raises ``ZeroNormError`` naming the first zero vector.
    """
    if not isinstance(passages, EmbeddingCorpus):
        raise TypeError("passages must be an EmbeddingCorpus")
    if len(passages) == 0:
        raise ValueError("cannot index an empty corpus")
    if passages.kind != "passages":
        raise ValueError(f"expected a passages corpus, got kind={passages.kind!r}")
    vectors = passages.vectors.astype(np.float64)
    norms = _row_norms(vectors)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ZeroNormError(f"passage {passages.ids[zero[0]]!r} has a zero vector")
    if prenormalize:
        vectors /= norms[:, None]
        norms = _row_norms(vectors)
    return FlatIndex(passages.ids, vectors, norms, prenormalize=prenormalize, source=passages.vectors)


def _top_k(index, scores, k):
    n = scores.shape[0]
    if k >= n:
        cand = np.arange(n)
    else:
        # every index whose score reaches the k-th largest, so ties at the
        # boundary are resolved by id rather than by partition order
        kth = np.partition(scores, n - k)[n - k]
        cand = np.flatnonzero(scores >= kth)
    order = np.lexsort((index._id_rank[cand], -scores[cand]))
    return cand[order[:k]]


def _score(index, q):
    qnorm = check_nonzero_norm(q)
    return (index.vectors @ q) / (index.norms * qnorm)


def search(index, query_vector, k):
    """Return the exact top-``min(k, n)`` hits for ``query_vector`` by cosine."""
    k = check_positive_int(k, "k")
    q = check_vector(query_vector, index.dimension, name="query vector")
    scores = _score(index, q)
    top = _top_k(index, scores, k)
    ids = index.ids
    return [ScoredHit(ids[i], float(scores[i]), r) for r, i in enumerate(top, start=1)]


class QueryError(VprfError):
    def __init__(self, query_id, cause):
        super().__init__(f"query {query_id!r}: {cause}")
        self.query_id = query_id
        self.cause = cause


def batch_search(index, queries, k, threads=1):
    """Search every query in ``queries``; returns ``{query_id: [ScoredHit]}``.

    Each result equals ``search`` on that query alone. ``threads > 1``
    evaluates queries concurrently without changing the output.
    """
    k = check_positive_int(k, "k")
    if queries.dimension != index.dimension:
        raise DimensionMismatchError(
            f"queries have dimension {queries.dimension}, index has {index.dimension}"
        )
    vectors = queries.vectors.astype(np.float64)

    def one(i):
        try:
            return search(index, vectors[i], k)
        except (ValueError, VprfError) as exc:
            raise QueryError(queries.ids[i], exc) from exc

    return _ordered_map(one, queries.ids, threads)


def _ordered_map(fn, ids, threads):
    if threads is None or threads <= 1 or len(ids) <= 1:
        return {qid: fn(i) for i, qid in enumerate(ids)}
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(fn, range(len(ids))))
    return dict(zip(ids, results))


# -- persistence ----------------------------------------------------------


def save_index(index, path):
    """Write the index as a binary embedding block followed by a norms block.

    The embedding block holds the float32 source vectors (raw, even for a
    prenormalized index), so the file remains readable by tools that only
    understand the embedding format header.
    """
    source_vectors = index._source
    if source_vectors is None:
        raise ValueError("index has no float32 source vectors to persist")
    block = encode_binary(EmbeddingCorpus(index.ids, source_vectors, kind="passages"))
    flags = _FLAG_PRENORMALIZED if index.prenormalize else 0
    raw_norms = _row_norms(source_vectors)
    sidecar = _NORMS_HEADER.pack(NORMS_MAGIC, NORMS_VERSION, flags, len(index)) + raw_norms.astype("<f8").tobytes()
    with atomic_write(path, "wb") as fh:
        fh.write(block)
        fh.write(sidecar)


def load_index(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    corpus, pos = decode_binary(buf, kind="passages", allow_trailing=True)
    if len(buf) - pos < _NORMS_HEADER.size:
        raise FormatError("index file is missing its norms block")
    magic, version, flags, count = _NORMS_HEADER.unpack_from(buf, pos)
    if magic != NORMS_MAGIC:
        raise FormatError(f"bad norms block magic {magic!r}")
    if version != NORMS_VERSION:
        raise FormatError(f"unsupported norms block version {version}")
    if count != len(corpus):
        raise FormatError(f"norms block has {count} entries for {len(corpus)} vectors")
    pos += _NORMS_HEADER.size
    if len(buf) - pos != 8 * count:
        raise FormatError("norms block is truncated or has trailing bytes")
    stored = np.frombuffer(buf, dtype="<f8", count=count, offset=pos)
    index = build(corpus, prenormalize=bool(flags & _FLAG_PRENORMALIZED))
    raw = _row_norms(corpus.vectors)
    bad = np.flatnonzero(np.abs(stored - raw) > NORM_RTOL * raw)
    if bad.size:
        raise FormatError(
            f"stored norm for {corpus.ids[bad[0]]!r} disagrees with its vector", record=int(bad[0])
        )
    return index


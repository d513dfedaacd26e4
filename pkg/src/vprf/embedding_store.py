"""Query and passage embedding collections and their on-disk formats.

Two formats are supported:

``binary`` (little-endian)::

    b"VPRF" | version u32 (=1) | dimension u32 | count u64
    then per record: id length u16 | id UTF-8 bytes | dimension x f32

``line_record``: one record per line, ``id<TAB>v1 v2 ... vd``. Lines starting
with ``#`` and blank lines are skipped.

Vectors are kept as float32, exactly as stored; consumers widen to float64.
"""

import logging
import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ._validation import atomic_write
from .exceptions import DimensionMismatchError, FormatError

logger = logging.getLogger(__name__)

MAGIC = b"VPRF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
_ID_LEN = struct.Struct("<H")
_MAX_ID_BYTES = 0xFFFF

KINDS = ("queries", "passages")
FORMATS = ("binary", "line_record")
_FORMAT_ALIASES = {"binary": "binary", "bin": "binary", "line_record": "line_record", "line": "line_record"}


@dataclass(frozen=True)
class EmbeddingRecord:
    id: str
    vector: np.ndarray

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValueError("record id must be a non-empty string")
        vec = np.asarray(self.vector, dtype=np.float32)
        if vec.ndim != 1:
            raise ValueError(f"record {self.id!r}: vector must be one-dimensional")
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"record {self.id!r}: non-finite component")
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingRecord):
            return NotImplemented
        return self.id == other.id and _bits_equal(self.vector, other.vector)

    __hash__ = None


class EmbeddingCorpus:
    """An ordered, id-addressed collection of equal-length float32 vectors.

    The corpus is immutable once built: the vector matrix is read-only and
    may be shared across threads.

    Parameters
    ----------
    ids : sequence of str
        Unique, non-empty record identifiers, in record order.
    vectors : array-like of shape (n_records, dimension)
        Converted to float32.
    kind : {"queries", "passages"}
    """

    def __init__(self, ids, vectors, kind="passages"):
        if kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
        ids = tuple(ids)
        vectors = np.array(vectors, dtype=np.float32, copy=True)
        if not ids:
            raise ValueError("corpus must contain at least one record")
        if vectors.ndim != 2 or vectors.shape[0] != len(ids):
            raise ValueError(
                f"vectors must have shape ({len(ids)}, dimension), got {vectors.shape}"
            )
        if vectors.shape[1] < 1:
            raise ValueError("dimension must be positive")
        seen = {}
        for i, rid in enumerate(ids):
            if not isinstance(rid, str) or not rid:
                raise FormatError(f"empty or non-text id at record {i}", record=i)
            if rid in seen:
                raise FormatError(
                    f"duplicate id {rid!r} at record {i} (first seen at record {seen[rid]})",
                    record=i,
                )
            seen[rid] = i
        finite = np.isfinite(vectors).all(axis=1)
        if not finite.all():
            i = int(np.flatnonzero(~finite)[0])
            raise FormatError(f"non-finite component at record {i} (id {ids[i]!r})", record=i)
        vectors.setflags(write=False)
        self._ids = ids
        self._vectors = vectors
        self._index = seen
        self.kind = kind

    @classmethod
    def from_records(cls, records, kind="passages"):
        records = list(records)
        if not records:
            raise ValueError("corpus must contain at least one record")
        dim = records[0].vector.shape[0]
        for i, rec in enumerate(records):
            if rec.vector.shape[0] != dim:
                raise DimensionMismatchError(
                    f"dimension mismatch at record {i}: {rec.vector.shape[0]} != {dim}"
                )
        return cls([r.id for r in records], np.stack([r.vector for r in records]), kind=kind)

    @property
    def ids(self):
        return self._ids

    @property
    def vectors(self):
        """Read-only float32 matrix of shape (n_records, dimension)."""
        return self._vectors

    @property
    def dimension(self):
        return self._vectors.shape[1]

    @property
    def records(self):
        return list(self)

    def __len__(self):
        return len(self._ids)

    def __iter__(self) -> Iterator[EmbeddingRecord]:
        for rid, vec in zip(self._ids, self._vectors):
            yield EmbeddingRecord(rid, vec)

    def __getitem__(self, key):
        if isinstance(key, str):
            i = self._index[key]
        else:
            i = key
        return EmbeddingRecord(self._ids[i], self._vectors[i])

    def __contains__(self, rid):
        return rid in self._index

    def position(self, rid):
        return self._index[rid]

    def with_kind(self, kind):
        return EmbeddingCorpus(self._ids, self._vectors, kind=kind)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingCorpus):
            return NotImplemented
        return (
            self.kind == other.kind
            and self._ids == other._ids
            and _bits_equal(self._vectors, other._vectors)
        )

    __hash__ = None

    def __repr__(self):
        return f"EmbeddingCorpus(kind={self.kind!r}, n={len(self)}, dimension={self.dimension})"


def _bits_equal(a, b):
    a = np.ascontiguousarray(a, dtype=np.float32)
    b = np.ascontiguousarray(b, dtype=np.float32)
    return a.shape == b.shape and a.view(np.uint32).tobytes() == b.view(np.uint32).tobytes()


def _normalize_format(fmt):
    try:
        return _FORMAT_ALIASES[fmt]
    except KeyError:
        raise ValueError(f"unknown embedding format {fmt!r}; expected one of {FORMATS}") from None


# -- binary ---------------------------------------------------------------


def encode_binary(corpus):
    """Serialize ``corpus`` to the binary format and return the bytes."""
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, corpus.dimension, len(corpus))]
    payload = corpus.vectors.astype("<f4", copy=False)
    for rid, vec in zip(corpus.ids, payload):
        raw = rid.encode("utf-8")
        if len(raw) > _MAX_ID_BYTES:
            raise ValueError(f"id {rid[:32]!r}... exceeds {_MAX_ID_BYTES} UTF-8 bytes")
        parts.append(_ID_LEN.pack(len(raw)))
        parts.append(raw)
        parts.append(vec.tobytes())
    return b"".join(parts)


def decode_binary(buf, kind="passages", offset=0, allow_trailing=False):
    """Parse a binary embedding block from ``buf`` starting at ``offset``.

    Returns ``(corpus, end_offset)``.
    """
    view = memoryview(buf)
    if len(view) - offset < _HEADER.size:
        raise FormatError("truncated file: incomplete header")
    magic, version, dim, count = _HEADER.unpack_from(view, offset)
    if magic != MAGIC:
        raise FormatError(f"bad magic bytes {magic!r}; not a VPRF embedding file")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    if dim < 1:
        raise FormatError("header declares dimension 0")
    if count < 1:
        raise FormatError("header declares zero records")
    pos = offset + _HEADER.size
    vec_bytes = 4 * dim
    if count * (_ID_LEN.size + vec_bytes) > len(view) - pos:
        raise FormatError(
            f"truncated file: header declares {count} records of dimension {dim} "
            f"but only {len(view) - pos} payload bytes follow"
        )
    ids = []
    vectors = np.empty((count, dim), dtype=np.float32)
    for i in range(count):
        if pos + _ID_LEN.size > len(view):
            raise FormatError(f"truncated file at record {i}: missing id length", record=i)
        (n,) = _ID_LEN.unpack_from(view, pos)
        pos += _ID_LEN.size
        if pos + n > len(view):
            raise FormatError(f"truncated file at record {i}: incomplete id", record=i)
        try:
            rid = bytes(view[pos:pos + n]).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid UTF-8 id at record {i}", record=i) from exc
        pos += n
        if pos + vec_bytes > len(view):
            remaining = len(view) - pos
            if i == count - 1 and not allow_trailing and remaining % 4 == 0:
                raise DimensionMismatchError(
                    f"dimension mismatch at record {i}: {remaining // 4} floats, "
                    f"header declares {dim}"
                )
            raise FormatError(f"truncated file at record {i}: incomplete vector", record=i)
        vectors[i] = np.frombuffer(view, dtype="<f4", count=dim, offset=pos)
        pos += vec_bytes
        ids.append(rid)
    if not allow_trailing and pos != len(view):
        raise FormatError(
            f"unexpected {len(view) - pos} trailing bytes after record {count - 1}",
            record=count,
        )
    return EmbeddingCorpus(ids, vectors, kind=kind), pos


# -- line records ---------------------------------------------------------


def _format_float(x):
    # shortest text that parses back to the same float32
    return str(np.float32(x))


def encode_lines(corpus):
    lines = []
    for rid, vec in zip(corpus.ids, corpus.vectors):
        if any(c in rid for c in "\t\n\r") or rid.startswith("#"):
            raise ValueError(f"id {rid!r} cannot be written in line_record format")
        lines.append(rid + "\t" + " ".join(_format_float(x) for x in vec))
    return "\n".join(lines) + "\n"


def decode_lines(text, kind="passages"):
    ids = []
    rows = []
    dim = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        record = len(ids)
        rid, tab, rest = line.partition("\t")
        if not tab or not rid:
            raise FormatError(
                f"malformed line {lineno} (record {record}): expected 'id<TAB>floats'",
                record=record,
            )
        try:
            values = np.array([float(tok) for tok in rest.split(" ") if tok], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"unparsable float at record {record} (line {lineno})", record=record) from exc
        if dim is None:
            dim = values.shape[0]
            if dim == 0:
                raise FormatError(f"record {record} has no vector components", record=record)
        elif values.shape[0] != dim:
            raise DimensionMismatchError(
                f"dimension mismatch at record {record}: {values.shape[0]} != {dim}"
            )
        if not np.all(np.isfinite(values)):
            raise FormatError(f"non-finite component at record {record}", record=record)
        ids.append(rid)
        rows.append(values)
    if not ids:
        raise FormatError("file contains no records")
    with np.errstate(over="raise"):
        try:
            vectors = np.stack(rows).astype(np.float32)
        except FloatingPointError as exc:
            raise FormatError("component overflows float32") from exc
    return EmbeddingCorpus(ids, vectors, kind=kind)


# -- public API -----------------------------------------------------------


def load_embeddings(path, format="binary", kind="passages"):
    """Load and validate an embedding file.

    Raises :class:`FormatError` (or :class:`DimensionMismatchError`) naming the
    offending record on any violation: bad header, truncated payload,
    dimension mismatch, duplicate id or non-finite component.
    """
    fmt = _normalize_format(format)
    if fmt == "binary":
        with open(path, "rb") as fh:
            buf = fh.read()
        corpus, _ = decode_binary(buf, kind=kind)
    else:
        with open(path, encoding="utf-8") as fh:
            corpus = decode_lines(fh.read(), kind=kind)
    logger.debug("loaded %r from %s", corpus, path)
    return corpus


def save_embeddings(corpus, path, format="binary"):
    fmt = _normalize_format(format)
    if not isinstance(corpus, EmbeddingCorpus) or len(corpus) == 0:
        raise ValueError("refusing to write an empty or invalid corpus")
    if fmt == "binary":
        data = encode_binary(corpus)
        with atomic_write(path, "wb") as fh:
            fh.write(data)
    else:
        text = encode_lines(corpus)
        with atomic_write(path, "w") as fh:
            fh.write(text)


# -- synthetic data -------------------------------------------------------


def synth_corpus(n_clusters, docs_per_cluster, dimension, noise_scale, seed):
    """Generate a clustered corpus with one query per cluster.

    Each cluster has a standard-normal centroid. Passages are the centroid
    plus ``noise_scale``-scaled Gaussian noise; the cluster's query is the
    centroid plus independent noise. Every passage in a cluster is judged
    relevant (grade 1) to that cluster's query.

    Returns ``(passages, queries, qrels)``.
    """
    from .evaluation import Qrels

    for name, value in (
        ("n_clusters", n_clusters),
        ("docs_per_cluster", docs_per_cluster),
        ("dimension", dimension),
    ):
        if int(value) != value or value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value}")
    if not noise_scale >= 0:
        raise ValueError(f"noise_scale must be >= 0, got {noise_scale}")

    rng = np.random.default_rng(seed)
    centroids = rng.standard_normal((n_clusters, dimension))
    passage_noise = rng.standard_normal((n_clusters, docs_per_cluster, dimension))
    query_noise = rng.standard_normal((n_clusters, dimension))
    passages = centroids[:, None, :] + noise_scale * passage_noise
    queries = centroids + noise_scale * query_noise

    cw = len(str(n_clusters - 1))
    dw = len(str(docs_per_cluster - 1))
    doc_ids = [f"c{c:0{cw}d}-d{j:0{dw}d}" for c in range(n_clusters) for j in range(docs_per_cluster)]
    query_ids = [f"q{c:0{cw}d}" for c in range(n_clusters)]
    judgments = {
        query_ids[c]: {doc_ids[c * docs_per_cluster + j]: 1 for j in range(docs_per_cluster)}
        for c in range(n_clusters)
    }
    return (
        EmbeddingCorpus(doc_ids, passages.reshape(-1, dimension), kind="passages"),
        EmbeddingCorpus(query_ids, queries, kind="queries"),
        Qrels(judgments),
    )

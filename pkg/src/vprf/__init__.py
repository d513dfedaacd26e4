"""Vector pseudo relevance feedback over an exact cosine flat index."""

from .embedding_store import (
    EmbeddingCorpus,
    EmbeddingRecord,
    load_embeddings,
    save_embeddings,
    synth_corpus,
)
from .estimators import FlatCosineRetriever, VectorPRF
from .evaluation import (
    MetricReport,
    Qrels,
    RankedRun,
    evaluate,
    load_qrels,
    load_run,
    ndcg_at_k,
    percent_change,
    recall_at_k,
    save_qrels,
    save_run,
)
from .exceptions import (
    DimensionMismatchError,
    FormatError,
    RaggedResultsError,
    VprfError,
    ZeroNormError,
)
from .feedback import (
    FeedbackSet,
    GridSpec,
    VprfParams,
    average_feedback,
    batch_vprf,
    param_grid,
    rocchio_feedback,
    run_vprf,
)
from .flat_index import FlatIndex, ScoredHit, batch_search, build, load_index, save_index, search
from .sweep import (
    AggregateReport,
    SweepResult,
    aggregate,
    best_in_average,
    emit_report,
    oracle,
    run_sweep,
    time_per_query,
)

__version__ = "0.1.0"

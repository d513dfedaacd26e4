import numpy as np

from vprf.embedding_store import EmbeddingCorpus


def random_corpus(rng, n, dim, kind="passages", prefix="d"):
    ids = [f"{prefix}{i:05d}" for i in range(n)]
    return EmbeddingCorpus(ids, rng.standard_normal((n, dim)).astype(np.float32), kind=kind)

"""Small builders shared across test modules."""

import numpy as np

from rrkit import EmbeddingSet
from rrkit.ranking import DistanceMatrix


def random_corpus(n, dim, seed, writers=None, split="test", prefix="s"):
    """Random unit-ish vectors with round-robin writer labels."""
    rng = np.random.default_rng(seed)
    vectors = rng.normal(size=(n, dim))
    writers = writers or max(2, n // 3)
    ids = tuple(f"{prefix}{i:04d}" for i in range(n))
    labels = tuple(f"w{i % writers:03d}" for i in range(n))
    return EmbeddingSet(ids, labels, vectors, split)


def dist_dict(matrix: DistanceMatrix):
    """{query: {candidate: distance}} copy of a DistanceMatrix."""
    return {
        q: {c: float(matrix.values[i, j]) for j, c in enumerate(matrix.candidate_ids)}
        for i, q in enumerate(matrix.query_ids)
    }


def ranked_ids_by_query(ranking):
    """{query: [candidate ids in rank order]}."""
    return {
        q: [ranking.candidate_ids[j] for j in ranking.order[qi]]
        for qi, q in enumerate(ranking.query_ids)
    }


def relevant_by_query(embeddings):
    """{sample: set of same-writer samples, self excluded}."""
    out = {}
    for sid, wid in zip(embeddings.sample_ids, embeddings.writer_ids):
        out[sid] = {
            s
            for s, w in zip(embeddings.sample_ids, embeddings.writer_ids)
            if w == wid and s != sid
        }
    return out

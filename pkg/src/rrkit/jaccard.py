"""Jaccard-distance re-ranking over k-reciprocal neighbor set vectors.

Each sample's reciprocal set is encoded as a sparse nonnegative vector with
exp(-distance) weights on its members; pairs are compared by the Jaccard
distance 1 - sum(min)/(sum(max) + eps) and blended with the original distance
through the weight lambda.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ranking import DistanceMatrix, Ranking, reciprocal_mask, sort_distance_rows

DEFAULT_EPSILON = 1e-8


@dataclass(frozen=True, eq=False)
class SetVector:
    """Weighted reciprocal-set membership vector for one sample.

    Entry i is exp(-d(owner, x_i)) when x_i is a reciprocal neighbor of the
    owner and 0 otherwise; indices follow the ranking's candidate order.
    """

    owner: str
    entries: np.ndarray

    def __post_init__(self) -> None:
        entries = np.ascontiguousarray(self.entries, dtype=np.float64)
        if entries.ndim != 1:
            raise ValueError("set vector entries must be 1-D")
        if not np.isfinite(entries).all() or (entries < 0).any():
            raise ValueError("set vector entries must be finite and nonnegative")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)


@dataclass(frozen=True)
class RerankConfig:
    k: int
    lambda_value: float
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0.0 <= self.lambda_value <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lambda_value}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")

    def to_dict(self) -> dict:
        return {"k": self.k, "lambda": self.lambda_value, "epsilon": self.epsilon}


def _aligned_square_distances(
    distances: DistanceMatrix, ids: tuple[str, ...]
) -> np.ndarray:
    """Distance values with rows and columns both in `ids` order."""
    if set(distances.query_ids) != set(ids) or set(distances.candidate_ids) != set(ids):
        raise ValueError("distance matrix must cover exactly the ranked samples")
    qpos = {q: i for i, q in enumerate(distances.query_ids)}
    cpos = {c: j for j, c in enumerate(distances.candidate_ids)}
    rows = np.fromiter((qpos[s] for s in ids), dtype=np.int64, count=len(ids))
    cols = np.fromiter((cpos[s] for s in ids), dtype=np.int64, count=len(ids))
    return distances.values[np.ix_(rows, cols)]


def build_set_vectors(
    ranking: Ranking, distances: DistanceMatrix, k: int
) -> dict[str, SetVector]:
    """Set vector per sample, indexed by the ranking's candidate order."""
    ids, mask = reciprocal_mask(ranking, k)
    dist = _aligned_square_distances(distances, ids)
    weights = np.where(mask, np.exp(-dist), 0.0)
    return {ids[i]: SetVector(owner=ids[i], entries=weights[i]) for i in range(len(ids))}


def jaccard_distance(a: SetVector, b: SetVector, epsilon: float = DEFAULT_EPSILON) -> float:
    """1 - sum(min)/(sum(max) + eps); eps keeps disjoint-empty pairs at 1.0."""
    if a.entries.shape != b.entries.shape:
        raise ValueError(
            f"set vector length mismatch: {a.entries.shape[0]} vs {b.entries.shape[0]}"
        )
    mins = np.minimum(a.entries, b.entries).sum()
    maxs = np.maximum(a.entries, b.entries).sum()
    return float(1.0 - mins / (maxs + epsilon))


def final_distance(original: float, jaccard: float, lambda_value: float) -> float:
    """Blend of re-ranking and original distance: (1-lambda)*jaccard + lambda*original."""
    if not 0.0 <= lambda_value <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lambda_value}")
    return (1.0 - lambda_value) * jaccard + lambda_value * original


def jaccard_matrix(
    ranking: Ranking,
    distances: DistanceMatrix,
    k: int,
    epsilon: float = DEFAULT_EPSILON,
) -> tuple[tuple[str, ...], np.ndarray, np.ndarray]:
    """Pairwise Jaccard distances plus the aligned original distances.

    Returns (ids, jaccard, original); both matrices follow the ranking's
    candidate order on rows and columns. Set vectors have at most k nonzeros,
    so sum(min) is accumulated through an inverted index and sum(max)
    recovered from sum(max) = sum(a) + sum(b) - sum(min), keeping the cost
    around N*k^2 instead of N^3.
    """
    ids, mask = reciprocal_mask(ranking, k)
    n = len(ids)
    dist = _aligned_square_distances(distances, ids)
    weights = np.where(mask, np.exp(-dist), 0.0)
    rowsum = weights.sum(axis=1)
    member_rows = [np.flatnonzero(weights[:, j]) for j in range(n)]
    jac = np.empty((n, n), dtype=np.float64)
    for q in range(n):
        minsum = np.zeros(n, dtype=np.float64)
        for j in np.flatnonzero(weights[q]):
            rows = member_rows[j]
            minsum[rows] += np.minimum(weights[q, j], weights[rows, j])
        jac[q] = 1.0 - minsum / (rowsum[q] + rowsum - minsum + epsilon)
    return ids, jac, dist


def rerank_from_matrices(
    ids: tuple[str, ...],
    jac: np.ndarray,
    original: np.ndarray,
    lambda_value: float,
    query_ids: tuple[str, ...] | None = None,
) -> Ranking:
    """Sort the blended distances into a Ranking (query order = query_ids)."""
    if not 0.0 <= lambda_value <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lambda_value}")
    final = (1.0 - lambda_value) * jac + lambda_value * original
    if query_ids is None:
        query_ids = ids
    pos = {s: i for i, s in enumerate(ids)}
    rows = np.fromiter((pos[q] for q in query_ids), dtype=np.int64, count=len(query_ids))
    return sort_distance_rows(final[rows], tuple(query_ids), ids)


def jaccard_rerank(
    ranking: Ranking, distances: DistanceMatrix, config: RerankConfig
) -> Ranking:
    """Re-rank by the lambda-blend of Jaccard and original distances.

    With lambda = 1 the blend equals the original distance exactly, so the
    output reproduces the input ranking including tie-breaks.
    """
    ids, jac, dist = jaccard_matrix(ranking, distances, config.k, config.epsilon)
    return rerank_from_matrices(ids, jac, dist, config.lambda_value, ranking.query_ids)

"""Pairwise cosine distances, deterministic rankings, k-reciprocal neighbor sets."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import EmbeddingSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Dense query x candidate distance matrix with id bookkeeping."""

    query_ids: tuple[str, ...]
    candidate_ids: tuple[str, ...]
    values: np.ndarray
    metric: str = "cosine"

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.shape != (len(self.query_ids), len(self.candidate_ids)):
            raise ValueError(
                f"shape {values.shape} does not match "
                f"{len(self.query_ids)} queries x {len(self.candidate_ids)} candidates"
            )
        if not np.isfinite(values).all():
            raise ValueError("distance matrix contains non-finite entries")
        if (values < 0).any():
            raise ValueError("distance matrix contains negative entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "query_ids", tuple(self.query_ids))
        object.__setattr__(self, "candidate_ids", tuple(self.candidate_ids))
        object.__setattr__(self, "_qindex", {q: i for i, q in enumerate(self.query_ids)})
        object.__setattr__(self, "_cindex", {c: j for j, c in enumerate(self.candidate_ids)})

    def row(self, query_id: str) -> np.ndarray:
        return self.values[self._qindex[query_id]]  # type: ignore[attr-defined]

    def value(self, query_id: str, candidate_id: str) -> float:
        return float(
            self.values[self._qindex[query_id], self._cindex[candidate_id]]  # type: ignore[attr-defined]
        )


def cosine_distances(queries: EmbeddingSet, candidates: EmbeddingSet) -> DistanceMatrix:
    """1 - cosine similarity for every (query, candidate) pair; range [0, 2]."""
    if queries.dim != candidates.dim:
        raise ValueError(f"dimension mismatch: {queries.dim} vs {candidates.dim}")
    mats = []
    for part in (queries, candidates):
        x = part.vectors.astype(np.float64)
        norms = np.linalg.norm(x, axis=1)
        zero = norms == 0.0
        if zero.any():
            sid = part.sample_ids[int(np.flatnonzero(zero)[0])]
            raise ValueError(f"zero vector has no cosine distance (sample {sid!r})")
        mats.append(x / norms[:, None])
    values = np.clip(1.0 - mats[0] @ mats[1].T, 0.0, 2.0)
    return DistanceMatrix(queries.sample_ids, candidates.sample_ids, values, "cosine")


@dataclass(frozen=True, eq=False)
class Ranking:
    """Per-query candidate permutation ordered by ascending distance.

    The query itself never appears in its own list; ties are broken by
    ascending candidate sample_id so rankings are reproducible.
    """

    query_ids: tuple[str, ...]
    candidate_ids: tuple[str, ...]
    order: tuple[np.ndarray, ...]
    ordered_dists: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "query_ids", tuple(self.query_ids))
        object.__setattr__(self, "candidate_ids", tuple(self.candidate_ids))
        if len(self.order) != len(self.query_ids) or len(self.ordered_dists) != len(self.query_ids):
            raise ValueError("one order/distance row required per query")
        cindex = {c: j for j, c in enumerate(self.candidate_ids)}
        n = len(self.candidate_ids)
        rows = []
        drows = []
        for qi, (idx, dst) in enumerate(zip(self.order, self.ordered_dists)):
            idx = np.ascontiguousarray(idx, dtype=np.int32)
            dst = np.ascontiguousarray(dst, dtype=np.float64)
            if idx.shape != dst.shape or idx.ndim != 1:
                raise ValueError(f"query {self.query_ids[qi]!r}: malformed ranking row")
            expected = n - (1 if self.query_ids[qi] in cindex else 0)
            if len(idx) != expected or len(np.unique(idx)) != len(idx):
                raise ValueError(
                    f"query {self.query_ids[qi]!r}: row is not a permutation of candidates"
                )
            if len(idx) and (idx.min() < 0 or idx.max() >= n):
                raise ValueError(f"query {self.query_ids[qi]!r}: candidate index out of range")
            self_j = cindex.get(self.query_ids[qi])
            if self_j is not None and (idx == self_j).any():
                raise ValueError(f"query {self.query_ids[qi]!r} appears in its own ranking")
            if len(dst) > 1 and (np.diff(dst) < 0).any():
                raise ValueError(f"query {self.query_ids[qi]!r}: distances not ascending")
            idx.setflags(write=False)
            dst.setflags(write=False)
            rows.append(idx)
            drows.append(dst)
        object.__setattr__(self, "order", tuple(rows))
        object.__setattr__(self, "ordered_dists", tuple(drows))
        object.__setattr__(self, "_qindex", {q: i for i, q in enumerate(self.query_ids)})

    def row(self, query_id: str) -> tuple[np.ndarray, np.ndarray]:
        qi = self._qindex[query_id]  # type: ignore[attr-defined]
        return self.order[qi], self.ordered_dists[qi]

    def entries(self, query_id: str) -> list[tuple[str, float]]:
        idx, dst = self.row(query_id)
        return [(self.candidate_ids[j], float(d)) for j, d in zip(idx, dst)]

    def top(self, query_id: str, k: int) -> list[str]:
        idx, _ = self.row(query_id)
        return [self.candidate_ids[j] for j in idx[:k]]

    def equal_order(self, other: "Ranking") -> bool:
        """True if both rankings list identical candidates in identical order."""
        if self.query_ids != other.query_ids or self.candidate_ids != other.candidate_ids:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.order, other.order))

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["query_id", "rank", "candidate_id", "distance"])
            for qi, q in enumerate(self.query_ids):
                for r, (j, d) in enumerate(zip(self.order[qi], self.ordered_dists[qi]), 1):
                    writer.writerow([q, r, self.candidate_ids[j], repr(float(d))])


def _id_sort_keys(candidate_ids: tuple[str, ...]) -> np.ndarray:
    """Integer key per candidate equal to its rank in lexicographic id order."""
    keys = np.empty(len(candidate_ids), dtype=np.int64)
    keys[np.argsort(np.array(candidate_ids))] = np.arange(len(candidate_ids))
    return keys


def sort_distance_rows(
    values: np.ndarray,
    query_ids: tuple[str, ...],
    candidate_ids: tuple[str, ...],
) -> Ranking:
    """Build a Ranking from raw distance rows: ascending distance, ties by
    ascending candidate id, the query excluded from its own row."""
    values = np.asarray(values, dtype=np.float64)
    id_keys = _id_sort_keys(candidate_ids)
    cindex = {c: j for j, c in enumerate(candidate_ids)}
    order = []
    dists = []
    for qi, q in enumerate(query_ids):
        row = values[qi]
        idx = np.lexsort((id_keys, row))
        self_j = cindex.get(q)
        if self_j is not None:
            idx = idx[idx != self_j]
        order.append(idx.astype(np.int32))
        dists.append(row[idx])
    return Ranking(tuple(query_ids), tuple(candidate_ids), tuple(order), tuple(dists))


def rank(matrix: DistanceMatrix) -> Ranking:
    return sort_distance_rows(matrix.values, matrix.query_ids, matrix.candidate_ids)


@dataclass(frozen=True)
class ReciprocalSet:
    """k-reciprocal nearest neighbors of one sample: mutual top-k membership."""

    owner: str
    k: int
    members: frozenset[str]


def reciprocal_mask(ranking: Ranking, k: int) -> tuple[tuple[str, ...], np.ndarray]:
    """Boolean mutual top-k matrix over the ranking's candidate id space.

    Requires a full leave-one-out ranking (query ids == candidate ids).
    k larger than N-1 is clamped with a warning so unattended grid sweeps
    keep running.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ids = ranking.candidate_ids
    n = len(ids)
    if n < 2:
        raise ValueError("need at least 2 samples for reciprocal neighbors")
    if set(ranking.query_ids) != set(ids) or len(ranking.query_ids) != n:
        raise ValueError("ranking must cover every sample as both query and candidate")
    eff_k = min(k, n - 1)
    if eff_k != k:
        logger.warning("k=%d exceeds candidate count; clamped to %d", k, eff_k)
    cindex = {c: j for j, c in enumerate(ids)}
    topk = np.zeros((n, n), dtype=bool)
    for qi, q in enumerate(ranking.query_ids):
        topk[cindex[q], ranking.order[qi][:eff_k]] = True
    return ids, topk & topk.T


def k_reciprocal_sets(ranking: Ranking, k: int) -> dict[str, ReciprocalSet]:
    """Mutual top-k neighbor set per sample; sets may be empty for small k."""
    ids, mask = reciprocal_mask(ranking, k)
    eff_k = min(k, len(ids) - 1)
    return {
        ids[i]: ReciprocalSet(
            owner=ids[i],
            k=eff_k,
            members=frozenset(ids[j] for j in np.flatnonzero(mask[i])),
        )
        for i in range(len(ids))
    }

"""Query-expansion re-ranking: AQE averaging and pair/triple exemplar SVMs.

Friends come from the query's k-reciprocal neighbors of the initial (ESVM
feature) ranking; a query without reciprocal neighbors keeps its initial
ranked list untouched.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .corpus import EmbeddingSet, ensure_writer_disjoint
from .linear_svm import PositiveSet, SvmConfig, esvm_feature_transform, to_feature, train
from .ranking import (
    DistanceMatrix,
    Ranking,
    ReciprocalSet,
    _id_sort_keys,
    k_reciprocal_sets,
)

logger = logging.getLogger(__name__)


class QeMode(str, Enum):
    AQE = "aqe"
    PAIR = "pair"
    TRIPLE = "triple"


_FRIEND_CAP = {QeMode.PAIR: 1, QeMode.TRIPLE: 2}


@dataclass(frozen=True)
class FriendSet:
    """Selected positive-set extensions for one query, nearest first."""

    query: str
    members: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.members)


def aqe_query(query: np.ndarray, friends: Sequence[np.ndarray]) -> np.ndarray:
    """Average query expansion: (q0 + sum(f_i)) / (n + 1)."""
    q = np.asarray(query, dtype=np.float64)
    total = q.copy()
    for f in friends:
        f = np.asarray(f, dtype=np.float64)
        if f.shape != q.shape:
            raise ValueError(f"friend dimension {f.shape} != query dimension {q.shape}")
        total += f
    return total / (len(friends) + 1)


def _sorted_members(
    query: str, rset: ReciprocalSet, distances: DistanceMatrix
) -> list[str]:
    return sorted(rset.members, key=lambda m: (distances.value(query, m), m))


def select_friends(
    query: str,
    rsets: Mapping[str, ReciprocalSet],
    distances: DistanceMatrix,
    mode: QeMode | str,
) -> FriendSet:
    """Up to 1 (pair) or 2 (triple) reciprocal neighbors with the smallest
    original distance to the query; fewer when the reciprocal set is smaller."""
    mode = QeMode(mode)
    if mode is QeMode.AQE:
        raise ValueError("friend selection applies to pair/triple modes only")
    if query not in rsets:
        raise ValueError(f"no reciprocal set for query {query!r}")
    members = _sorted_members(query, rsets[query], distances)
    return FriendSet(query=query, members=tuple(members[: _FRIEND_CAP[mode]]))


def qe_rerank(
    test: EmbeddingSet,
    negatives_train: EmbeddingSet,
    initial: Ranking,
    distances: DistanceMatrix,
    k: int,
    mode: QeMode | str,
    svm_config: SvmConfig | None = None,
    features: EmbeddingSet | None = None,
    threads: int = 1,
) -> Ranking:
    """Re-rank every query through query expansion against ESVM-FE candidates.

    pair/triple: the query's exemplar SVM is retrained with its friends added
    to the positive set (raw embeddings vs. the training negatives) and the
    unit-norm weight vector re-queries the candidates' ESVM features by cosine
    distance. aqe: the query's ESVM feature is averaged with its friends'
    features and re-queried the same way. Queries with an empty reciprocal set
    keep their initial ranked list unchanged.

    `features` may pass in a previously computed esvm_feature_transform of
    `test` under the same svm_config; otherwise it is computed here.
    """
    mode = QeMode(mode)
    if svm_config is None:
        svm_config = SvmConfig()
    ensure_writer_disjoint(test, negatives_train)
    rsets = k_reciprocal_sets(initial, k)
    if features is None:
        features = esvm_feature_transform(test, negatives_train, svm_config, threads=threads)
    if features.sample_ids != test.sample_ids:
        raise ValueError("features must cover exactly the test samples, same order")

    cand_ids = initial.candidate_ids
    if set(cand_ids) != set(test.sample_ids):
        raise ValueError("initial ranking must cover exactly the test samples")
    feat = features.vectors.astype(np.float64)
    feat_unit = feat / np.linalg.norm(feat, axis=1, keepdims=True)
    test_pos = {s: i for i, s in enumerate(test.sample_ids)}
    # candidate feature rows in the ranking's candidate order
    cand_unit = feat_unit[[test_pos[c] for c in cand_ids]]
    negatives = negatives_train.vectors.astype(np.float64)
    raw = test.vectors.astype(np.float64)
    id_keys = _id_sort_keys(cand_ids)
    cindex = {c: j for j, c in enumerate(cand_ids)}

    def rescore(qid: str) -> tuple[np.ndarray, np.ndarray] | None:
        members = _sorted_members(qid, rsets[qid], distances)
        if mode is not QeMode.AQE:
            members = members[: _FRIEND_CAP[mode]]
        if not members:
            return None
        qi = test_pos[qid]
        if mode is QeMode.AQE:
            expanded = aqe_query(feat[qi], [feat[test_pos[m]] for m in members])
            norm = float(np.linalg.norm(expanded))
            if norm == 0.0:
                raise ValueError(f"expanded query for {qid!r} collapsed to zero")
            direction = expanded / norm
        else:
            pos = PositiveSet(tuple(raw[test_pos[m]] for m in (qid, *members)))
            direction = to_feature(train(pos, negatives, svm_config))
        row = np.clip(1.0 - cand_unit @ direction, 0.0, 2.0)
        idx = np.lexsort((id_keys, row))
        idx = idx[idx != cindex[qid]]
        return idx.astype(np.int32), row[idx]

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            scored = list(pool.map(rescore, initial.query_ids))
    else:
        scored = [rescore(qid) for qid in initial.query_ids]

    order = []
    dists = []
    for qi, result in enumerate(scored):
        if result is None:  # ESVM fallback: initial list, bit for bit
            order.append(initial.order[qi])
            dists.append(initial.ordered_dists[qi])
        else:
            order.append(result[0])
            dists.append(result[1])
    return Ranking(initial.query_ids, cand_ids, tuple(order), tuple(dists))

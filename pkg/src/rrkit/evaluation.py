"""Retrieval metrics (mAP, Top-1, Hard-k, Soft-k), report tables, (k, lambda) sweeps."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import EmbeddingSet
from .jaccard import DEFAULT_EPSILON, jaccard_matrix, rerank_from_matrices
from .linear_svm import SvmConfig, esvm_feature_transform
from .ranking import Ranking, cosine_distances, rank

logger = logging.getLogger(__name__)

DEFAULT_K_GRID = (2, 4, 8, 16, 32, 64)
DEFAULT_LAMBDA_GRID = tuple(i / 10 for i in range(11))


@dataclass(frozen=True)
class QueryRelevance:
    """Ground truth for one query: same-writer samples, query excluded."""

    query: str
    relevant: frozenset[str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "relevant", frozenset(self.relevant))
        if self.query in self.relevant:
            raise ValueError(f"query {self.query!r} cannot be its own relevant match")


def relevance_from_labels(embeddings: EmbeddingSet) -> dict[str, QueryRelevance]:
    """Relevance map from writer labels: relevant = same writer minus self."""
    by_writer: dict[str, list[str]] = {}
    for sid, wid in zip(embeddings.sample_ids, embeddings.writer_ids):
        by_writer.setdefault(wid, []).append(sid)
    return {
        sid: QueryRelevance(sid, frozenset(s for s in by_writer[wid] if s != sid))
        for sid, wid in zip(embeddings.sample_ids, embeddings.writer_ids)
    }


def _relevant_of(relevance: Mapping, query: str) -> frozenset[str]:
    try:
        entry = relevance[query]
    except KeyError:
        raise ValueError(f"no relevance info for query {query!r}") from None
    if isinstance(entry, QueryRelevance):
        return entry.relevant
    return frozenset(entry)


def _included_queries(
    ranking: Ranking, relevance: Mapping
) -> list[tuple[int, frozenset[str]]]:
    """Queries with a nonempty relevant set; the rest are skipped and counted."""
    included = []
    skipped = 0
    for qi, q in enumerate(ranking.query_ids):
        rel = _relevant_of(relevance, q)
        if rel:
            included.append((qi, rel))
        else:
            skipped += 1
    if skipped:
        logger.warning("excluded %d queries without relevant candidates", skipped)
    if not included:
        raise ValueError("no queries with relevant candidates")
    return included


def average_precision(ranked: Sequence[str], relevant) -> float:
    """AveP of one ranked list: sum of precision-at-hit over |relevant|."""
    relevant = frozenset(relevant)
    if not relevant:
        raise ValueError("relevant set must be nonempty")
    hits = 0
    total = 0.0
    for pos, cid in enumerate(ranked, start=1):
        if cid in relevant:
            hits += 1
            total += hits / pos
    return total / len(relevant)


def mean_average_precision(ranking: Ranking, relevance: Mapping) -> float:
    """Mean AveP over all queries with a nonempty relevant set; range [0, 1]."""
    lookup = {c: j for j, c in enumerate(ranking.candidate_ids)}
    aps = []
    for qi, rel in _included_queries(ranking, relevance):
        mask = np.zeros(len(lookup), dtype=bool)
        for r in rel:
            j = lookup.get(r)
            if j is not None:
                mask[j] = True
        hits = mask[ranking.order[qi]]
        positions = np.flatnonzero(hits) + 1
        if len(positions) == 0:
            aps.append(0.0)
            continue
        precisions = np.arange(1, len(positions) + 1) / positions
        aps.append(float(precisions.sum()) / len(rel))
    return float(np.mean(aps))


def top1(ranking: Ranking, relevance: Mapping) -> float:
    """Percentage of queries whose first-ranked candidate is relevant."""
    ok = 0
    included = _included_queries(ranking, relevance)
    for qi, rel in included:
        ok += ranking.candidate_ids[ranking.order[qi][0]] in rel
    return 100.0 * ok / len(included)


def hard_k(ranking: Ranking, relevance: Mapping, k: int) -> float:
    """Percentage of queries whose first k candidates are all relevant."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ok = 0
    included = _included_queries(ranking, relevance)
    for qi, rel in included:
        window = ranking.order[qi][:k]
        ok += all(ranking.candidate_ids[j] in rel for j in window)
    return 100.0 * ok / len(included)


def soft_k(ranking: Ranking, relevance: Mapping, k: int) -> float:
    """Percentage of queries with at least one relevant among the first k."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ok = 0
    included = _included_queries(ranking, relevance)
    for qi, rel in included:
        window = ranking.order[qi][:k]
        ok += any(ranking.candidate_ids[j] in rel for j in window)
    return 100.0 * ok / len(included)


@dataclass(frozen=True)
class EvalReport:
    """One row of the results table; all metrics are percentages."""

    method: str
    top1: float
    hard2: float
    hard3: float
    hard4: float
    soft5: float
    soft10: float
    map: float
    map_spread: float = 0.0
    config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        eps = 1e-9
        metrics = (self.top1, self.hard2, self.hard3, self.hard4,
                   self.soft5, self.soft10, self.map)
        if any(not -eps <= m <= 100.0 + eps for m in metrics):
            raise ValueError(f"metrics must lie in [0, 100]: {metrics}")
        if self.soft5 > self.soft10 + eps:
            raise ValueError(f"soft5 ({self.soft5}) cannot exceed soft10 ({self.soft10})")
        if self.hard2 + eps < self.hard3 or self.hard3 + eps < self.hard4:
            raise ValueError(
                f"hard-k must be non-increasing: {self.hard2}, {self.hard3}, {self.hard4}"
            )
        if self.map_spread < 0:
            raise ValueError("map_spread must be >= 0")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "top1": self.top1,
            "hard2": self.hard2,
            "hard3": self.hard3,
            "hard4": self.hard4,
            "soft5": self.soft5,
            "soft10": self.soft10,
            "map": self.map,
            "map_spread": self.map_spread,
            "config": self.config,
        }


def evaluate_ranking(
    ranking: Ranking,
    relevance: Mapping,
    method: str = "",
    config: dict | None = None,
) -> EvalReport:
    """All table metrics for one ranking."""
    return EvalReport(
        method=method,
        top1=top1(ranking, relevance),
        hard2=hard_k(ranking, relevance, 2),
        hard3=hard_k(ranking, relevance, 3),
        hard4=hard_k(ranking, relevance, 4),
        soft5=soft_k(ranking, relevance, 5),
        soft10=soft_k(ranking, relevance, 10),
        map=100.0 * mean_average_precision(ranking, relevance),
        config=dict(config or {}),
    )


def aggregate_reports(reports: Sequence[EvalReport]) -> EvalReport:
    """Mean of repeated runs; spread is the population std of the mAP values."""
    if not reports:
        raise ValueError("no reports to aggregate")
    if len({r.method for r in reports}) != 1:
        raise ValueError("cannot aggregate reports of different methods")
    maps = np.array([r.map for r in reports])
    mean = lambda key: float(np.mean([getattr(r, key) for r in reports]))  # noqa: E731
    return EvalReport(
        method=reports[0].method,
        top1=mean("top1"),
        hard2=mean("hard2"),
        hard3=mean("hard3"),
        hard4=mean("hard4"),
        soft5=mean("soft5"),
        soft10=mean("soft10"),
        map=float(maps.mean()),
        map_spread=float(maps.std()),
        config={**reports[0].config, "repeats": len(reports)},
    )


_TABLE_COLUMNS = ("Top-1", "Hard-2", "Hard-3", "Hard-4", "Soft-5", "Soft-10", "mAP")


def format_report_table(reports: Sequence[EvalReport]) -> str:
    """Aligned text table, one row per method (mAP carries its +- spread)."""
    width = max([len("Method")] + [len(r.method) for r in reports])
    lines = [
        f"{'Method':<{width}}  " + "  ".join(f"{c:>7}" for c in _TABLE_COLUMNS)
    ]
    for r in reports:
        cells = [r.top1, r.hard2, r.hard3, r.hard4, r.soft5, r.soft10]
        row = f"{r.method:<{width}}  " + "  ".join(f"{c:>7.2f}" for c in cells)
        lines.append(row + f"  {r.map:>7.2f} +-{r.map_spread:.2f}")
    return "\n".join(lines)


@dataclass(frozen=True, eq=False)
class SweepGrid:
    """mAP (percent) for every (k, lambda) combination."""

    k_values: tuple[int, ...]
    lambda_values: tuple[float, ...]
    map_values: np.ndarray

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.map_values, dtype=np.float64)
        if values.shape != (len(self.k_values), len(self.lambda_values)):
            raise ValueError(
                f"grid shape {values.shape} does not match "
                f"{len(self.k_values)} x {len(self.lambda_values)}"
            )
        if not np.isfinite(values).all():
            raise ValueError("sweep grid has unfilled or non-finite cells")
        values.setflags(write=False)
        object.__setattr__(self, "map_values", values)
        object.__setattr__(self, "k_values", tuple(self.k_values))
        object.__setattr__(self, "lambda_values", tuple(self.lambda_values))

    def cell(self, k: int, lambda_value: float) -> float:
        return float(
            self.map_values[self.k_values.index(k), self.lambda_values.index(lambda_value)]
        )

    def best(self) -> tuple[int, float, float]:
        """(k, lambda, map) of the best cell; first in k-major order on ties."""
        flat = int(np.argmax(self.map_values))
        ki, li = divmod(flat, len(self.lambda_values))
        return self.k_values[ki], self.lambda_values[li], float(self.map_values[ki, li])

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "lambda", "map"])
            for ki, k in enumerate(self.k_values):
                for li, lam in enumerate(self.lambda_values):
                    writer.writerow([k, repr(float(lam)), repr(float(self.map_values[ki, li]))])


def sweep(
    embeddings: EmbeddingSet,
    k_grid: Sequence[int] = DEFAULT_K_GRID,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    *,
    base: str = "cosine",
    negatives: EmbeddingSet | None = None,
    svm_config: SvmConfig | None = None,
    epsilon: float = DEFAULT_EPSILON,
    threads: int = 1,
) -> SweepGrid:
    """Jaccard re-ranking mAP over the full (k, lambda) grid.

    The hyper-parameter protocol runs on a training split with cosine
    distances (base="cosine"); base="esvm" reproduces the test-set setting
    and needs `negatives`. One re-ranking per cell; the Jaccard matrix is
    shared across the lambda column of each k.
    """
    if not k_grid or not lambda_grid:
        raise ValueError("k and lambda grids must be nonempty")
    if base == "cosine":
        features = embeddings
    elif base == "esvm":
        if negatives is None:
            raise ValueError("base='esvm' requires a negatives training set")
        features = esvm_feature_transform(embeddings, negatives, svm_config, threads=threads)
    else:
        raise ValueError(f"base must be 'cosine' or 'esvm', got {base!r}")
    distances = cosine_distances(features, features)
    initial = rank(distances)
    relevance = relevance_from_labels(embeddings)
    grid = np.empty((len(k_grid), len(lambda_grid)))
    for ki, k in enumerate(k_grid):
        ids, jac, dist = jaccard_matrix(initial, distances, k, epsilon)
        for li, lam in enumerate(lambda_grid):
            reranked = rerank_from_matrices(ids, jac, dist, lam, initial.query_ids)
            grid[ki, li] = 100.0 * mean_average_precision(reranked, relevance)
    return SweepGrid(tuple(k_grid), tuple(lambda_grid), grid)

"""Binary linear SVMs trained with one (or few) positives against many negatives.

The solver is dual coordinate descent on the L1 hinge loss (box-constrained
dual, exact single-coordinate minimization), which is deterministic given a
seed and needs no learning-rate tuning. The bias is carried as an appended
constant-1 feature during training and dropped when a model is turned into
a feature vector.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import EmbeddingSet, ensure_writer_disjoint

logger = logging.getLogger(__name__)

_PG_SKIP = 1e-12  # projected gradients below this leave the coordinate alone


def _epoch_pass_py(xy, qdiag, cbox, alpha, w, perm):
    """One sweep of dual coordinate descent; returns the worst projected gradient."""
    worst = 0.0
    for t in range(perm.shape[0]):
        i = perm[t]
        g = np.dot(xy[i], w) - 1.0
        a = alpha[i]
        if a <= 0.0:
            pg = g if g < 0.0 else 0.0
        elif a >= cbox[i]:
            pg = g if g > 0.0 else 0.0
        else:
            pg = g
        apg = -pg if pg < 0.0 else pg
        if apg > worst:
            worst = apg
        if apg > _PG_SKIP:
            na = a - g / qdiag[i]
            if na < 0.0:
                na = 0.0
            elif na > cbox[i]:
                na = cbox[i]
            if na != a:
                w += (na - a) * xy[i]
                alpha[i] = na
    return worst


try:  # the jitted and interpreted kernels share one definition
    from numba import njit

    _epoch_pass = njit(cache=True)(_epoch_pass_py)
except ImportError:  # pragma: no cover - numba is a declared dependency
    _epoch_pass = _epoch_pass_py


@dataclass(frozen=True)
class SvmConfig:
    """Solver settings. cost_positive=None auto-balances the single-positive
    class as cost_negative * (n_negatives / n_positives)."""

    cost_positive: float | None = None
    cost_negative: float = 0.01
    tolerance: float = 1e-4
    max_iterations: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.cost_positive is not None and not self.cost_positive > 0:
            raise ValueError(f"cost_positive must be > 0, got {self.cost_positive}")
        if not self.cost_negative > 0:
            raise ValueError(f"cost_negative must be > 0, got {self.cost_negative}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be > 0, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")

    def effective_cost_positive(self, n_pos: int, n_neg: int) -> float:
        if self.cost_positive is not None:
            return self.cost_positive
        return self.cost_negative * n_neg / n_pos

    def to_dict(self) -> dict:
        return {
            "cost_positive": self.cost_positive,
            "cost_negative": self.cost_negative,
            "tolerance": self.tolerance,
            "max_iterations": self.max_iterations,
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class PositiveSet:
    """Query vector plus 0-2 friend vectors; the query always comes first."""

    vectors: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        vecs = tuple(np.ascontiguousarray(v, dtype=np.float64) for v in self.vectors)
        if not 1 <= len(vecs) <= 3:
            raise ValueError(f"positive set must hold 1-3 vectors, got {len(vecs)}")
        dim = vecs[0].shape
        if any(v.ndim != 1 or v.shape != dim for v in vecs):
            raise ValueError("positive vectors must be 1-D with a shared dimension")
        if any(not np.isfinite(v).all() for v in vecs):
            raise ValueError("positive vectors must be finite")
        for v in vecs:
            v.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)

    @property
    def query(self) -> np.ndarray:
        return self.vectors[0]

    @property
    def friends(self) -> tuple[np.ndarray, ...]:
        return self.vectors[1:]

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass(frozen=True, eq=False)
class SvmModel:
    """Trained linear model: weight vector, bias, and solver diagnostics.

    objective_trace records the solver's dual objective after every epoch
    (starting from 0 at alpha=0); exact coordinate minimization makes it
    non-increasing. positive_margin is the smallest decision value over the
    positives; <= 0 flags a non-separable positive set.
    """

    weights: np.ndarray
    bias: float
    converged: bool
    objective_trace: tuple[float, ...]
    positive_margin: float

    def __post_init__(self) -> None:
        weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if weights.ndim != 1 or not np.isfinite(weights).all():
            raise ValueError("weights must be a finite 1-D vector")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    @property
    def epochs(self) -> int:
        return len(self.objective_trace) - 1

    def decision(self, x: np.ndarray) -> float:
        return float(np.dot(self.weights, np.asarray(x, dtype=np.float64)) + self.bias)

    def to_dict(self) -> dict:
        return {
            "weights": [float(v) for v in self.weights],
            "bias": self.bias,
            "converged": self.converged,
            "epochs": self.epochs,
            "positive_margin": self.positive_margin,
        }


def model_dump(model: SvmModel, config: SvmConfig) -> dict:
    """JSON-ready dump of a trained model together with its solver settings."""
    out = model.to_dict()
    out["config"] = config.to_dict()
    return out


def _as_matrix(vectors, what: str) -> np.ndarray:
    mat = np.ascontiguousarray(vectors, dtype=np.float64)
    if mat.ndim == 1:
        mat = mat[None, :]
    if mat.ndim != 2:
        raise ValueError(f"{what} must be a vector list or 2-D matrix")
    if not np.isfinite(mat).all():
        raise ValueError(f"{what} contain non-finite values")
    return mat


def train(
    positives: PositiveSet | Sequence[np.ndarray],
    negatives,
    config: SvmConfig | None = None,
) -> SvmModel:
    """Fit the regularized hinge loss by dual coordinate descent.

    Deterministic given config.seed (the per-epoch visiting order is the only
    randomness). Stops when the worst projected gradient of an epoch falls
    below config.tolerance, else flags converged=False after max_iterations.
    """
    if config is None:
        config = SvmConfig()
    if not isinstance(positives, PositiveSet):
        positives = PositiveSet(tuple(np.asarray(v) for v in positives))
    pos = np.vstack(positives.vectors)
    neg = _as_matrix(negatives, "negatives")
    if neg.shape[0] == 0:
        raise ValueError("negatives must be nonempty")
    if neg.shape[1] != pos.shape[1]:
        raise ValueError(
            f"dimension mismatch: positives {pos.shape[1]}, negatives {neg.shape[1]}"
        )
    n_pos, n_neg = pos.shape[0], neg.shape[0]
    dim = pos.shape[1]

    x = np.hstack([np.vstack([pos, neg]), np.ones((n_pos + n_neg, 1))])
    y = np.concatenate([np.ones(n_pos), -np.ones(n_neg)])
    xy = np.ascontiguousarray(x * y[:, None])
    qdiag = np.einsum("ij,ij->i", x, x)
    c_pos = config.effective_cost_positive(n_pos, n_neg)
    cbox = np.where(y > 0, c_pos, config.cost_negative)

    n = n_pos + n_neg
    alpha = np.zeros(n)
    w = np.zeros(dim + 1)
    trace = [0.0]
    converged = False
    rng = np.random.default_rng(config.seed)
    for _ in range(config.max_iterations):
        perm = rng.permutation(n)
        worst = _epoch_pass(xy, qdiag, cbox, alpha, w, perm)
        trace.append(0.5 * float(np.dot(w, w)) - float(alpha.sum()))
        if worst <= config.tolerance:
            converged = True
            break
    if not converged:
        logger.warning(
            "SVM stopped at max_iterations=%d without reaching tolerance %g",
            config.max_iterations,
            config.tolerance,
        )
    margins = x[:n_pos] @ w
    return SvmModel(
        weights=w[:dim],
        bias=float(w[dim]),
        converged=converged,
        objective_trace=tuple(trace),
        positive_margin=float(margins.min()),
    )


def to_feature(model: SvmModel) -> np.ndarray:
    """Unit-norm weight direction of a trained model; the bias is discarded."""
    norm = float(np.linalg.norm(model.weights))
    if norm == 0.0:
        raise ValueError("all-zero weight vector has no feature direction")
    return model.weights / norm


def esvm_feature_transform(
    test: EmbeddingSet,
    negatives_train: EmbeddingSet,
    config: SvmConfig | None = None,
    threads: int = 1,
) -> EmbeddingSet:
    """Exemplar-SVM feature transform: one SVM per test sample.

    Each test sample is the single positive against every training sample;
    its new feature is the unit-norm weight vector. All per-sample trainings
    share config.seed, so identical inputs give identical outputs and results
    do not depend on the worker count.
    """
    if config is None:
        config = SvmConfig()
    ensure_writer_disjoint(test, negatives_train)
    if test.dim != negatives_train.dim:
        raise ValueError(
            f"dimension mismatch: test {test.dim}, negatives {negatives_train.dim}"
        )
    negatives = negatives_train.vectors.astype(np.float64)
    queries = test.vectors.astype(np.float64)

    def encode(i: int) -> np.ndarray:
        model = train(PositiveSet((queries[i],)), negatives, config)
        return to_feature(model)

    indices = range(len(test))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            features = list(pool.map(encode, indices))
    else:
        features = [encode(i) for i in indices]
    return test.with_vectors(np.vstack(features))

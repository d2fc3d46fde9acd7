"""Nearest-neighbor two-sample conditional U-statistic.

``delta_hat(x, u)`` averages the pairwise score over every pair formed by
one of the ``c`` control subjects closest to ``x`` and one of the ``e``
experimental subjects closest to ``u``. Equal distances are resolved in
favor of the smaller subject index, so results are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Literal

import numpy as np

from .data import DEFAULT_PAIR_BUDGET, TrialDataset
from .errors import DomainError, ShapeError
from .scoring import ScoreSpec, score_matrix

Metric = Literal["euclidean", "max"]
METRICS: tuple[str, ...] = ("euclidean", "max")

DEFAULT_EXPONENT = Fraction(3, 5)


def _integer_root_ceil(value: int, root: int) -> int:
    """Smallest integer ``c >= 0`` with ``c ** root >= value``."""
    if value <= 0:
        return 0
    c = int(round(math.exp(math.log(value) / root)))
    while c ** root < value:
        c += 1
    while c > 0 and (c - 1) ** root >= value:
        c -= 1
    return c


def default_neighbor_counts(m: int, n: int, exponent: Fraction | float = DEFAULT_EXPONENT) -> tuple[int, int]:
    """``(min(m, ceil(m**a)), min(n, ceil(n**a)))`` computed in exact integer arithmetic."""
    if m < 1 or n < 1:
        raise DomainError("arm sizes must be positive")
    a = Fraction(exponent).limit_denominator(1000) if not isinstance(exponent, Fraction) else exponent
    if not 0 < a < 1:
        raise DomainError(f"neighbor growth exponent must lie in (0, 1), got {exponent}")

    def count(size: int) -> int:
        # ceil(size ** (p/q)) is the least c with c**q >= size**p
        return min(size, max(1, _integer_root_ceil(size ** a.numerator, a.denominator)))

    return count(m), count(n)


def distances(points: np.ndarray, query: np.ndarray, metric: Metric = "euclidean") -> np.ndarray:
    diff = np.asarray(points, dtype=np.float64) - np.asarray(query, dtype=np.float64)
    if metric == "euclidean":
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if metric == "max":
        return np.abs(diff).max(axis=1) if diff.shape[1] else np.zeros(diff.shape[0])
    raise DomainError(f"unknown metric {metric!r}; expected one of {METRICS}")


def neighbors(points: np.ndarray, query: np.ndarray, k: int, metric: Metric = "euclidean") -> np.ndarray:
    """Indices of the ``k`` points closest to ``query``, sorted by (distance, index)."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ShapeError("points must be a 2D array")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (points.shape[1],):
        raise ShapeError(f"query must have length {points.shape[1]}, got shape {query.shape}")
    if not 1 <= k <= points.shape[0]:
        raise DomainError(f"k must lie in [1, {points.shape[0]}], got {k}")
    dist = distances(points, query, metric)
    # a stable sort keeps the lower index first among equal distances
    return np.argsort(dist, kind="stable")[:k]


@dataclass(frozen=True)
class KnnConfig:
    c: int
    e: int
    metric: Metric = "euclidean"

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise DomainError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        if self.c < 1 or self.e < 1:
            raise DomainError("neighbor counts must be positive")


@dataclass
class KnnModel:
    """Conditional U-statistic estimator bound to a training trial."""

    data: TrialDataset
    spec: ScoreSpec
    config: KnnConfig
    _scores: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        if not 1 <= self.config.c <= self.data.m:
            raise DomainError(f"control neighbor count c={self.config.c} must lie in [1, m={self.data.m}]")
        if not 1 <= self.config.e <= self.data.n:
            raise DomainError(f"experimental neighbor count e={self.config.e} must lie in [1, n={self.data.n}]")
        if self.data.outcome_dim != len(self.spec):
            raise ShapeError("outcome dimension does not match the score spec")
        if self.data.m * self.data.n <= DEFAULT_PAIR_BUDGET:
            self._scores = score_matrix(self.spec, self.data.control_y, self.data.experimental_y)

    @classmethod
    def with_defaults(cls, data: TrialDataset, spec: ScoreSpec, metric: Metric = "euclidean") -> "KnnModel":
        c, e = default_neighbor_counts(data.m, data.n)
        return cls(data, spec, KnnConfig(c, e, metric))

    def _block_sum(self, ci: np.ndarray, ej: np.ndarray) -> int:
        if self._scores is not None:
            block = self._scores[np.ix_(ci, ej)]
        else:
            block = score_matrix(self.spec, self.data.control_y[ci], self.data.experimental_y[ej])
        return int(block.sum(dtype=np.int64))

    def delta_hat(self, x: np.ndarray, u: np.ndarray) -> float:
        cfg = self.config
        ci = neighbors(self.data.control_x, x, cfg.c, cfg.metric)
        ej = neighbors(self.data.experimental_x, u, cfg.e, cfg.metric)
        return self._block_sum(ci, ej) / (cfg.c * cfg.e)

    def ipb_hat(self, x: np.ndarray) -> float:
        return self.delta_hat(x, x)

    def rule(self, x: np.ndarray) -> int:
        return int(self.ipb_hat(x) > 0)

    def predict_ipb(self, X: np.ndarray) -> np.ndarray:
        """``ipb_hat`` for every row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.array([self.ipb_hat(x) for x in X], dtype=np.float64)


def delta_hat(model: KnnModel, x: np.ndarray, u: np.ndarray) -> float:
    return model.delta_hat(x, u)


def ipb_hat(model: KnnModel, x: np.ndarray) -> float:
    return model.ipb_hat(x)


def rule(model: KnnModel, x: np.ndarray) -> int:
    return model.rule(x)

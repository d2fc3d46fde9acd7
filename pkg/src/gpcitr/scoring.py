"""Generalized pairwise comparison scores for prioritized outcomes.

A :class:`ScoreSpec` is an ordered list of :class:`PriorityLevel` objects.
Comparing a control outcome vector ``y`` with an experimental outcome vector
``v`` scans the levels in priority order and returns the first decisive
result: ``+1`` when ``v`` is better, ``-1`` when ``y`` is better, ``0`` when
every level ties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Iterable, Literal, Mapping, Sequence

import numpy as np

from .errors import DomainError, InvalidValueError, ShapeError

Kind = Literal["binary", "continuous", "ordinal"]
Direction = Literal["higher_is_better", "lower_is_better"]

KINDS: tuple[str, ...] = ("binary", "continuous", "ordinal")
DIRECTIONS: tuple[str, ...] = ("higher_is_better", "lower_is_better")


@dataclass(frozen=True)
class PriorityLevel:
    """One comparison level of a hierarchy.

    ``threshold`` is the neutral zone ``delta`` for continuous outcomes: the
    pair is decided only when the two values differ by strictly more than it.
    """

    kind: Kind = "binary"
    direction: Direction = "higher_is_better"
    threshold: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise DomainError(f"unknown level kind {self.kind!r}; expected one of {KINDS}")
        if self.direction not in DIRECTIONS:
            raise DomainError(
                f"unknown direction {self.direction!r}; expected one of {DIRECTIONS}"
            )
        t = float(self.threshold)
        if not math.isfinite(t) or t < 0:
            raise DomainError(f"threshold must be a finite nonnegative number, got {self.threshold!r}")
        if self.kind != "continuous" and t != 0.0:
            raise DomainError(f"threshold only applies to continuous levels (got {t} for {self.kind})")
        object.__setattr__(self, "threshold", t)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind, "direction": self.direction}
        if self.kind == "continuous":
            out["threshold"] = self.threshold
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PriorityLevel":
        unknown = set(d) - {"kind", "direction", "threshold"}
        if unknown:
            raise DomainError(f"unknown score level keys: {sorted(unknown)}")
        return cls(
            kind=d.get("kind", "binary"),
            direction=d.get("direction", "higher_is_better"),
            threshold=float(d.get("threshold", 0.0)),
        )


@dataclass(frozen=True)
class ScoreSpec:
    """Ordered hierarchy of levels; index 0 has the highest priority."""

    levels: tuple[PriorityLevel, ...]

    def __init__(self, levels: Iterable[PriorityLevel]) -> None:
        levels = tuple(levels)
        if not levels:
            raise DomainError("a score spec needs at least one level")
        for lvl in levels:
            if not isinstance(lvl, PriorityLevel):
                raise DomainError(f"expected PriorityLevel, got {type(lvl).__name__}")
        object.__setattr__(self, "levels", levels)

    def __len__(self) -> int:
        return len(self.levels)

    def to_dict(self) -> dict[str, Any]:
        return {"levels": [lvl.to_dict() for lvl in self.levels]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ScoreSpec":
        return cls(PriorityLevel.from_dict(x) for x in d["levels"])

    @classmethod
    def binary(cls, count: int = 1) -> "ScoreSpec":
        """``count`` binary levels where 1 is the better value."""
        return cls(PriorityLevel("binary") for _ in range(count))


def _sign(x: float) -> int:
    return (x > 0) - (x < 0)


def _check_value(level: PriorityLevel, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise InvalidValueError(f"outcome value must be finite, got {value}")
    if level.kind == "binary" and value not in (0.0, 1.0):
        raise DomainError(f"binary outcome must be 0 or 1, got {value}")
    return value


def compare_level(level: PriorityLevel, y_k: float, v_k: float) -> int:
    """Score one level: ``+1`` if ``v_k`` is better than ``y_k``."""
    y = _check_value(level, y_k)
    v = _check_value(level, v_k)
    if level.direction == "lower_is_better":
        y, v = -y, -v
    if level.kind == "continuous":
        if v - y > level.threshold:
            return 1
        if y - v > level.threshold:
            return -1
        return 0
    return _sign(v - y)


def score(spec: ScoreSpec, y: Sequence[float], v: Sequence[float]) -> int:
    """Hierarchical score of control outcome ``y`` against experimental ``v``."""
    if len(y) != len(spec) or len(v) != len(spec):
        raise ShapeError(
            f"outcome vectors must have {len(spec)} components, got {len(y)} and {len(v)}"
        )
    for level, a, b in zip(spec.levels, y, v):
        s = compare_level(level, a, b)
        if s:
            return s
    return 0


def validate_outcomes(spec: ScoreSpec, outcomes: np.ndarray) -> np.ndarray:
    """Check an ``(rows, levels)`` outcome matrix against ``spec``."""
    arr = np.asarray(outcomes, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None] if len(spec) == 1 else arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != len(spec):
        raise ShapeError(f"outcomes must have {len(spec)} columns, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidValueError("outcomes contain non-finite values")
    for k, level in enumerate(spec.levels):
        if level.kind == "binary":
            col = arr[:, k]
            if not np.all((col == 0.0) | (col == 1.0)):
                raise DomainError(f"binary outcome level {k} has values outside {{0, 1}}")
    return arr


def score_matrix(spec: ScoreSpec, Y: np.ndarray, V: np.ndarray) -> np.ndarray:
    """All cross scores: entry ``[i, j]`` is ``score(spec, Y[i], V[j])``.

    Returns an ``int8`` array of shape ``(len(Y), len(V))``.
    """
    Y = validate_outcomes(spec, Y)
    V = validate_outcomes(spec, V)
    out = np.zeros((Y.shape[0], V.shape[0]), dtype=np.int8)
    undecided = np.ones(out.shape, dtype=bool)
    for k, level in enumerate(spec.levels):
        y = Y[:, k][:, None]
        v = V[:, k][None, :]
        if level.direction == "lower_is_better":
            y, v = -y, -v
        if level.kind == "continuous":
            s = (v - y > level.threshold).astype(np.int8) - (y - v > level.threshold).astype(np.int8)
        else:
            s = np.sign(v - y).astype(np.int8)
        np.copyto(out, s, where=undecided)
        undecided &= s == 0
        if not undecided.any():
            break
    return out


def score_rows(spec: ScoreSpec, Y: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Row-wise scores ``score(spec, Y[i], V[i])`` for matched pairs."""
    Y = validate_outcomes(spec, Y)
    V = validate_outcomes(spec, V)
    if Y.shape[0] != V.shape[0]:
        raise ShapeError(f"matched pairs need equal row counts, got {Y.shape[0]} and {V.shape[0]}")
    out = np.zeros(Y.shape[0], dtype=np.int8)
    undecided = np.ones(Y.shape[0], dtype=bool)
    for k, level in enumerate(spec.levels):
        y, v = Y[:, k], V[:, k]
        if level.direction == "lower_is_better":
            y, v = -y, -v
        if level.kind == "continuous":
            s = (v - y > level.threshold).astype(np.int8) - (y - v > level.threshold).astype(np.int8)
        else:
            s = np.sign(v - y).astype(np.int8)
        np.copyto(out, s, where=undecided)
        undecided &= s == 0
    return out

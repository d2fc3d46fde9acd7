"""Shared fixtures and independent reference implementations.

The reference helpers here are deliberately naive (plain Python loops,
exact fractions) so they can serve as oracles for the vectorized library.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gpcitr.data import TrialDataset
from gpcitr.scoring import PriorityLevel, ScoreSpec

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def ref_score(levels, y, v):
    """Lexicographic score from ``(kind, direction, delta)`` tuples, written out longhand."""
    for (kind, direction, delta), a, b in zip(levels, y, v):
        if direction == "lower_is_better":
            a, b = -a, -b
        if kind == "continuous":
            if b - a > delta:
                return 1
            if a - b > delta:
                return -1
        else:
            if b > a:
                return 1
            if b < a:
                return -1
    return 0


def levels_of(spec: ScoreSpec):
    return [(lvl.kind, lvl.direction, lvl.threshold) for lvl in spec.levels]


def ref_net_benefit(levels, Y, V) -> Fraction:
    total = 0
    for y in Y:
        for v in V:
            total += ref_score(levels, list(y), list(v))
    return Fraction(total, len(Y) * len(V))


def random_trial(rng: np.random.Generator, m: int, n: int, d: int = 2, binary_levels: int = 2,
                 covariate_values: int | None = None) -> TrialDataset:
    """Small trial with binary outcomes; integer covariates make distance ties likely."""
    def cov(k):
        if covariate_values is None:
            return rng.normal(size=(k, d))
        return rng.integers(0, covariate_values, size=(k, d)).astype(float)

    return TrialDataset(cov(m), rng.integers(0, 2, size=(m, binary_levels)).astype(float),
                        cov(n), rng.integers(0, 2, size=(n, binary_levels)).astype(float))


@pytest.fixture
def gen() -> np.random.Generator:
    return np.random.default_rng(20240601)


@pytest.fixture
def table2_spec() -> ScoreSpec:
    return ScoreSpec([PriorityLevel("binary"), PriorityLevel("continuous", threshold=3.0)])


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

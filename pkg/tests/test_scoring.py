from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpcitr.errors import DomainError, InvalidValueError, ShapeError
from gpcitr.scoring import (
    PriorityLevel,
    ScoreSpec,
    compare_level,
    score,
    score_matrix,
    score_rows,
)

from conftest import levels_of, ref_score

# Table of the two-binary-outcome hierarchy, transcribed row by row:
# first-level pair (Y1, V1), second-level pair (Y2, V2) -> sigma.
TABLE1_ROWS = [
    ({(0, 1)}, {(0, 0), (0, 1), (1, 0), (1, 1)}, +1),
    ({(1, 0)}, {(0, 0), (0, 1), (1, 0), (1, 1)}, -1),
    ({(1, 1), (0, 0)}, {(0, 1)}, +1),
    ({(1, 1), (0, 0)}, {(1, 0)}, -1),
    ({(1, 1), (0, 0)}, {(1, 1), (0, 0)}, 0),
]

# Binary first level, count second level with threshold 3: (Y, V) -> sigma.
TABLE2_GRID = [
    ((0, 10), (1, 0), +1),
    ((1, 0), (0, 25), -1),
    ((1, 10), (1, 14), +1),
    ((1, 10), (1, 13), 0),
    ((0, 14), (0, 10), -1),
    ((0, 13), (0, 10), 0),
    ((0, 0), (0, 3), 0),
    ((0, 0), (0, 4), +1),
    ((1, 25), (1, 21), -1),
    ((1, 25), (1, 22), 0),
    ((0, 7), (0, 7), 0),
    ((1, 7), (0, 25), -1),
]


def table1_sigma(y1, v1, y2, v2):
    hits = [s for first, second, s in TABLE1_ROWS if (y1, v1) in first and (y2, v2) in second]
    assert len(hits) == 1
    return hits[0]


class TestPriorityLevel:
    def test_rejects_unknown_kind(self):
        with pytest.raises(DomainError):
            PriorityLevel("nominal")

    def test_rejects_negative_threshold(self):
        with pytest.raises(DomainError):
            PriorityLevel("continuous", threshold=-1)

    def test_threshold_only_for_continuous(self):
        with pytest.raises(DomainError):
            PriorityLevel("binary", threshold=1.0)

    def test_round_trip(self, table2_spec):
        assert ScoreSpec.from_dict(table2_spec.to_dict()) == table2_spec

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(DomainError):
            PriorityLevel.from_dict({"kind": "binary", "weight": 2})

    def test_empty_spec_rejected(self):
        with pytest.raises(DomainError):
            ScoreSpec([])


class TestCompareLevel:
    def test_binary_examples(self):
        lvl = PriorityLevel("binary")
        assert compare_level(lvl, 0, 1) == 1
        assert compare_level(lvl, 1, 0) == -1
        assert compare_level(lvl, 1, 1) == 0

    def test_threshold_is_strict(self):
        lvl = PriorityLevel("continuous", threshold=3)
        assert compare_level(lvl, 10, 13) == 0
        assert compare_level(lvl, 10, 13.5) == 1
        assert compare_level(lvl, 13.5, 10) == -1

    def test_lower_is_better(self):
        lvl = PriorityLevel("ordinal", "lower_is_better")
        assert compare_level(lvl, 2, 1) == 1
        assert compare_level(lvl, 1, 2) == -1

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidValueError):
            compare_level(PriorityLevel("continuous"), float("nan"), 1.0)

    def test_binary_domain(self):
        with pytest.raises(DomainError):
            compare_level(PriorityLevel("binary"), 2, 1)


class TestTables:
    def test_two_binary_levels_all_sixteen_cases(self):
        spec = ScoreSpec.binary(2)
        for y1, v1, y2, v2 in itertools.product((0, 1), repeat=4):
            assert score(spec, (y1, y2), (v1, v2)) == table1_sigma(y1, v1, y2, v2)

    @pytest.mark.parametrize("y, v, expected", TABLE2_GRID)
    def test_binary_then_count_grid(self, table2_spec, y, v, expected):
        assert score(table2_spec, y, v) == expected

    def test_dimension_mismatch(self, table2_spec):
        with pytest.raises(ShapeError):
            score(table2_spec, (0,), (1, 2))


spec_levels = st.lists(
    st.tuples(
        st.sampled_from(["binary", "continuous", "ordinal"]),
        st.sampled_from(["higher_is_better", "lower_is_better"]),
        st.sampled_from([0.0, 0.5, 2.0]),
    ),
    min_size=1,
    max_size=4,
)


def build_spec(raw):
    return ScoreSpec(PriorityLevel(k, d, t if k == "continuous" else 0.0) for k, d, t in raw)


class TestProperties:
    @given(spec_levels, st.lists(st.integers(0, 50), min_size=8, max_size=8))
    def test_antisymmetry_and_reference(self, raw, ints):
        spec = build_spec(raw)
        k = len(spec)
        y = [float(i % 2) if spec.levels[j].kind == "binary" else float(i % 7) for j, i in enumerate(ints[:k])]
        v = [float(i % 2) if spec.levels[j].kind == "binary" else float(i % 7) for j, i in enumerate(ints[4:4 + k])]
        s = score(spec, y, v)
        assert s == -score(spec, v, y)
        assert s == ref_score(levels_of(spec), y, v)
        assert score(spec, y, y) == 0

    @given(spec_levels, st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_matrix_matches_scalar(self, raw, m, n, seed):
        spec = build_spec(raw)
        g = np.random.default_rng(seed)

        def draw(rows):
            cols = [g.integers(0, 2, rows) if lvl.kind == "binary" else g.integers(0, 6, rows)
                    for lvl in spec.levels]
            return np.column_stack(cols).astype(float)

        Y, V = draw(m), draw(n)
        S = score_matrix(spec, Y, V)
        assert S.dtype == np.int8
        for i in range(m):
            for j in range(n):
                assert S[i, j] == score(spec, Y[i], V[j])
        np.testing.assert_array_equal(score_matrix(spec, V, Y), -S.T)
        k = min(m, n)
        np.testing.assert_array_equal(score_rows(spec, Y[:k], V[:k]), np.diag(S[:k, :k]))

    def test_exhaustive_antisymmetry_table2_grid(self, table2_spec):
        support = [(b, c) for b in (0, 1) for c in range(26)]
        S = score_matrix(table2_spec, np.array(support, float), np.array(support, float))
        np.testing.assert_array_equal(S, -S.T)

from __future__ import annotations

import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpcitr.data import (
    CovariateEncoding,
    DataSchema,
    TrialDataset,
    UnseenCategoryWarning,
    build_pairs,
    check_pair_budget,
    ingest_csv,
    net_benefit,
)
from gpcitr.errors import DomainError, IngestionError, ResourceError, ShapeError
from gpcitr.scoring import ScoreSpec

from conftest import levels_of, random_trial, ref_net_benefit


def write(path, text):
    path.write_text(text)
    return str(path)


class TestTrialDataset:
    def test_empty_arm(self):
        with pytest.raises(DomainError, match="control arm empty"):
            TrialDataset(np.zeros((0, 1)), np.zeros((0, 1)), np.zeros((1, 1)), np.zeros((1, 1)))
        with pytest.raises(DomainError, match="experimental arm empty"):
            TrialDataset(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((0, 1)), np.zeros((0, 1)))

    def test_shape_checks(self):
        with pytest.raises(ShapeError):
            TrialDataset(np.zeros((2, 1)), np.zeros((3, 1)), np.zeros((1, 1)), np.zeros((1, 1)))
        with pytest.raises(ShapeError):
            TrialDataset(np.zeros((2, 1)), np.zeros((2, 1)), np.zeros((1, 2)), np.zeros((1, 1)))

    def test_immutable(self):
        d = TrialDataset(np.zeros((2, 1)), np.zeros((2, 1)), np.zeros((1, 1)), np.zeros((1, 1)))
        with pytest.raises(ValueError):
            d.control_x[0, 0] = 1.0

    def test_from_arrays_and_covariates(self):
        X = np.arange(8.0).reshape(4, 2)
        d = TrialDataset.from_arrays(X, np.array([0, 1, 1, 0.0]), np.array([1, 0, 1, 0]))
        assert (d.m, d.n, d.d, d.outcome_dim) == (2, 2, 2, 1)
        np.testing.assert_array_equal(d.covariates(), X[[1, 3, 0, 2]])
        np.testing.assert_array_equal(d.arms(), [0, 0, 1, 1])

    def test_swapped(self):
        d = random_trial(np.random.default_rng(0), 3, 4)
        s = d.swapped()
        assert (s.m, s.n) == (4, 3)
        np.testing.assert_array_equal(s.control_x, d.experimental_x)


class TestNetBenefit:
    def test_single_pair(self):
        d = TrialDataset([[0.0]], [[0.0]], [[0.0]], [[1.0]])
        assert net_benefit(d, ScoreSpec.binary()) == 1.0

    def test_all_ties(self):
        d = TrialDataset(np.zeros((3, 1)), np.ones((3, 1)), np.zeros((2, 1)), np.ones((2, 1)))
        assert net_benefit(d, ScoreSpec.binary()) == 0.0

    def test_hand_example(self):
        # controls (1,0),(0,0) vs experimental (0,1),(1,1): sigma = -1, +1, +1, +1
        d = TrialDataset(np.zeros((2, 1)), [[1, 0], [0, 0]], np.zeros((2, 1)), [[0, 1], [1, 1]])
        assert net_benefit(d, ScoreSpec.binary(2)) == 0.5

    @given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
    def test_matches_double_loop_and_arm_swap(self, m, n, seed):
        d = random_trial(np.random.default_rng(seed), m, n)
        spec = ScoreSpec.binary(2)
        expected = ref_net_benefit(levels_of(spec), d.control_y, d.experimental_y)
        assert net_benefit(d, spec) == float(expected)
        assert net_benefit(d.swapped(), spec) == -net_benefit(d, spec)
        assert -1 <= net_benefit(d, spec) <= 1


class TestPairs:
    def test_order_and_scores(self):
        d = random_trial(np.random.default_rng(1), 3, 2)
        spec = ScoreSpec.binary(2)
        pairs = build_pairs(d, spec)
        assert len(pairs) == 6
        recs = list(pairs)
        np.testing.assert_array_equal(recs[1].x, d.control_x[0])
        np.testing.assert_array_equal(recs[1].u, d.experimental_x[1])
        assert pairs.features().shape == (6, 4)
        assert float(Fraction(int(pairs.sigma.sum()), 6)) == net_benefit(d, spec)

    def test_budget(self):
        with pytest.raises(ResourceError, match="bagged"):
            check_pair_budget(1000, 1000, budget=999_999)
        check_pair_budget(1000, 1000, budget=1_000_000)

    def test_to_csv(self, tmp_path):
        d = TrialDataset([[1.0]], [[0.0]], [[2.0], [3.0]], [[1.0], [0.0]])
        path = tmp_path / "pairs.csv"
        build_pairs(d, ScoreSpec.binary()).to_csv(str(path))
        assert path.read_text().splitlines() == ["x_1,u_1,sigma", "1.0,2.0,1", "1.0,3.0,0"]


class TestEncoding:
    def test_categorical_reference_and_unseen(self):
        enc = CovariateEncoding.fit(["age", "site"], [[50.0, 60.0], ["b", "a"]], categorical=["site"])
        assert enc.feature_names == ["age", "site=b"]
        X, unseen = enc.transform([{"age": 1, "site": "a"}, {"age": 2, "site": "b"}])
        np.testing.assert_array_equal(X, [[1, 0], [2, 1]])
        assert unseen == 0
        with pytest.warns(UnseenCategoryWarning):
            X, unseen = enc.transform([{"age": 3, "site": "zzz"}])
        assert unseen == 1
        np.testing.assert_array_equal(X, [[3, 0]])

    def test_standardize_population_sd(self):
        enc = CovariateEncoding.fit(["a", "c"], [[1.0, 3.0], [5.0, 5.0]], standardize=True)
        X, _ = enc.transform(np.array([[1.0, 5.0], [3.0, 5.0]]))
        np.testing.assert_allclose(X, [[-1, 5], [1, 5]])

    def test_round_trip(self):
        enc = CovariateEncoding.fit(["a", "s"], [[1.0, 2.0], ["x", "y"]], ["s"], standardize=True)
        assert CovariateEncoding.from_dict(enc.to_dict()).to_dict() == enc.to_dict()

    def test_array_needs_numeric(self):
        enc = CovariateEncoding.fit(["s"], [["x", "y"]], ["s"])
        with pytest.raises(DomainError):
            enc.transform(np.zeros((1, 1)))


SCHEMA = DataSchema("arm", ("y1", "y2"), ("x1", "g"), ("g",))


class TestIngest:
    def test_reads_and_encodes(self, tmp_path):
        p = write(tmp_path / "t.csv", "arm,y1,y2,x1,g\n0,1,0,0.5,a\n1,0,1,1.5,b\n1,1,1,2.5,a\n")
        d = ingest_csv(p, SCHEMA)
        assert (d.m, d.n, d.d) == (1, 2, 2)
        np.testing.assert_array_equal(d.experimental_x, [[1.5, 1], [2.5, 0]])

    def test_missing_rows_dropped_with_line_numbers(self, tmp_path):
        p = write(tmp_path / "t.csv", "arm,y1,y2,x1,g\n0,1,0,0.5,a\n1,,1,1.5,b\n1,1,1,NA,a\n1,0,0,1,b\n")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            d = ingest_csv(p, SCHEMA)
        assert d.rejected_rows == (3, 4)
        assert any("rejected 2" in str(w.message) for w in caught)
        assert d.n == 1

    def test_unknown_column(self, tmp_path):
        p = write(tmp_path / "t.csv", "arm,y1,x1,g\n0,1,0.5,a\n")
        with pytest.raises(IngestionError, match="y2"):
            ingest_csv(p, SCHEMA)

    def test_unparseable_cell_reports_line(self, tmp_path):
        p = write(tmp_path / "t.csv", "arm,y1,y2,x1,g\n0,1,0,0.5,a\n1,0,1,abc,b\n")
        with pytest.raises(IngestionError, match="line 3"):
            ingest_csv(p, SCHEMA)

    def test_bad_arm(self, tmp_path):
        p = write(tmp_path / "t.csv", "arm,y1,y2,x1,g\n2,1,0,0.5,a\n")
        with pytest.raises(IngestionError, match="arm"):
            ingest_csv(p, SCHEMA)

    def test_empty_arm(self, tmp_path):
        p = write(tmp_path / "t.csv", "arm,y1,y2,x1,g\n0,1,0,0.5,a\n")
        with pytest.raises(IngestionError, match="experimental arm empty"):
            ingest_csv(p, SCHEMA)

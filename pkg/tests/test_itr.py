from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpcitr import itr, simulation
from gpcitr.data import CovariateEncoding, TrialDataset
from gpcitr.errors import DomainError, ResourceError
from gpcitr.forest import ForestConfig, fit_forest
from gpcitr.itr import (
    BaggingConfig,
    ItrModel,
    draw_subsample,
    fit_bagged,
    fit_full_pairs,
    fit_knn,
    truncated_binomial_moments,
)
from gpcitr.knn import KnnConfig
from gpcitr.scoring import ScoreSpec, score_rows

from conftest import random_trial

SMALL = ForestConfig(n_trees=5, min_leaf=2)


class TestSubsample:
    def test_full_probability(self):
        g = np.random.default_rng(0)
        alpha, beta = draw_subsample(7, 7, 1.0, g)
        assert sorted(alpha) == list(range(7))
        np.testing.assert_array_equal(beta, np.arange(7))

    @given(st.integers(1, 40), st.integers(1, 40), st.floats(0.01, 1.0), st.integers(0, 2**32 - 1))
    def test_injections(self, m, n, q, seed):
        alpha, beta = draw_subsample(m, n, q, np.random.default_rng(seed))
        assert 1 <= len(alpha) == len(beta) <= min(m, n)
        assert len(set(alpha.tolist())) == len(alpha)
        assert np.all(np.diff(beta) > 0)
        assert alpha.min() >= 0 and alpha.max() < m and beta.max() < n

    def test_half_probability_bulk(self):
        g = np.random.default_rng(1)
        sizes = [len(draw_subsample(1000, 1000, 0.5, g)[0]) for _ in range(2000)]
        assert 400 <= min(sizes) and max(sizes) <= 600

    def test_truncated_moments_against_enumeration(self):
        from scipy.stats import binom

        k, q = 12, 0.1
        ell = np.arange(1, k + 1)
        p = binom.pmf(ell, k, q) / (1 - binom.pmf(0, k, q))
        mean, var = truncated_binomial_moments(k, q)
        assert mean == pytest.approx((ell * p).sum(), rel=1e-12)
        assert var == pytest.approx((ell**2 * p).sum() - (ell * p).sum() ** 2, rel=1e-10)

    def test_invalid_q(self):
        with pytest.raises(DomainError):
            draw_subsample(3, 3, 0.0, np.random.default_rng(0))
        with pytest.raises(DomainError):
            BaggingConfig(q=1.5)
        with pytest.raises(DomainError):
            BaggingConfig(b=0)

    def test_default_q(self):
        assert BaggingConfig().resolved_q(16) == 0.5


class TestFullPairs:
    def test_single_pair(self):
        d = TrialDataset([[0.3]], [[0.0]], [[0.7]], [[1.0]])
        model = fit_full_pairs(d, ScoreSpec.binary(), SMALL)
        assert model.ipb_encoded(np.array([[0.0], [5.0]])).tolist() == [1.0, 1.0]

    def test_all_ties(self):
        g = np.random.default_rng(0)
        d = TrialDataset(g.normal(size=(6, 2)), np.ones((6, 1)), g.normal(size=(5, 2)), np.ones((5, 1)))
        model = fit_full_pairs(d, ScoreSpec.binary(), SMALL)
        X = g.normal(size=(8, 2))
        np.testing.assert_array_equal(model.ipb_encoded(X), 0.0)
        np.testing.assert_array_equal(model.rule_encoded(X), 0)

    def test_budget(self):
        d = random_trial(np.random.default_rng(0), 10, 10)
        with pytest.raises(ResourceError, match="bagged"):
            fit_full_pairs(d, ScoreSpec.binary(2), SMALL, budget=99)

    def test_matches_explicit_pair_matrix(self):
        d = random_trial(np.random.default_rng(4), 7, 6)
        spec = ScoreSpec.binary(2)
        cfg = SMALL.replace(seed=3)
        model = fit_full_pairs(d, spec, cfg)
        pairs = np.hstack([np.repeat(d.control_x, 6, axis=0), np.tile(d.experimental_x, (7, 1))])
        from gpcitr.scoring import score_matrix

        ref = fit_forest(cfg, pairs, score_matrix(spec, d.control_y, d.experimental_y).ravel())
        X = np.random.default_rng(5).normal(size=(5, 2))
        p = ref.predict_proba(np.hstack([X, X]))
        np.testing.assert_array_equal(model.ipb_encoded(X), p[:, 2] - p[:, 0])


class TestBagged:
    def test_single_bag_full_sample(self):
        d = random_trial(np.random.default_rng(6), 9, 9)
        spec = ScoreSpec.binary(2)
        bag = BaggingConfig(b=1, q=1.0, seed=2)
        model = fit_bagged(d, spec, bag, SMALL)
        alpha, beta = draw_subsample(9, 9, 1.0, itr.rng.derive(2, "bagging.bag", 0))
        feats = np.hstack([d.control_x[alpha], d.experimental_x[beta]])
        labels = score_rows(spec, d.control_y[alpha], d.experimental_y[beta])
        learner = fit_forest(SMALL.replace(seed=itr.rng.derive_int(2, "bagging.learner", 0)), feats, labels)
        X = np.random.default_rng(7).normal(size=(6, 2))
        p = learner.predict_proba(np.hstack([X, X]))
        np.testing.assert_array_equal(model.ipb_encoded(X), p[:, 2] - p[:, 0])
        assert model.estimator.bag_sizes == [9]

    def test_identical_bags_average_to_one(self, monkeypatch):
        d = random_trial(np.random.default_rng(8), 12, 10)
        spec = ScoreSpec.binary(2)
        one = fit_bagged(d, spec, BaggingConfig(b=1, q=0.6, seed=4), SMALL)
        real_derive, real_int = itr.rng.derive, itr.rng.derive_int

        def same_bag(real):
            return lambda s, c, *i: real(s, c, *((0,) if c.startswith("bagging.") else i))

        monkeypatch.setattr(itr.rng, "derive", same_bag(real_derive))
        monkeypatch.setattr(itr.rng, "derive_int", same_bag(real_int))
        two = fit_bagged(d, spec, BaggingConfig(b=2, q=0.6, seed=4), SMALL)
        X = np.random.default_rng(9).normal(size=(6, 2))
        np.testing.assert_allclose(two.ipb_encoded(X), one.ipb_encoded(X), atol=1e-15)

    def test_ensemble_is_mean_of_bags(self):
        d = random_trial(np.random.default_rng(10), 30, 25)
        model = fit_bagged(d, ScoreSpec.binary(2), BaggingConfig(b=7, seed=1), SMALL)
        X = np.random.default_rng(11).normal(size=(20, 2))
        per_bag = model.estimator.per_bag_ipb(X)
        assert per_bag.shape == (7, 20)
        np.testing.assert_allclose(model.ipb_encoded(X), per_bag.mean(axis=0), atol=1e-15)
        assert np.all(np.abs(per_bag) <= 1)

    def test_thread_invariance(self):
        d = random_trial(np.random.default_rng(12), 40, 40)
        a = fit_bagged(d, ScoreSpec.binary(2), BaggingConfig(b=6, seed=3), SMALL, threads=1)
        b = fit_bagged(d, ScoreSpec.binary(2), BaggingConfig(b=6, seed=3), SMALL, threads=3)
        assert a.to_bytes() == b.to_bytes()

    def test_custom_learner(self):
        class Constant:
            def __init__(self, p):
                self.p = p

            def predict_proba(self, X):
                return np.tile(self.p, (X.shape[0], 1))

        d = random_trial(np.random.default_rng(13), 10, 10)
        model = fit_bagged(d, ScoreSpec.binary(2), BaggingConfig(b=3),
                           lambda X, y, seed: Constant(np.array([0.1, 0.3, 0.6])))
        np.testing.assert_allclose(model.ipb_encoded(np.zeros((2, 2))), 0.5)


class TestModel:
    @pytest.fixture
    def data(self):
        return random_trial(np.random.default_rng(14), 20, 18)

    @pytest.mark.parametrize("variant", ["knn", "full_pairs", "bagged"])
    def test_persistence_round_trip(self, data, variant, tmp_path):
        spec = ScoreSpec.binary(2)
        model = {
            "knn": lambda: fit_knn(data, spec, KnnConfig(4, 3)),
            "full_pairs": lambda: fit_full_pairs(data, spec, SMALL),
            "bagged": lambda: fit_bagged(data, spec, BaggingConfig(b=4), SMALL),
        }[variant]()
        path = str(tmp_path / "m.pitr")
        model.save(path)
        loaded = ItrModel.load(path)
        X = np.random.default_rng(15).normal(size=(10, 2))
        np.testing.assert_array_equal(loaded.ipb_encoded(X), model.ipb_encoded(X))
        assert loaded.variant == variant and loaded.spec == spec
        assert loaded.to_bytes() == model.to_bytes()

    def test_wrong_kind(self, data, tmp_path):
        path = str(tmp_path / "f.pitr")
        fit_forest(SMALL, np.zeros((3, 1)), np.array([0, 1, -1])).save(path)
        with pytest.raises(DomainError, match="kind"):
            ItrModel.load(path)

    def test_raw_rows_and_rule(self):
        g = np.random.default_rng(16)
        cx = np.column_stack([g.normal(size=10), g.integers(0, 2, 10)])
        ex = np.column_stack([g.normal(size=10), g.integers(0, 2, 10)])
        enc = CovariateEncoding.fit(["age", "site"], [[0.0], ["a", "b"]], categorical=["site"])
        d = TrialDataset(cx, g.integers(0, 2, (10, 1)), ex, g.integers(0, 2, (10, 1)), enc)
        model = fit_knn(d, ScoreSpec.binary(), KnnConfig(3, 3))
        v = model.ipb([{"age": 0.2, "site": "b"}])
        np.testing.assert_array_equal(v, model.ipb_encoded(np.array([[0.2, 1.0]])))
        assert model.rule([{"age": 0.2, "site": "b"}])[0] == int(v[0] > 0)
        with pytest.raises(DomainError):
            model.ipb([{"age": "old", "site": "a"}])

    def test_probability_difference(self):
        assert itr.ipb_from_probabilities(0.6, 0.1) == pytest.approx(0.5)
        assert itr.ipb_from_probabilities(0.3, 0.3) == 0


@pytest.fixture(scope="module")
def scenario_one():
    params = simulation.make_params(1, 0)
    train = simulation.sample_population(params, 2000, np.random.default_rng(100))
    evaluation = simulation.sample_population(params, 5000, np.random.default_rng(101))
    return params, train.split_trial()[0], evaluation


class TestScenarioOne:
    def test_bagged_sign_agreement(self, scenario_one):
        params, data, evaluation = scenario_one
        model = fit_bagged(data, params.spec, BaggingConfig(b=50, seed=1))
        agreement = np.mean(model.rule_encoded(evaluation.features) == (evaluation.oracle_ipb > 0))
        assert agreement >= 0.75

    @pytest.mark.slow
    def test_full_pairs_close_to_oracle(self, scenario_one):
        from gpcitr.evaluation import auc_score

        params, data, evaluation = scenario_one
        model = fit_full_pairs(data, params.spec, simulation.BENCHMARK_FOREST.replace(seed=2))
        ipb = model.ipb_encoded(evaluation.features)
        assert auc_score(ipb, evaluation.oracle_ipb > 0) > 0.8
        np.testing.assert_array_less(np.abs(ipb[:5] - evaluation.oracle_ipb[:5]), 0.35)

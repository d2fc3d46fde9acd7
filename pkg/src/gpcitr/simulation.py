"""Synthetic trial populations with closed-form oracles, and benchmark campaigns.

Covariates: ``Z ~ N(0, O D O^T)`` with ``D = diag(1 + 0.3 i)``, ``i = 1..8``
and ``O`` Haar-distributed; then ``X1 = Z1``, ``X2..X4 = exp(Z2..Z4)``,
``X5..X8 = 1{Z5..Z8 > 0}`` and an intercept ``X0 = 1``.

Scenario 1 has two binary outcomes drawn as one of the categories
``(1,1), (1,0), (0,1), (0,0)`` with softmax probabilities. Scenario 2 has a
binary outcome and a Binomial(25, .) count whose success probability depends
on the binary one. Both arms share the same law family with separate
coefficients, so the conditional outcome law is a finite distribution over a
fixed support and the pairwise benefit is an exact finite double sum.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Literal, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import binom

from . import rng
from .data import TrialDataset
from .errors import DomainError, GpcError, ShapeError
from .evaluation import (
    R0,
    RuleSpec,
    aipb_hat,
    calibration_curve,
    classification_metrics,
    rmse_ipb,
)
from .forest import ForestConfig
from .itr import BAG_BASE, BaggingConfig, ItrModel, fit_bagged, fit_full_pairs, fit_knn
from .scoring import PriorityLevel, ScoreSpec, score_matrix

N_LATENT = 8
N_COVARIATES = N_LATENT + 1
EIGENVALUES = 1.0 + 0.3 * np.arange(1, N_LATENT + 1)
COUNT_TRIALS = 25
SCENARIO2_DELTA = 3.0

# outcome vector of each scenario-one category, in softmax order
CATEGORIES = np.array([[1, 1], [1, 0], [0, 1], [0, 0]], dtype=np.float64)

SCENARIO_BLOCKS = {
    1: ("alpha11", "alpha10", "alpha01", "beta11", "beta10", "beta01"),
    2: ("alpha", "beta", "gamma", "theta", "xi", "rho"),
}


def scenario_spec(scenario: int) -> ScoreSpec:
    """Two binary levels for scenario 1; binary then count with ``delta = 3`` for scenario 2."""
    if scenario == 1:
        return ScoreSpec.binary(2)
    if scenario == 2:
        return ScoreSpec([PriorityLevel("binary"), PriorityLevel("continuous", threshold=SCENARIO2_DELTA)])
    raise DomainError(f"scenario must be 1 or 2, got {scenario!r}")


def haar_orthogonal(gen: np.random.Generator, size: int = N_LATENT) -> np.ndarray:
    q, r = np.linalg.qr(gen.standard_normal((size, size)))
    return q * np.sign(np.diag(r))


@dataclass(frozen=True)
class ScenarioParams:
    scenario: int
    rotation: np.ndarray
    eigenvalues: np.ndarray
    coefficients: dict[str, np.ndarray]
    seed: int

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIO_BLOCKS:
            raise DomainError(f"scenario must be 1 or 2, got {self.scenario!r}")
        if set(self.coefficients) != set(SCENARIO_BLOCKS[self.scenario]):
            raise DomainError(f"scenario {self.scenario} needs coefficient blocks {SCENARIO_BLOCKS[self.scenario]}")

    @property
    def delta(self) -> float:
        return SCENARIO2_DELTA if self.scenario == 2 else 0.0

    @property
    def spec(self) -> ScoreSpec:
        return scenario_spec(self.scenario)

    @property
    def covariance(self) -> np.ndarray:
        return (self.rotation * self.eigenvalues) @ self.rotation.T

    @property
    def factor(self) -> np.ndarray:
        """``O D^(1/2)``, so that ``factor @ factor.T`` is the covariance."""
        return self.rotation * np.sqrt(self.eigenvalues)

    def summary(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "eigenvalues": self.eigenvalues.tolist(),
            "rotation": self.rotation.tolist(),
            "coefficients": {k: v.tolist() for k, v in self.coefficients.items()},
            "delta": self.delta,
        }


def make_params(scenario: int, seed: int) -> ScenarioParams:
    if scenario not in SCENARIO_BLOCKS:
        raise DomainError(f"scenario must be 1 or 2, got {scenario!r}")
    g = rng.derive(seed, "simulation.params", scenario)
    rotation = haar_orthogonal(g)
    draws = g.uniform(-1.0, 1.0, size=(6, N_COVARIATES))
    coefs = {name: draws[i] for i, name in enumerate(SCENARIO_BLOCKS[scenario])}
    return ScenarioParams(scenario, rotation, EIGENVALUES.copy(), coefs, int(seed))


def sample_latent(params: ScenarioParams, size: int, gen: np.random.Generator) -> np.ndarray:
    return gen.standard_normal((size, N_LATENT)) @ params.factor.T


def transform_latent(Z: np.ndarray) -> np.ndarray:
    X = np.empty((Z.shape[0], N_COVARIATES))
    X[:, 0] = 1.0
    X[:, 1] = Z[:, 0]
    X[:, 2:5] = np.exp(Z[:, 1:4])
    X[:, 5:9] = (Z[:, 4:8] > 0).astype(np.float64)
    return X


def _as_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != N_COVARIATES:
        raise ShapeError(f"covariate vectors must have length {N_COVARIATES} (leading intercept)")
    return x


# -- conditional outcome laws -------------------------------------------------


def outcome_support(scenario: int) -> np.ndarray:
    """Support points of the outcome law as rows ``(y1, y2)``."""
    if scenario == 1:
        return CATEGORIES.copy()
    counts = np.arange(COUNT_TRIALS + 1, dtype=np.float64)
    return np.vstack([np.column_stack([np.full(COUNT_TRIALS + 1, b), counts]) for b in (0.0, 1.0)])


def softmax_probabilities(params: ScenarioParams, x: np.ndarray, arm: int) -> np.ndarray:
    """Scenario-one category probabilities ``(p11, p10, p01, p00)`` per row."""
    x = _as_rows(x)
    prefix = "alpha" if arm == 0 else "beta"
    logits = np.column_stack([x @ params.coefficients[prefix + ab] for ab in ("11", "10", "01")]
                             + [np.zeros(x.shape[0])])
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def _scenario2_blocks(arm: int) -> tuple[str, str, str]:
    return ("alpha", "beta", "gamma") if arm == 0 else ("theta", "xi", "rho")


def binary_probability(params: ScenarioParams, x: np.ndarray, arm: int) -> np.ndarray:
    """Scenario two: ``P(first outcome = 1 | x) = 1 / (1 + exp(w^T x))``."""
    a, _, _ = _scenario2_blocks(arm)
    return expit(-(_as_rows(x) @ params.coefficients[a]))


def count_probability(params: ScenarioParams, x: np.ndarray, first: np.ndarray | float, arm: int) -> np.ndarray:
    """Scenario two: Binomial success probability of the count given the binary outcome."""
    _, b, c = _scenario2_blocks(arm)
    x = _as_rows(x)
    return expit(-(x @ params.coefficients[b] + np.asarray(first) * (x @ params.coefficients[c])))


def outcome_distribution(params: ScenarioParams, x: np.ndarray, arm: int) -> np.ndarray:
    """Probabilities over :func:`outcome_support` for each row of ``x``."""
    if params.scenario == 1:
        return softmax_probabilities(params, x, arm)
    x = _as_rows(x)
    p1 = binary_probability(params, x, arm)
    k = np.arange(COUNT_TRIALS + 1)
    out = []
    for b, weight in ((0, 1.0 - p1), (1, p1)):
        p2 = count_probability(params, x, b, arm)
        out.append(weight[:, None] * binom.pmf(k[None, :], COUNT_TRIALS, p2[:, None]))
    return np.hstack(out)


def support_scores(params: ScenarioParams) -> np.ndarray:
    s = outcome_support(params.scenario)
    return score_matrix(params.spec, s, s).astype(np.float64)


def oracle_delta(params: ScenarioParams, x: np.ndarray, u: np.ndarray, swapped: bool = False) -> np.ndarray | float:
    """Exact pairwise benefit ``sum_{y,v} sigma(y, v) p_y(x) q_v(u)``.

    ``x`` and ``u`` are single covariate vectors or aligned row blocks. With
    ``swapped=True`` the arms exchange roles: ``x`` is drawn from the
    experimental law and ``u`` from the control law, so that
    ``oracle_delta(x, u) == -oracle_delta(u, x, swapped=True)``.
    """
    scalar = np.ndim(x) == 1 and np.ndim(u) == 1
    xa, ua = _as_rows(x), _as_rows(u)
    if xa.shape[0] != ua.shape[0]:
        if xa.shape[0] == 1:
            xa = np.repeat(xa, ua.shape[0], axis=0)
        elif ua.shape[0] == 1:
            ua = np.repeat(ua, xa.shape[0], axis=0)
        else:
            raise ShapeError("x and u must have the same number of rows")
    P = outcome_distribution(params, xa, 1 if swapped else 0)
    Q = outcome_distribution(params, ua, 0 if swapped else 1)
    out = np.einsum("ik,kl,il->i", P, support_scores(params), Q)
    out = np.clip(out, -1.0, 1.0)
    return float(out[0]) if scalar else out


def oracle_ipb(params: ScenarioParams, X: np.ndarray) -> np.ndarray:
    X = _as_rows(X)
    return np.asarray(oracle_delta(params, X, X), dtype=np.float64).reshape(-1)


def sample_outcomes(params: ScenarioParams, x: np.ndarray, arm: int, gen: np.random.Generator) -> np.ndarray:
    """Draw potential outcomes under ``arm`` for each row of ``x``."""
    x = _as_rows(x)
    n = x.shape[0]
    if params.scenario == 1:
        P = softmax_probabilities(params, x, arm)
        u = gen.random(n)
        cat = np.minimum((np.cumsum(P, axis=1) < u[:, None]).sum(axis=1), 3)
        return CATEGORIES[cat]
    first = (gen.random(n) < binary_probability(params, x, arm)).astype(np.float64)
    count = gen.binomial(COUNT_TRIALS, count_probability(params, x, first, arm)).astype(np.float64)
    return np.column_stack([first, count])


@dataclass(frozen=True)
class Population:
    """Simulated subjects: covariates (with intercept), both potential outcomes and oracle IPB."""

    covariates: np.ndarray
    outcome_control: np.ndarray
    outcome_experimental: np.ndarray
    oracle_ipb: np.ndarray

    def __len__(self) -> int:
        return self.covariates.shape[0]

    @property
    def features(self) -> np.ndarray:
        """Covariates without the intercept column, as used for fitting."""
        return self.covariates[:, 1:]

    def trial(self, arm: np.ndarray) -> TrialDataset:
        """Observed trial where subject ``i`` receives ``arm[i]``."""
        arm = np.asarray(arm)
        Y = np.where(arm[:, None] == 1, self.outcome_experimental, self.outcome_control)
        return TrialDataset.from_arrays(self.features, Y, arm)

    def split_trial(self) -> tuple[TrialDataset, np.ndarray]:
        """First half control, second half experimental."""
        n = len(self)
        arm = (np.arange(n) >= n // 2).astype(np.int8)
        return self.trial(arm), arm


def sample_population(params: ScenarioParams, size: int, gen: np.random.Generator | int) -> Population:
    if size < 1:
        raise DomainError("population size must be at least 1")
    if not isinstance(gen, np.random.Generator):
        gen = rng.derive(int(gen), "simulation.population", params.scenario)
    X = transform_latent(sample_latent(params, size, gen))
    y0 = sample_outcomes(params, X, 0, gen)
    y1 = sample_outcomes(params, X, 1, gen)
    return Population(X, y0, y1, oracle_ipb(params, X))


def write_population_csv(pop: Population, arm: np.ndarray, path: str) -> None:
    """Columns ``x0..x8, y1, y2, arm, oracle_ipb``; outcomes are the observed ones."""
    arm = np.asarray(arm)
    Y = np.where(arm[:, None] == 1, pop.outcome_experimental, pop.outcome_control)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(N_COVARIATES)] + ["y1", "y2", "arm", "oracle_ipb"])
        for i in range(len(pop)):
            w.writerow([repr(float(v)) for v in pop.covariates[i]]
                       + [repr(float(Y[i, 0])), repr(float(Y[i, 1])), int(arm[i]), repr(float(pop.oracle_ipb[i]))])


# -- benchmark campaigns ------------------------------------------------------

Method = Literal["forest", "bagged", "knn"]

# forest settings sized for desk-scale campaigns on one core
BENCHMARK_FOREST = ForestConfig(n_trees=50, min_leaf=100)

METRICS = ("rmse", "aipb_bias", "auc", "mcc", "sensitivity", "specificity",
           "confusion_00", "confusion_01", "confusion_10", "confusion_11", "agreement")


@dataclass(frozen=True)
class BenchmarkConfig:
    scenario: int
    train_sizes: tuple[int, ...] = (400, 2000)
    iterations: int = 2
    eval_size: int = 10_000
    seed: int = 0
    method: Method = "forest"
    forest: ForestConfig | None = None
    bagging: BaggingConfig = BaggingConfig()
    bins: int = 20

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise DomainError("iterations must be at least 1")
        if self.eval_size < 1:
            raise DomainError("eval_size must be at least 1")
        if any(s < 2 for s in self.train_sizes):
            raise DomainError("training sizes must be at least 2")
        if self.method not in ("forest", "bagged", "knn"):
            raise DomainError(f"unknown method {self.method!r}")

    @property
    def resolved_forest(self) -> ForestConfig:
        if self.forest is not None:
            return self.forest
        return BAG_BASE if self.method == "bagged" else BENCHMARK_FOREST


def fit_method(config: BenchmarkConfig, data: TrialDataset, seed: int) -> ItrModel:
    spec = scenario_spec(config.scenario)
    if config.method == "knn":
        return fit_knn(data, spec)
    if config.method == "bagged":
        bag = BaggingConfig(config.bagging.b, config.bagging.q, seed)
        return fit_bagged(data, spec, bag, config.resolved_forest, threads=1)
    return fit_full_pairs(data, spec, config.resolved_forest.replace(seed=seed), threads=1)


def iteration_metrics(predicted: np.ndarray, oracle: np.ndarray) -> dict[str, float | None]:
    rule = (predicted > 0).astype(np.int8)
    oracle_rule = (oracle > 0).astype(np.int8)
    X = np.zeros((predicted.size, 0))
    est = aipb_hat(X, R0, RuleSpec.table(rule), predicted)
    truth = aipb_hat(X, R0, RuleSpec.table(oracle_rule), oracle)
    cls = classification_metrics(rule, predicted, oracle_rule)
    conf = cls["confusion"]
    return {
        "rmse": rmse_ipb(predicted, oracle),
        "aipb_bias": est - truth,
        "auc": cls["auc"],
        "mcc": cls["mcc"],
        "sensitivity": cls["sensitivity"],
        "specificity": cls["specificity"],
        "confusion_00": conf[0][0],
        "confusion_01": conf[0][1],
        "confusion_10": conf[1][0],
        "confusion_11": conf[1][1],
        "agreement": float(np.mean(rule == oracle_rule)),
    }


def format_cell(mean: float | None, sd: float | None) -> str:
    if mean is None:
        return "NA"
    return f"{mean:.2f} ({sd:.2f})" if sd is not None else f"{mean:.2f}"


@dataclass
class CampaignReport:
    config: dict[str, Any]
    params: dict[str, Any]
    iterations: list[dict[str, Any]]
    summary: dict[int, dict[str, dict[str, float | None]]]
    calibration: dict[int, list[dict[str, float]]]
    timing: dict[str, float] = field(default_factory=dict, compare=False)

    def table(self) -> list[list[str]]:
        sizes = sorted(self.summary)
        rows = [["metric"] + [f"N={s}" for s in sizes]]
        for metric in METRICS:
            rows.append([metric] + [format_cell(self.summary[s][metric]["mean"], self.summary[s][metric]["sd"])
                                    for s in sizes])
        return rows

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config,
            "params": self.params,
            "iterations": self.iterations,
            "summary": {str(k): v for k, v in self.summary.items()},
            "calibration": {str(k): v for k, v in self.calibration.items()},
        }

    def write(self, directory: str) -> None:
        """``report.json``, ``table.csv``, ``iterations.csv`` and ``calibration.csv``."""
        import os

        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(directory, "table.csv"), "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.table())
        with open(os.path.join(directory, "iterations.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["size", "iteration", *METRICS])
            for row in self.iterations:
                w.writerow([row["size"], row["iteration"]]
                           + ["" if row[k] is None else repr(row[k]) for k in METRICS])
        with open(os.path.join(directory, "calibration.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["size", "bin_center", "mean_predicted", "mean_oracle", "count"])
            for size in sorted(self.calibration):
                for r in self.calibration[size]:
                    w.writerow([size, repr(r["bin_center"]), repr(r["mean_predicted"]),
                                repr(r["mean_oracle"]), r["count"]])


def _aggregate(values: Sequence[float | None]) -> dict[str, float | None]:
    v = np.array([x for x in values if x is not None], dtype=np.float64)
    if v.size == 0:
        return {"mean": None, "sd": None, "count": 0}
    return {"mean": float(v.mean()), "sd": float(v.std(ddof=1)) if v.size > 1 else 0.0, "count": int(v.size)}


def _pool_calibration(tables: list[list], bins: int) -> list[dict[str, float]]:
    """Count-weighted average of per-iteration calibration rows, bin by bin."""
    acc: dict[float, list[float]] = {}
    for table in tables:
        for r in table:
            a = acc.setdefault(r.bin_center, [0.0, 0.0, 0])
            a[0] += r.mean_predicted * r.count
            a[1] += r.mean_oracle * r.count
            a[2] += r.count
    return [{"bin_center": c, "mean_predicted": a[0] / a[2], "mean_oracle": a[1] / a[2], "count": int(a[2])}
            for c, a in sorted(acc.items())]


def run_benchmark(config: BenchmarkConfig,
                  progress: Callable[[str], None] | None = None) -> CampaignReport:
    """Monte Carlo campaign: fit on fresh training draws, score on one shared evaluation set."""
    params = make_params(config.scenario, config.seed)
    evaluation = sample_population(params, config.eval_size, rng.derive(config.seed, "benchmark.eval"))
    iterations = []
    summary: dict[int, dict[str, dict[str, float | None]]] = {}
    calibration: dict[int, list[dict[str, float]]] = {}
    timing: dict[str, float] = {}
    for size in config.train_sizes:
        rows = []
        tables = []
        started = time.perf_counter()
        for it in range(config.iterations):
            train = sample_population(params, size, rng.derive(config.seed, "benchmark.train", size, it))
            data, _ = train.split_trial()
            try:
                model = fit_method(config, data, rng.derive_int(config.seed, "benchmark.fit", size, it))
                predicted = model.ipb_encoded(evaluation.features)
            except GpcError as exc:
                raise GpcError(f"benchmark iteration {it} at size {size} failed: {exc}") from exc
            metrics = iteration_metrics(predicted, evaluation.oracle_ipb)
            rows.append({"size": size, "iteration": it, **metrics})
            tables.append(calibration_curve(predicted, evaluation.oracle_ipb, config.bins))
            if progress is not None:
                progress(f"size={size} iteration={it} rmse={metrics['rmse']:.4f} auc={metrics['auc']}")
        timing[str(size)] = time.perf_counter() - started
        iterations.extend(rows)
        summary[size] = {k: _aggregate([r[k] for r in rows]) for k in METRICS}
        calibration[size] = _pool_calibration(tables, config.bins)
    forest = config.resolved_forest
    cfg = {
        "scenario": config.scenario,
        "train_sizes": list(config.train_sizes),
        "iterations": config.iterations,
        "eval_size": config.eval_size,
        "seed": config.seed,
        "method": config.method,
        "forest": {"n_trees": forest.n_trees, "mtry": forest.mtry,
                   "min_leaf": forest.min_leaf, "max_depth": forest.max_depth},
        "bagging": {"b": config.bagging.b, "q": config.bagging.q},
        "bins": config.bins,
    }
    return CampaignReport(cfg, params.summary(), iterations, summary, calibration, timing)

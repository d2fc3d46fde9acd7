"""Metrics and estimands for fitted treatment rules.

Covers IPB accuracy against an oracle (RMSE, calibration), rule quality
against the oracle rule (AUC, MCC, sensitivity, specificity, confusion
matrix), the average individualized pairwise benefit of a rule pair by
G-computation with cross-fitting, within-arm bootstrap standard errors, and
the stratified proportion in favor of treatment for discrete strata.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Any, Callable, Literal, NamedTuple, Sequence

import numpy as np
from scipy.stats import rankdata

from . import rng
from .data import TrialDataset
from .errors import DomainError, GpcError, ShapeError
from .scoring import ScoreSpec, score_matrix

RuleKind = Literal["constant_0", "constant_1", "model", "oracle_table"]


# --------------------------------------------------------------------------
# IPB accuracy
# --------------------------------------------------------------------------


def _aligned(a: Sequence[float], b: Sequence[float], what: str) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"{what}: lengths differ ({a.size} vs {b.size})")
    if a.size == 0:
        raise ShapeError(f"{what}: empty input")
    return a, b


def rmse_ipb(predicted: Sequence[float], oracle: Sequence[float]) -> float:
    p, o = _aligned(predicted, oracle, "rmse_ipb")
    return float(np.sqrt(np.mean((p - o) ** 2)))


class CalibrationRow(NamedTuple):
    bin_center: float
    mean_predicted: float
    mean_oracle: float
    count: int


def calibration_curve(predicted: Sequence[float], oracle: Sequence[float], bins: int = 20) -> list[CalibrationRow]:
    """Equal-width bins of ``predicted`` on [-1, 1]; empty bins are omitted."""
    if bins < 2:
        raise DomainError("calibration needs at least 2 bins")
    p, o = _aligned(predicted, oracle, "calibration_curve")
    if np.any(np.abs(p) > 1) or np.any(np.abs(o) > 1):
        raise DomainError("calibration values must lie in [-1, 1]")
    width = 2.0 / bins
    which = np.minimum(np.floor((p + 1.0) / width).astype(np.int64), bins - 1)
    rows = []
    for b in range(bins):
        mask = which == b
        count = int(mask.sum())
        if count:
            rows.append(CalibrationRow(-1.0 + (b + 0.5) * width, float(p[mask].mean()),
                                       float(o[mask].mean()), count))
    return rows


# --------------------------------------------------------------------------
# rule classification quality
# --------------------------------------------------------------------------


def auc_score(score: Sequence[float], labels: Sequence[int]) -> float | None:
    """Mann-Whitney area under the ROC curve; tied pairs count one half."""
    s = np.asarray(score, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        return None
    ranks = rankdata(s)
    u = ranks[y].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def confusion_counts(predicted: np.ndarray, oracle: np.ndarray) -> tuple[int, int, int, int]:
    """``(tn, fp, fn, tp)`` with positive class 1."""
    p = predicted.astype(bool)
    o = oracle.astype(bool)
    tp = int(np.sum(p & o))
    tn = int(np.sum(~p & ~o))
    fp = int(np.sum(p & ~o))
    fn = int(np.sum(~p & o))
    return tn, fp, fn, tp


def mcc_from_counts(tn: int, fp: int, fn: int, tp: int) -> float:
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return float((tp * tn - fp * fn) / math.sqrt(denom))


def classification_metrics(predicted_rule: Sequence[int], predicted_score: Sequence[float],
                           oracle_rule: Sequence[int]) -> dict[str, Any]:
    """AUC, MCC, sensitivity, specificity and confusion proportions.

    The confusion matrix has rows indexed by the oracle best treatment and
    columns by the recommended treatment. Metrics that need both oracle
    classes are ``None`` when the oracle is single-class.
    """
    pr = np.asarray(predicted_rule).ravel()
    ps = np.asarray(predicted_score, dtype=np.float64).ravel()
    orc = np.asarray(oracle_rule).ravel()
    if not (pr.size == ps.size == orc.size):
        raise ShapeError("classification_metrics: inputs must be aligned")
    if pr.size == 0:
        raise ShapeError("classification_metrics: empty input")
    for name, a in (("predicted_rule", pr), ("oracle_rule", orc)):
        if not np.all((a == 0) | (a == 1)):
            raise DomainError(f"{name} must contain only 0 and 1")
    tn, fp, fn, tp = confusion_counts(pr, orc)
    total = pr.size
    both = (tp + fn) > 0 and (tn + fp) > 0
    return {
        "auc": auc_score(ps, orc),
        "mcc": mcc_from_counts(tn, fp, fn, tp) if both else None,
        "sensitivity": tp / (tp + fn) if tp + fn else None,
        "specificity": tn / (tn + fp) if tn + fp else None,
        "confusion": [[tn / total, fp / total], [fn / total, tp / total]],
    }


# --------------------------------------------------------------------------
# rules and AIPB
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RuleSpec:
    """A treatment rule to compare.

    ``model`` rules use ``payload`` (anything with ``rule_encoded(X)``, or a
    callable returning 0/1 actions); with no payload they stand for the model
    fitted inside the current cross-fitting fold. ``oracle_table`` rules hold
    one action per pooled subject (controls first).
    """

    kind: RuleKind
    payload: Any = None

    def __post_init__(self) -> None:
        if self.kind not in ("constant_0", "constant_1", "model", "oracle_table"):
            raise DomainError(f"unknown rule kind {self.kind!r}")
        if self.kind == "oracle_table":
            table = np.asarray(self.payload)
            if not np.all((table == 0) | (table == 1)):
                raise DomainError("oracle table actions must be 0 or 1")

    @classmethod
    def constant(cls, action: int) -> "RuleSpec":
        return cls("constant_1" if action else "constant_0")

    @classmethod
    def table(cls, actions: Sequence[int]) -> "RuleSpec":
        return cls("oracle_table", np.asarray(actions, dtype=np.int8))

    def actions(self, X: np.ndarray, rows: np.ndarray | None = None, fitted: Any = None) -> np.ndarray:
        n = X.shape[0]
        if self.kind == "constant_0":
            return np.zeros(n, dtype=np.int8)
        if self.kind == "constant_1":
            return np.ones(n, dtype=np.int8)
        if self.kind == "oracle_table":
            table = np.asarray(self.payload, dtype=np.int8)
            out = table if rows is None else table[rows]
            if out.shape[0] != n:
                raise ShapeError("oracle table is not aligned with the subjects")
            return out
        model = self.payload if self.payload is not None else fitted
        if model is None:
            raise DomainError("model rule has no model to evaluate")
        if hasattr(model, "rule_encoded"):
            return np.asarray(model.rule_encoded(X), dtype=np.int8)
        if hasattr(model, "ipb_encoded"):
            return (np.asarray(model.ipb_encoded(X)) > 0).astype(np.int8)
        return np.asarray(model(X), dtype=np.int8)


R0 = RuleSpec("constant_0")
R1 = RuleSpec("constant_1")


def aipb_hat(X: np.ndarray, r: RuleSpec, s: RuleSpec, ipb_values: Sequence[float],
             rows: np.ndarray | None = None, fitted: Any = None) -> float:
    """G-computation estimate ``mean((s(x) - r(x)) * ipb(x))`` over the rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    v = np.asarray(ipb_values, dtype=np.float64).ravel()
    if v.shape[0] != X.shape[0]:
        raise ShapeError("ipb values are not aligned with the covariate rows")
    diff = s.actions(X, rows, fitted).astype(np.float64) - r.actions(X, rows, fitted)
    return float(np.mean(diff * v))


FitFn = Callable[[TrialDataset], Any]


def _ipb_of(model: Any, X: np.ndarray) -> np.ndarray:
    if hasattr(model, "ipb_encoded"):
        return np.asarray(model.ipb_encoded(X), dtype=np.float64)
    return np.asarray(model(X), dtype=np.float64)


def fold_assignment(m: int, n: int, folds: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Arm-stratified fold labels for controls and experimental subjects."""
    out = []
    for arm, size in (("control", m), ("experimental", n)):
        perm = rng.derive(seed, "crossfit.folds", 0 if arm == "control" else 1).permutation(size)
        labels = np.empty(size, dtype=np.int64)
        labels[perm] = np.arange(size) % folds
        out.append(labels)
    return out[0], out[1]


@dataclass
class CrossFit:
    """Out-of-fold IPB values and the per-fold models."""

    ipb: np.ndarray  # pooled, controls first
    fold: np.ndarray  # pooled fold label per subject
    models: list[Any] = field(repr=False)


def crossfit_ipb(data: TrialDataset, fit_fn: FitFn, folds: int = 3, seed: int = 0) -> CrossFit:
    if folds < 2:
        raise DomainError("cross-fitting needs at least 2 folds")
    if data.m < folds or data.n < folds:
        raise DomainError(f"each arm needs at least {folds} subjects for {folds}-fold cross-fitting")
    fc, fe = fold_assignment(data.m, data.n, folds, seed)
    X = data.covariates()
    pooled_fold = np.concatenate([fc, fe])
    ipb = np.empty(data.m + data.n, dtype=np.float64)
    models = []
    for f in range(folds):
        train = data.subset(np.flatnonzero(fc != f), np.flatnonzero(fe != f))
        model = fit_fn(train)
        rows = np.flatnonzero(pooled_fold == f)
        ipb[rows] = _ipb_of(model, X[rows])
        models.append(model)
    return CrossFit(ipb, pooled_fold, models)


def aipb_crossfit(data: TrialDataset, spec: ScoreSpec, r: RuleSpec, s: RuleSpec, fit_fn: FitFn,
                  folds: int = 3, seed: int = 0) -> float:
    """Cross-fitted G-computation AIPB of the rule pair ``(r, s)``.

    Each fold's IPB values come from a model fitted on the other folds; the
    fold AIPBs are averaged. ``spec`` is the score the ``fit_fn`` is expected
    to train on and is only checked against the data.
    """
    if data.outcome_dim != len(spec):
        raise ShapeError("outcome dimension does not match the score spec")
    cf = crossfit_ipb(data, fit_fn, folds, seed)
    X = data.covariates()
    per_fold = []
    for f in range(folds):
        rows = np.flatnonzero(cf.fold == f)
        per_fold.append(aipb_hat(X[rows], r, s, cf.ipb[rows], rows, cf.models[f]))
    return float(np.mean(per_fold))


# --------------------------------------------------------------------------
# bootstrap
# --------------------------------------------------------------------------


class BootstrapResult(NamedTuple):
    estimate: float
    se: float


MAX_RETRIES = 10


def bootstrap_replicates(data: TrialDataset, statistic: Callable[[TrialDataset], float],
                         b_boot: int = 200, seed: int = 0) -> tuple[np.ndarray, int]:
    """Statistic on ``b_boot`` within-arm resamples; returns replicates and failure count."""
    if b_boot < 2:
        raise DomainError("bootstrap needs at least 2 replicates")
    reps = np.empty(b_boot, dtype=np.float64)
    failures = 0
    for b in range(b_boot):
        for attempt in range(MAX_RETRIES + 1):
            g = rng.derive(seed, "bootstrap", b, attempt)
            ci = g.integers(0, data.m, size=data.m)
            ei = g.integers(0, data.n, size=data.n)
            try:
                reps[b] = float(statistic(data.subset(ci, ei)))
                break
            except Exception as exc:  # noqa: BLE001 - any failing replicate is redrawn
                failures += 1
                if attempt == MAX_RETRIES:
                    raise GpcError(f"bootstrap replicate {b} failed {MAX_RETRIES + 1} times: {exc}") from exc
    return reps, failures


def bootstrap_se(data: TrialDataset, statistic: Callable[[TrialDataset], float],
                 b_boot: int = 200, seed: int = 0) -> BootstrapResult:
    estimate = float(statistic(data))
    reps, failures = bootstrap_replicates(data, statistic, b_boot, seed)
    if failures:
        warnings.warn(f"{failures} bootstrap replicate(s) failed and were redrawn", stacklevel=2)
    return BootstrapResult(estimate, float(np.std(reps, ddof=1)))


def conditional_aipb_se(terms: np.ndarray, m: int, n: int, b_boot: int = 200, seed: int = 0) -> BootstrapResult:
    """Mean of per-subject AIPB terms with a within-arm bootstrap SE.

    The fitted rule and IPB values stay fixed; only subjects are resampled,
    which gives a standard error conditional on the training set.
    """
    terms = np.asarray(terms, dtype=np.float64)
    if terms.shape[0] != m + n:
        raise ShapeError("terms must hold one value per pooled subject")
    if b_boot < 2:
        raise DomainError("bootstrap needs at least 2 replicates")
    reps = np.empty(b_boot)
    for b in range(b_boot):
        g = rng.derive(seed, "bootstrap.conditional", b)
        ci = g.integers(0, m, size=m)
        ei = m + g.integers(0, n, size=n)
        reps[b] = terms[np.concatenate([ci, ei])].mean()
    return BootstrapResult(float(terms.mean()), float(np.std(reps, ddof=1)))


# --------------------------------------------------------------------------
# proportion in favor for discrete strata
# --------------------------------------------------------------------------


def gamma_discrete(strata: Sequence[Any], data: TrialDataset, spec: ScoreSpec) -> float:
    """Stratified proportion in favor: ``sum p_k^2 (q_k+ - q_k-) / sum p_k^2``.

    ``strata`` gives one label per pooled subject, controls first. ``p_k`` is
    the pooled stratum frequency; ``q_k+`` and ``q_k-`` are the shares of
    favorable and unfavorable pairs among the within-stratum cross-arm pairs.
    Strata missing from either arm are dropped with a warning.
    """
    labels = np.asarray(strata, dtype=object).ravel()
    if labels.shape[0] != data.m + data.n:
        raise ShapeError("strata must hold one label per pooled subject")
    lc, le = labels[: data.m], labels[data.m :]
    total = labels.shape[0]
    # exact rationals: with one stratum the result is the net benefit to the last bit
    num = Fraction(0)
    den = Fraction(0)
    dropped = []
    for k in dict.fromkeys(labels.tolist()):
        ci = np.flatnonzero(lc == k)
        ei = np.flatnonzero(le == k)
        if ci.size == 0 or ei.size == 0:
            dropped.append(k)
            continue
        S = score_matrix(spec, data.control_y[ci], data.experimental_y[ei])
        p = Fraction(int(ci.size + ei.size), total)
        num += p * p * Fraction(int(S.sum(dtype=np.int64)), int(S.size))
        den += p * p
    if dropped:
        warnings.warn(f"dropped strata missing from one arm: {dropped}", stacklevel=2)
    if den == 0:
        raise DomainError("no stratum is present in both arms")
    return float(num / den)


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


@dataclass
class MetricsReport:
    rmse_ipb: float | None
    aipb: dict[str, tuple[float, float | None]]
    auc: float | None
    mcc: float | None
    sensitivity: float | None
    specificity: float | None
    confusion: list[list[float]]
    calibration: list[CalibrationRow]

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["aipb"] = {k: {"estimate": v[0], "se": v[1]} for k, v in self.aipb.items()}
        d["calibration"] = [row._asdict() for row in self.calibration]
        return d

    def to_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path: str) -> None:
        """One ``metric,value`` row per scalar; missing values are empty cells."""
        rows: list[tuple[str, Any]] = [
            ("rmse_ipb", self.rmse_ipb), ("auc", self.auc), ("mcc", self.mcc),
            ("sensitivity", self.sensitivity), ("specificity", self.specificity),
        ]
        for name, (est, se) in self.aipb.items():
            rows.append((f"aipb[{name}]", est))
            rows.append((f"aipb_se[{name}]", se))
        for i in range(2):
            for j in range(2):
                rows.append((f"confusion[best={i},recommended={j}]", self.confusion[i][j]))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value"])
            for name, value in rows:
                w.writerow([name, "" if value is None else repr(float(value))])


def write_calibration_csv(rows: Sequence[CalibrationRow], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CalibrationRow._fields)
        for r in rows:
            w.writerow([repr(r.bin_center), repr(r.mean_predicted), repr(r.mean_oracle), r.count])


def oracle_report(predicted_ipb: Sequence[float], oracle_ipb: Sequence[float],
                  predicted_rule: Sequence[int] | None = None, bins: int = 20) -> MetricsReport:
    """Score estimated IPB values against oracle IPB values.

    The oracle rule is ``1{oracle_ipb > 0}``. The AIPB entry compares the
    recommended rule with treating nobody: the estimate uses the predicted
    IPB values, the bias is its difference from the oracle optimum.
    """
    p, o = _aligned(predicted_ipb, oracle_ipb, "oracle_report")
    rule = (p > 0).astype(np.int8) if predicted_rule is None else np.asarray(predicted_rule, dtype=np.int8)
    oracle_rule = (o > 0).astype(np.int8)
    X = np.zeros((p.size, 0))
    est = aipb_hat(X, R0, RuleSpec.table(rule), p)
    truth = aipb_hat(X, R0, RuleSpec.table(oracle_rule), o)
    cls = classification_metrics(rule, p, oracle_rule)
    return MetricsReport(
        rmse_ipb=rmse_ipb(p, o),
        aipb={"r0,rhat": (est, None), "r0,ropt": (truth, None), "bias": (est - truth, None)},
        auc=cls["auc"],
        mcc=cls["mcc"],
        sensitivity=cls["sensitivity"],
        specificity=cls["specificity"],
        confusion=cls["confusion"],
        calibration=calibration_curve(np.clip(p, -1, 1), o, bins),
    )

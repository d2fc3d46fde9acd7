"""Classification-based IPB estimation and the fitted treatment-rule model.

Two classifier pipelines are provided:

``fit_full_pairs``
    trains one classifier on all ``m * n`` cross-arm pairs.

``fit_bagged``
    trains ``b`` classifiers, each on an iid sample of matched pairs whose
    size is Binomial(``min(m, n)``, ``q``); the ``i``-th control drawn by a
    random injection is matched with the ``i``-th experimental subject drawn
    by a random increasing injection. Predictions are averaged over bags.

Both estimate the IPB at ``x`` as ``P(+1 | x, x) - P(-1 | x, x)`` and
recommend the experimental treatment when it is strictly positive.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Literal

import numpy as np

from . import container, rng
from .data import DEFAULT_PAIR_BUDGET, CovariateEncoding, TrialDataset, check_pair_budget
from .errors import DomainError, ShapeError
from .forest import (
    Classifier,
    ForestConfig,
    Learner,
    RandomForest,
    code_pair_features,
    fit_coded,
    fit_forest,
)
from .knn import KnnConfig, KnnModel, default_neighbor_counts
from .scoring import ScoreSpec, score_matrix, score_rows

Variant = Literal["knn", "full_pairs", "bagged"]


def default_q(k: int) -> float:
    """``k ** -1/4``: expected bag size ``k ** 3/4`` still diverges."""
    return float(k) ** -0.25


@dataclass(frozen=True)
class BaggingConfig:
    b: int = 50
    q: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.b < 1:
            raise DomainError("bag count b must be at least 1")
        if self.q is not None and not 0 < self.q <= 1:
            raise DomainError(f"subsampling probability q must lie in (0, 1], got {self.q}")

    def resolved_q(self, k: int) -> float:
        return default_q(k) if self.q is None else self.q


def draw_subsample(m: int, n: int, q: float, gen: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(alpha, beta)`` index arrays of a common random length ``l >= 1``.

    ``l`` is Binomial(min(m, n), q) redrawn until positive; ``alpha`` is a
    uniformly random injection into the controls (random order) and ``beta``
    a uniformly random increasing injection into the experimental arm.
    """
    if not 0 < q <= 1:
        raise DomainError(f"q must lie in (0, 1], got {q}")
    k = min(m, n)
    ell = 0
    while ell == 0:
        ell = int(gen.binomial(k, q))
    alpha = gen.choice(m, size=ell, replace=False)
    beta = np.sort(gen.choice(n, size=ell, replace=False))
    return alpha.astype(np.intp), beta.astype(np.intp)


def truncated_binomial_moments(k: int, q: float) -> tuple[float, float]:
    """Mean and variance of Binomial(k, q) conditioned on being positive."""
    p0 = (1.0 - q) ** k
    mean = k * q / (1.0 - p0)
    second = (k * q * (1 - q) + (k * q) ** 2) / (1.0 - p0)
    return mean, second - mean**2


def _pair_ipb(clf: Classifier, X: np.ndarray) -> np.ndarray:
    p = clf.predict_proba(np.hstack([X, X]))
    return p[:, 2] - p[:, 0]


@dataclass
class BaggedEnsemble:
    learners: list[Classifier]
    bag_sizes: list[int]

    def per_bag_ipb(self, X: np.ndarray) -> np.ndarray:
        return np.vstack([_pair_ipb(c, X) for c in self.learners])

    def ipb(self, X: np.ndarray) -> np.ndarray:
        total = np.zeros(X.shape[0], dtype=np.float64)
        for c in self.learners:
            total += _pair_ipb(c, X)
        return total / len(self.learners)


@dataclass
class ItrModel:
    """A fitted IPB estimator with its score spec and covariate encoding."""

    variant: Variant
    spec: ScoreSpec
    encoding: CovariateEncoding | None
    estimator: Any
    n_covariates: int
    info: dict[str, Any] | None = None

    def ipb_encoded(self, X: np.ndarray) -> np.ndarray:
        """IPB estimates for rows of an encoded covariate matrix."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_covariates:
            raise ShapeError(f"expected {self.n_covariates} encoded covariates, got {X.shape[1]}")
        if self.variant == "knn":
            out = self.estimator.predict_ipb(X)
        elif self.variant == "full_pairs":
            out = _pair_ipb(self.estimator, X)
        else:
            out = self.estimator.ipb(X)
        return np.clip(out, -1.0, 1.0)

    def rule_encoded(self, X: np.ndarray) -> np.ndarray:
        return (self.ipb_encoded(X) > 0).astype(np.int8)

    def encode(self, x_raw: Any) -> np.ndarray:
        if self.encoding is None:
            return np.atleast_2d(np.asarray(x_raw, dtype=np.float64))
        X, _ = self.encoding.transform(x_raw)
        return X

    def ipb(self, x_raw: Any) -> np.ndarray:
        """Encode raw covariate rows and estimate the IPB on the diagonal pair."""
        try:
            X = self.encode(x_raw)
        except (ValueError, TypeError) as exc:
            raise DomainError(f"cannot encode covariates: {exc}") from exc
        return self.ipb_encoded(X)

    def rule(self, x_raw: Any) -> np.ndarray:
        return (self.ipb(x_raw) > 0).astype(np.int8)

    # persistence -------------------------------------------------------

    def save(self, path: str) -> None:
        container.write(path, *self._serialize())

    def _serialize(self) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
        header: dict[str, Any] = {
            "kind": "itr_model",
            "variant": self.variant,
            "spec": self.spec.to_dict(),
            "encoding": None if self.encoding is None else self.encoding.to_dict(),
            "info": self.info or {},
            "n_covariates": self.n_covariates,
        }
        arrays: dict[str, np.ndarray] = {}
        if self.variant == "knn":
            est: KnnModel = self.estimator
            header["knn"] = asdict(est.config)
            arrays.update(control_x=est.data.control_x, control_y=est.data.control_y,
                          experimental_x=est.data.experimental_x, experimental_y=est.data.experimental_y)
        else:
            learners = [self.estimator] if self.variant == "full_pairs" else self.estimator.learners
            blocks = []
            for v, clf in enumerate(learners):
                if not isinstance(clf, RandomForest):
                    raise DomainError("only built-in forests can be saved")
                blocks.append(clf.header())
                arrays.update(clf.arrays(prefix=f"learner{v}."))
            header["learners"] = blocks
            if self.variant == "bagged":
                header["bag_sizes"] = list(self.estimator.bag_sizes)
        return header, arrays

    def to_bytes(self) -> bytes:
        return container.dumps(*self._serialize())

    @classmethod
    def load(cls, path: str) -> "ItrModel":
        header, arrays = container.read(path)
        return cls._deserialize(header, arrays)

    @classmethod
    def _deserialize(cls, header: dict[str, Any], arrays: dict[str, np.ndarray]) -> "ItrModel":
        if header.get("kind") != "itr_model":
            raise DomainError(f"file does not hold a treatment-rule model (kind={header.get('kind')!r})")
        spec = ScoreSpec.from_dict(header["spec"])
        enc = None if header["encoding"] is None else CovariateEncoding.from_dict(header["encoding"])
        variant = header["variant"]
        if variant == "knn":
            data = TrialDataset(arrays["control_x"], arrays["control_y"],
                                arrays["experimental_x"], arrays["experimental_y"], enc)
            est: Any = KnnModel(data, spec, KnnConfig(**header["knn"]))
        else:
            forests = [RandomForest.from_parts(h, arrays, prefix=f"learner{v}.")
                       for v, h in enumerate(header["learners"])]
            if variant == "full_pairs":
                est = forests[0]
            else:
                est = BaggedEnsemble(forests, list(header["bag_sizes"]))
        return cls(variant, spec, enc, est, int(header["n_covariates"]), header.get("info") or {})


# fitting ------------------------------------------------------------------


def fit_knn(data: TrialDataset, spec: ScoreSpec, config: KnnConfig | None = None) -> ItrModel:
    if config is None:
        c, e = default_neighbor_counts(data.m, data.n)
        config = KnnConfig(c, e)
    model = KnnModel(data, spec, config)
    return ItrModel("knn", spec, data.encoding, model, data.d, {"c": config.c, "e": config.e})


def fit_full_pairs(data: TrialDataset, spec: ScoreSpec, config: ForestConfig | Learner = ForestConfig(),
                   budget: int = DEFAULT_PAIR_BUDGET, seed: int = 0, threads: int | None = None) -> ItrModel:
    """Train one classifier on every cross-arm pair ``(X_i, U_j) -> sigma(Y_i, V_j)``."""
    check_pair_budget(data.m, data.n, budget)
    if data.outcome_dim != len(spec):
        raise ShapeError("outcome dimension does not match the score spec")
    sigma = score_matrix(spec, data.control_y, data.experimental_y).ravel()
    if isinstance(config, ForestConfig):
        clf: Classifier = fit_coded(config, code_pair_features(data.control_x, data.experimental_x),
                                    sigma, threads)
    else:
        feats = np.hstack([np.repeat(data.control_x, data.n, axis=0),
                           np.tile(data.experimental_x, (data.m, 1))])
        clf = config(feats, sigma, seed)
    return ItrModel("full_pairs", spec, data.encoding, clf, data.d, {"pairs": data.m * data.n})


# small forests: each bag holds only about k ** 3/4 matched pairs
BAG_BASE = ForestConfig(n_trees=10, min_leaf=5)


def _fit_bag(data: TrialDataset, spec: ScoreSpec, bag: BaggingConfig, base: ForestConfig | Learner,
             q: float, v: int) -> tuple[Classifier, int]:
    gen = rng.derive(bag.seed, "bagging.bag", v)
    alpha, beta = draw_subsample(data.m, data.n, q, gen)
    feats = np.hstack([data.control_x[alpha], data.experimental_x[beta]])
    labels = score_rows(spec, data.control_y[alpha], data.experimental_y[beta])
    learner_seed = rng.derive_int(bag.seed, "bagging.learner", v)
    if isinstance(base, ForestConfig):
        clf: Classifier = fit_forest(base.replace(seed=learner_seed), feats, labels, threads=1)
    else:
        clf = base(feats, labels, learner_seed)
    return clf, len(alpha)


def fit_bagged(data: TrialDataset, spec: ScoreSpec, bag: BaggingConfig = BaggingConfig(),
               base: ForestConfig | Learner = BAG_BASE, threads: int | None = None) -> ItrModel:
    """Average ``bag.b`` learners, each trained on one matched-pair subsample."""
    if data.outcome_dim != len(spec):
        raise ShapeError("outcome dimension does not match the score spec")
    q = bag.resolved_q(min(data.m, data.n))
    workers = rng.thread_count() if threads is None else max(1, threads)
    if workers == 1:
        fitted = [_fit_bag(data, spec, bag, base, q, v) for v in range(bag.b)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fitted = list(pool.map(lambda v: _fit_bag(data, spec, bag, base, q, v), range(bag.b)))
    ens = BaggedEnsemble([f[0] for f in fitted], [f[1] for f in fitted])
    return ItrModel("bagged", spec, data.encoding, ens, data.d, {"q": q, "b": bag.b})


def ipb(model: ItrModel, x_raw: Any) -> np.ndarray:
    return model.ipb(x_raw)


def rule(model: ItrModel, x_raw: Any) -> np.ndarray:
    return model.rule(x_raw)


def ipb_from_probabilities(p_plus: float | np.ndarray, p_minus: float | np.ndarray) -> float | np.ndarray:
    return p_plus - p_minus

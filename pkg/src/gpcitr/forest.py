"""Probabilistic multiclass classifiers over pair features.

The built-in learner is a random forest of CART trees:

* each tree is grown on a bootstrap resample (integer sample weights),
* at every node features are visited in random order until ``mtry``
  non-constant ones have been examined,
* splits maximize the decrease of Gini impurity; thresholds sit at the
  midpoint between consecutive distinct values present in the node,
* equal gains are resolved toward the lower feature index, then the lower
  threshold,
* leaves store weighted class proportions and the forest averages them.

Tree ``t`` draws all of its randomness from the stream
``rng.derive(seed, "forest.tree", t)``, so fitted forests are identical for
any number of worker threads.

Any object with a ``predict_proba(X) -> (rows, 3)`` method whose columns are
the probabilities of scores ``-1, 0, +1`` can stand in for the forest; see
:class:`Classifier` and :data:`Learner`.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Protocol

import numpy as np
from numba import njit

from . import container, rng
from .errors import DomainError, ShapeError

CLASSES: tuple[int, int, int] = (-1, 0, 1)


class Classifier(Protocol):
    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Rows of ``(p_minus, p_zero, p_plus)``."""


Learner = Callable[[np.ndarray, np.ndarray, int], Classifier]
"""``learner(features, labels, seed)`` returns a fitted :class:`Classifier`."""


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 200
    mtry: int | None = None
    min_leaf: int = 5
    max_depth: int | None = None
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise DomainError("n_trees must be at least 1")
        if self.mtry is not None and self.mtry < 1:
            raise DomainError("mtry must be positive")
        if self.min_leaf < 1:
            raise DomainError("min_leaf must be positive")
        if self.max_depth is not None and self.max_depth < 1:
            raise DomainError("max_depth must be positive")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")

    def resolved_mtry(self, n_features: int) -> int:
        if self.mtry is None:
            return max(1, math.ceil(math.sqrt(n_features)))
        if self.mtry > n_features:
            raise DomainError(f"mtry={self.mtry} exceeds the {n_features} available features")
        return self.mtry

    def replace(self, **changes: Any) -> "ForestConfig":
        return ForestConfig(**{**asdict(self), **changes})


@dataclass(frozen=True)
class ClassProbabilities:
    p_minus: float
    p_zero: float
    p_plus: float

    def __post_init__(self) -> None:
        ps = (self.p_minus, self.p_zero, self.p_plus)
        if any(p < -1e-12 or p > 1 + 1e-12 for p in ps) or abs(sum(ps) - 1.0) > 1e-9:
            raise DomainError(f"not a probability vector: {ps}")


# --------------------------------------------------------------------------
# compiled kernels
# --------------------------------------------------------------------------


@njit(cache=True)
def _splitmix(state):
    state[0] = state[0] + np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _below(state, k):
    return np.int64(_splitmix(state) % np.uint64(k))


@njit(cache=True)
def _scan_feature(codes_f, uniq_f, nu, idx, start, end, y, w, cnt, tmp,
                  t0, t1, t2, total, min_leaf):
    """Best split on one feature: (proxy, split_code, threshold, distinct_count)."""
    n_node = end - start
    best = -1.0
    best_code = -1
    best_next = -1
    distinct = 0
    lc0 = 0
    lc1 = 0
    lc2 = 0
    if nu <= 4 * n_node:
        for c in range(nu):
            cnt[c, 0] = 0
            cnt[c, 1] = 0
            cnt[c, 2] = 0
        for p in range(start, end):
            s = idx[p]
            cnt[codes_f[s], y[s]] += w[s]
        prev = -1
        for c in range(nu):
            if cnt[c, 0] + cnt[c, 1] + cnt[c, 2] == 0:
                continue
            distinct += 1
            if prev >= 0:
                lw = lc0 + lc1 + lc2
                rw = total - lw
                if lw >= min_leaf and rw >= min_leaf:
                    r0 = t0 - lc0
                    r1 = t1 - lc1
                    r2 = t2 - lc2
                    proxy = (lc0 * lc0 + lc1 * lc1 + lc2 * lc2) / lw + (r0 * r0 + r1 * r1 + r2 * r2) / rw
                    if proxy > best:
                        best = proxy
                        best_code = prev
                        best_next = c
            lc0 += cnt[c, 0]
            lc1 += cnt[c, 1]
            lc2 += cnt[c, 2]
            prev = c
    else:
        for k in range(n_node):
            tmp[k] = codes_f[idx[start + k]]
        order = np.argsort(tmp[:n_node])
        k = 0
        prev = -1
        while k < n_node:
            c = tmp[order[k]]
            g0 = 0
            g1 = 0
            g2 = 0
            while k < n_node and tmp[order[k]] == c:
                s = idx[start + order[k]]
                if y[s] == 0:
                    g0 += w[s]
                elif y[s] == 1:
                    g1 += w[s]
                else:
                    g2 += w[s]
                k += 1
            distinct += 1
            if prev >= 0:
                lw = lc0 + lc1 + lc2
                rw = total - lw
                if lw >= min_leaf and rw >= min_leaf:
                    r0 = t0 - lc0
                    r1 = t1 - lc1
                    r2 = t2 - lc2
                    proxy = (lc0 * lc0 + lc1 * lc1 + lc2 * lc2) / lw + (r0 * r0 + r1 * r1 + r2 * r2) / rw
                    if proxy > best:
                        best = proxy
                        best_code = prev
                        best_next = c
            lc0 += g0
            lc1 += g1
            lc2 += g2
            prev = c
    thr = 0.0
    if best_code >= 0:
        a = uniq_f[best_code]
        b = uniq_f[best_next]
        thr = (a + b) * 0.5
        if thr >= b:
            thr = a
    return best, best_code, thr, distinct


@njit(cache=True, nogil=True)
def _grow_tree(codes, uniq, nuniq, y, w, mtry, min_leaf, max_depth, state):
    n_features, n_samples = codes.shape
    n_act = 0
    for s in range(n_samples):
        if w[s] > 0:
            n_act += 1
    idx = np.empty(n_act, np.int64)
    k = 0
    for s in range(n_samples):
        if w[s] > 0:
            idx[k] = s
            k += 1
    total_w = 0
    for s in range(n_samples):
        total_w += w[s]
    # every leaf except a lone root carries at least min_leaf weight
    cap = 2 * max(1, min(n_act, total_w // min_leaf)) + 1
    feat = np.empty(cap, np.int32)
    thr = np.empty(cap, np.float64)
    left = np.empty(cap, np.int32)
    right = np.empty(cap, np.int32)
    val = np.empty((cap, 3), np.float64)
    cnt = np.zeros((uniq.shape[1], 3), np.int64)
    tmp = np.empty(n_act, np.int64)
    perm = np.arange(n_features)
    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n_act
    st_depth[0] = 0
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        t0 = 0
        t1 = 0
        t2 = 0
        for p in range(start, end):
            s = idx[p]
            if y[s] == 0:
                t0 += w[s]
            elif y[s] == 1:
                t1 += w[s]
            else:
                t2 += w[s]
        total = t0 + t1 + t2
        feat[node] = -1
        thr[node] = 0.0
        left[node] = -1
        right[node] = -1
        val[node, 0] = t0 / total
        val[node, 1] = t1 / total
        val[node, 2] = t2 / total
        if max_depth >= 0 and depth >= max_depth:
            continue
        if total < 2 * min_leaf:
            continue
        if (t0 > 0) + (t1 > 0) + (t2 > 0) <= 1:
            continue
        floor = (t0 * t0 + t1 * t1 + t2 * t2) / total
        floor = floor + floor * 1e-12
        best = -1.0
        best_f = -1
        best_code = -1
        best_thr = 0.0
        visited = 0
        for t in range(n_features):
            j = t + _below(state, n_features - t)
            f = perm[j]
            perm[j] = perm[t]
            perm[t] = f
            if nuniq[f] <= 1:
                continue
            proxy, code, th, distinct = _scan_feature(
                codes[f], uniq[f], nuniq[f], idx, start, end, y, w, cnt, tmp,
                t0, t1, t2, total, min_leaf)
            if distinct <= 1:
                continue
            visited += 1
            if code >= 0 and proxy > floor:
                if proxy > best or (proxy == best and f < best_f):
                    best = proxy
                    best_f = f
                    best_code = code
                    best_thr = th
            if visited >= mtry:
                break
        if best_f < 0:
            continue
        # stable partition keeps idx ascending inside every node, so the
        # histogram passes read feature rows in memory order
        row = codes[best_f]
        i = start
        nr = 0
        for p in range(start, end):
            s = idx[p]
            if row[s] <= best_code:
                idx[i] = s
                i += 1
            else:
                tmp[nr] = s
                nr += 1
        for q in range(nr):
            idx[i + q] = tmp[q]
        feat[node] = best_f
        thr[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[sp] = n_nodes + 1
        st_start[sp] = i
        st_end[sp] = end
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = n_nodes
        st_start[sp] = start
        st_end[sp] = i
        st_depth[sp] = depth + 1
        sp += 1
        n_nodes += 2
    return (feat[:n_nodes].copy(), thr[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), val[:n_nodes].copy())


@njit(cache=True, nogil=True)
def _predict_trees(X, feat, thr, left, right, val, offsets, out):
    n_trees = offsets.shape[0] - 1
    for r in range(X.shape[0]):
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while feat[base + node] >= 0:
                if X[r, feat[base + node]] <= thr[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            a0 += val[base + node, 0]
            a1 += val[base + node, 1]
            a2 += val[base + node, 2]
        out[r, 0] = a0 / n_trees
        out[r, 1] = a1 / n_trees
        out[r, 2] = a2 / n_trees


# --------------------------------------------------------------------------
# python layer
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CodedFeatures:
    """Features replaced by the rank of their value among the distinct values."""

    codes: np.ndarray  # (n_features, n_samples) int32
    uniq: np.ndarray  # (n_features, max_unique) float64, padded
    nuniq: np.ndarray  # (n_features,) int64

    @property
    def n_features(self) -> int:
        return self.codes.shape[0]

    @property
    def n_samples(self) -> int:
        return self.codes.shape[1]


def _unique_columns(X: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    uniqs, invs = [], []
    for f in range(X.shape[1]):
        u, inv = np.unique(X[:, f], return_inverse=True)
        uniqs.append(u)
        invs.append(inv.astype(np.int32))
    return uniqs, invs


def _pack(uniqs: list[np.ndarray], code_rows: list[np.ndarray]) -> CodedFeatures:
    width = max((len(u) for u in uniqs), default=1)
    uniq = np.zeros((len(uniqs), max(width, 1)), dtype=np.float64)
    for f, u in enumerate(uniqs):
        uniq[f, : len(u)] = u
    codes = np.ascontiguousarray(np.vstack(code_rows)) if code_rows else np.zeros((0, 0), np.int32)
    nuniq = np.array([len(u) for u in uniqs], dtype=np.int64)
    return CodedFeatures(codes, uniq, nuniq)


def code_features(X: np.ndarray) -> CodedFeatures:
    X = np.asarray(X, dtype=np.float64)
    uniqs, invs = _unique_columns(X)
    return _pack(uniqs, invs)


def code_pair_features(control_x: np.ndarray, experimental_x: np.ndarray) -> CodedFeatures:
    """Codes of ``concat(X_i, U_j)`` for all pairs, ``i`` outer, without building the matrix."""
    m, n = control_x.shape[0], experimental_x.shape[0]
    ux, ix = _unique_columns(np.asarray(control_x, dtype=np.float64))
    uu, iu = _unique_columns(np.asarray(experimental_x, dtype=np.float64))
    rows = [np.repeat(c, n) for c in ix] + [np.tile(c, m) for c in iu]
    return _pack(ux + uu, rows)


def _label_index(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels).ravel()
    if not np.all(np.isin(labels, CLASSES)):
        raise DomainError("labels must be in {-1, 0, +1}")
    return (labels.astype(np.int8) + 1).astype(np.int8)


@dataclass
class RandomForest:
    """Fitted forest; node arrays of all trees are concatenated."""

    config: ForestConfig
    n_features: int
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    tree_offsets: np.ndarray
    label_counts: tuple[int, int, int] = (0, 0, 0)
    classes: tuple[int, int, int] = field(default=CLASSES)

    @property
    def n_trees(self) -> int:
        return self.tree_offsets.shape[0] - 1

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(f"expected {self.n_features} features, got shape {X.shape}")
        out = np.empty((X.shape[0], 3), dtype=np.float64)
        if X.shape[0]:
            _predict_trees(np.ascontiguousarray(X), self.feature, self.threshold, self.left,
                           self.right, self.value, self.tree_offsets, out)
        return out

    def predict_one(self, x: np.ndarray) -> ClassProbabilities:
        p = self.predict_proba(np.asarray(x, dtype=np.float64)[None, :])[0]
        return ClassProbabilities(*map(float, p))

    def header(self) -> dict[str, Any]:
        return {
            "config": asdict(self.config),
            "n_features": self.n_features,
            "label_counts": list(self.label_counts),
            "classes": list(self.classes),
        }

    def arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {
            prefix + "feature": self.feature,
            prefix + "threshold": self.threshold,
            prefix + "left": self.left,
            prefix + "right": self.right,
            prefix + "value": self.value,
            prefix + "tree_offsets": self.tree_offsets,
        }

    @classmethod
    def from_parts(cls, header: dict[str, Any], arrays: dict[str, np.ndarray],
                   prefix: str = "") -> "RandomForest":
        return cls(
            config=ForestConfig(**header["config"]),
            n_features=int(header["n_features"]),
            feature=arrays[prefix + "feature"].astype(np.int32),
            threshold=arrays[prefix + "threshold"].astype(np.float64),
            left=arrays[prefix + "left"].astype(np.int32),
            right=arrays[prefix + "right"].astype(np.int32),
            value=arrays[prefix + "value"].astype(np.float64).reshape(-1, 3),
            tree_offsets=arrays[prefix + "tree_offsets"].astype(np.int64),
            label_counts=tuple(header.get("label_counts", (0, 0, 0))),
        )

    def save(self, path: str) -> None:
        container.write(path, {"kind": "forest", **self.header()}, self.arrays())

    @classmethod
    def load(cls, path: str) -> "RandomForest":
        header, arrays = container.read(path)
        if header.get("kind") != "forest":
            raise DomainError(f"{path} does not hold a forest (kind={header.get('kind')!r})")
        return cls.from_parts(header, arrays)


def _tree_job(config: ForestConfig, coded: CodedFeatures, y: np.ndarray, mtry: int, t: int):
    g = rng.derive(config.seed, "forest.tree", t)
    n = coded.n_samples
    if config.bootstrap:
        w = np.bincount(g.integers(0, n, size=n), minlength=n).astype(np.int64)
    else:
        w = np.ones(n, dtype=np.int64)
    state = np.array([g.integers(0, 2**63, dtype=np.int64)], dtype=np.uint64)
    max_depth = -1 if config.max_depth is None else config.max_depth
    return _grow_tree(coded.codes, coded.uniq, coded.nuniq, y, w, mtry, config.min_leaf, max_depth, state)


def fit_coded(config: ForestConfig, coded: CodedFeatures, labels: np.ndarray,
              threads: int | None = None) -> RandomForest:
    """Grow a forest on pre-coded features; ``labels`` in ``{-1, 0, +1}``."""
    y = _label_index(labels)
    if coded.n_samples < 1 or y.shape[0] < 1:
        raise DomainError("cannot fit a forest on an empty sample")
    if y.shape[0] != coded.n_samples:
        raise ShapeError(f"{coded.n_samples} feature rows but {y.shape[0]} labels")
    mtry = config.resolved_mtry(coded.n_features)
    workers = rng.thread_count() if threads is None else max(1, threads)
    jobs = range(config.n_trees)
    if workers == 1 or config.n_trees == 1:
        trees = [_tree_job(config, coded, y, mtry, t) for t in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(lambda t: _tree_job(config, coded, y, mtry, t), jobs))
    sizes = np.array([t[0].shape[0] for t in trees], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    counts = np.bincount(y, minlength=3)
    return RandomForest(
        config=config,
        n_features=coded.n_features,
        feature=np.concatenate([t[0] for t in trees]),
        threshold=np.concatenate([t[1] for t in trees]),
        left=np.concatenate([t[2] for t in trees]),
        right=np.concatenate([t[3] for t in trees]),
        value=np.concatenate([t[4] for t in trees]),
        tree_offsets=offsets,
        label_counts=tuple(int(c) for c in counts),
    )


def fit_forest(config: ForestConfig, features: np.ndarray, labels: np.ndarray,
               threads: int | None = None) -> RandomForest:
    """Fit on an explicit ``(samples, features)`` matrix."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"features must be 2D, got shape {X.shape}")
    if X.shape[0] < 1:
        raise DomainError("cannot fit a forest on an empty sample")
    if not np.all(np.isfinite(X)):
        raise DomainError("features contain non-finite values")
    return fit_coded(config, code_features(X), labels, threads)


def predict_proba(model: Classifier, feature: np.ndarray) -> np.ndarray:
    return model.predict_proba(feature)


@dataclass(frozen=True)
class ForestLearner:
    """:data:`Learner` adapter around :func:`fit_forest`; the seed overrides ``config.seed``."""

    config: ForestConfig = ForestConfig()

    def __call__(self, features: np.ndarray, labels: np.ndarray, seed: int) -> RandomForest:
        return fit_forest(self.config.replace(seed=seed), features, labels)

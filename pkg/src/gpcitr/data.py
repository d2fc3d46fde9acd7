"""Two-arm trial data: CSV ingestion, covariate encoding, pair records, net benefit."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Iterator, Literal, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import DomainError, IngestionError, ResourceError, ShapeError
from .scoring import ScoreSpec, score_matrix, validate_outcomes

DEFAULT_PAIR_BUDGET = 50_000_000

MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none", "."})


class UnseenCategoryWarning(UserWarning):
    """A categorical value was not observed when the encoding was built."""


@dataclass(frozen=True)
class ColumnEncoding:
    name: str
    kind: Literal["numeric", "categorical"] = "numeric"
    categories: tuple[str, ...] = ()
    mean: float | None = None
    scale: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("numeric", "categorical"):
            raise DomainError(f"unknown column kind {self.kind!r}")
        if self.kind == "categorical" and not self.categories:
            raise DomainError(f"categorical column {self.name!r} needs at least one category")
        if self.scale is not None and not self.scale > 0:
            raise DomainError(f"standardization scale for {self.name!r} must be positive")

    @property
    def width(self) -> int:
        return 1 if self.kind == "numeric" else len(self.categories) - 1

    @property
    def feature_names(self) -> list[str]:
        if self.kind == "numeric":
            return [self.name]
        return [f"{self.name}={c}" for c in self.categories[1:]]

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.kind == "categorical":
            d["categories"] = list(self.categories)
        if self.mean is not None:
            d["mean"] = self.mean
            d["scale"] = self.scale
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ColumnEncoding":
        return cls(
            name=d["name"],
            kind=d.get("kind", "numeric"),
            categories=tuple(d.get("categories", ())),
            mean=d.get("mean"),
            scale=d.get("scale"),
        )


@dataclass(frozen=True)
class CovariateEncoding:
    """Maps raw covariate rows to the numeric design matrix.

    Numeric columns pass through, optionally z-scored with stored pooled
    mean and standard deviation. Categorical columns become one indicator per
    category except the first (reference) category. Values never seen while
    fitting the encoding map to the reference block and raise
    :class:`UnseenCategoryWarning`.
    """

    columns: tuple[ColumnEncoding, ...]

    def __init__(self, columns: Sequence[ColumnEncoding]) -> None:
        object.__setattr__(self, "columns", tuple(columns))

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def dimension(self) -> int:
        return sum(c.width for c in self.columns)

    @property
    def feature_names(self) -> list[str]:
        return [n for c in self.columns for n in c.feature_names]

    @property
    def all_numeric(self) -> bool:
        return all(c.kind == "numeric" for c in self.columns)

    @classmethod
    def fit(
        cls,
        names: Sequence[str],
        raw: Sequence[Sequence[Any]],
        categorical: Sequence[str] = (),
        standardize: bool = False,
    ) -> "CovariateEncoding":
        """Build an encoding from raw column values (one sequence per column)."""
        cols = []
        for name, values in zip(names, raw):
            if name in categorical:
                cats = tuple(sorted({str(v) for v in values}))
                cols.append(ColumnEncoding(name, "categorical", cats))
                continue
            arr = np.asarray(values, dtype=np.float64)
            mean = scale = None
            if standardize and arr.size:
                sd = float(arr.std())
                if sd > 0:
                    mean, scale = float(arr.mean()), sd
            cols.append(ColumnEncoding(name, "numeric", mean=mean, scale=scale))
        return cls(cols)

    @classmethod
    def numeric(cls, names: Sequence[str], X: np.ndarray | None = None,
                standardize: bool = False) -> "CovariateEncoding":
        """All-numeric encoding, standardized from ``X`` when requested."""
        if X is None or not standardize:
            return cls([ColumnEncoding(n) for n in names])
        X = np.asarray(X, dtype=np.float64)
        return cls.fit(names, [X[:, k] for k in range(X.shape[1])], standardize=True)

    def transform(self, rows: Any) -> tuple[np.ndarray, int]:
        """Encode raw rows; returns the design matrix and the unseen-category count.

        ``rows`` is either a 2D numeric array (only for all-numeric encodings)
        or a sequence of mappings from column name to raw value.
        """
        if isinstance(rows, np.ndarray) or (
            isinstance(rows, Sequence) and rows and not isinstance(rows[0], Mapping)
        ):
            if not self.all_numeric:
                raise DomainError("array input requires an all-numeric encoding; pass mappings")
            X = np.asarray(rows, dtype=np.float64)
            if X.ndim == 1:
                X = X[None, :]
            if X.shape[1] != len(self.columns):
                raise ShapeError(f"expected {len(self.columns)} covariates, got {X.shape[1]}")
            return self._scale(X), 0
        out = np.zeros((len(rows), self.dimension), dtype=np.float64)
        unseen = 0
        for r, row in enumerate(rows):
            pos = 0
            for col in self.columns:
                if col.name not in row:
                    raise DomainError(f"row {r}: missing covariate {col.name!r}")
                value = row[col.name]
                if col.kind == "numeric":
                    try:
                        x = float(value)
                    except (TypeError, ValueError):
                        raise DomainError(f"row {r}: cannot parse {value!r} for {col.name!r}") from None
                    if not math.isfinite(x):
                        raise DomainError(f"row {r}: non-finite value for {col.name!r}")
                    if col.scale is not None:
                        x = (x - col.mean) / col.scale
                    out[r, pos] = x
                else:
                    key = str(value)
                    if key in col.categories:
                        k = col.categories.index(key)
                        if k > 0:
                            out[r, pos + k - 1] = 1.0
                    else:
                        unseen += 1
                pos += col.width
        if unseen:
            warnings.warn(
                f"{unseen} unseen categorical value(s) mapped to the reference category",
                UnseenCategoryWarning,
                stacklevel=2,
            )
        return out, unseen

    def _scale(self, X: np.ndarray) -> np.ndarray:
        X = X.copy()
        for k, col in enumerate(self.columns):
            if col.scale is not None:
                X[:, k] = (X[:, k] - col.mean) / col.scale
        return X

    def to_dict(self) -> dict[str, Any]:
        return {"columns": [c.to_dict() for c in self.columns]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CovariateEncoding":
        return cls([ColumnEncoding.from_dict(c) for c in d["columns"]])


@dataclass(frozen=True)
class TrialDataset:
    """Control arm ``(X_i, Y_i)``, ``i < m`` and experimental arm ``(U_j, V_j)``, ``j < n``.

    Covariates are already encoded. Outcome columns follow the priority order
    of the score spec used with the data.
    """

    control_x: np.ndarray
    control_y: np.ndarray
    experimental_x: np.ndarray
    experimental_y: np.ndarray
    encoding: CovariateEncoding | None = None
    rejected_rows: tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        arrays = {}
        for name in ("control_x", "control_y", "experimental_x", "experimental_y"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.ndim == 1:
                a = a[:, None]
            if a.ndim != 2:
                raise ShapeError(f"{name} must be 2-dimensional, got shape {a.shape}")
            if not np.all(np.isfinite(a)):
                raise DomainError(f"{name} contains non-finite values")
            a.setflags(write=False)
            arrays[name] = a
            object.__setattr__(self, name, a)
        if arrays["control_x"].shape[0] < 1:
            raise DomainError("control arm empty")
        if arrays["experimental_x"].shape[0] < 1:
            raise DomainError("experimental arm empty")
        if arrays["control_x"].shape[0] != arrays["control_y"].shape[0]:
            raise ShapeError("control covariate and outcome row counts differ")
        if arrays["experimental_x"].shape[0] != arrays["experimental_y"].shape[0]:
            raise ShapeError("experimental covariate and outcome row counts differ")
        if arrays["control_x"].shape[1] != arrays["experimental_x"].shape[1]:
            raise ShapeError("arms have different covariate dimensions")
        if arrays["control_y"].shape[1] != arrays["experimental_y"].shape[1]:
            raise ShapeError("arms have different outcome dimensions")
        if self.encoding is not None and self.encoding.dimension != arrays["control_x"].shape[1]:
            raise ShapeError("encoding dimension does not match covariates")

    @property
    def m(self) -> int:
        return self.control_x.shape[0]

    @property
    def n(self) -> int:
        return self.experimental_x.shape[0]

    @property
    def d(self) -> int:
        return self.control_x.shape[1]

    @property
    def outcome_dim(self) -> int:
        return self.control_y.shape[1]

    @classmethod
    def from_arrays(cls, X: np.ndarray, Y: np.ndarray, arm: np.ndarray,
                    encoding: CovariateEncoding | None = None) -> "TrialDataset":
        """Split pooled arrays by ``arm`` (0 control, 1 experimental)."""
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        arm = np.asarray(arm)
        if X.ndim == 1:
            X = X[:, None]
        if Y.ndim == 1:
            Y = Y[:, None]
        if not np.all((arm == 0) | (arm == 1)):
            raise DomainError("arm values must be 0 or 1")
        c, e = arm == 0, arm == 1
        return cls(X[c], Y[c], X[e], Y[e], encoding)

    def covariates(self) -> np.ndarray:
        """Pooled covariates, control rows first."""
        return np.vstack([self.control_x, self.experimental_x])

    def arms(self) -> np.ndarray:
        return np.concatenate([np.zeros(self.m, dtype=np.int8), np.ones(self.n, dtype=np.int8)])

    def swapped(self) -> "TrialDataset":
        return TrialDataset(self.experimental_x, self.experimental_y,
                            self.control_x, self.control_y, self.encoding)

    def subset(self, control_idx: Sequence[int], experimental_idx: Sequence[int]) -> "TrialDataset":
        ci = np.asarray(control_idx, dtype=np.intp)
        ei = np.asarray(experimental_idx, dtype=np.intp)
        return TrialDataset(self.control_x[ci], self.control_y[ci],
                            self.experimental_x[ei], self.experimental_y[ei], self.encoding)


@dataclass(frozen=True)
class DataSchema:
    """Column roles of a trial CSV."""

    arm: str
    outcomes: tuple[str, ...]
    covariates: tuple[str, ...]
    categorical: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "categorical", tuple(self.categorical))
        if not self.outcomes:
            raise DomainError("schema needs at least one outcome column")
        stray = set(self.categorical) - set(self.covariates)
        if stray:
            raise DomainError(f"categorical columns not listed as covariates: {sorted(stray)}")


def _is_missing(cell: str | None) -> bool:
    return cell is None or cell.strip().lower() in MISSING_TOKENS


def _parse_float(cell: str, line: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise IngestionError(f"line {line}: cannot parse {cell!r} in column {column!r}") from None
    if not math.isfinite(value):
        raise IngestionError(f"line {line}: non-finite value in column {column!r}")
    return value


def read_rows(path: str) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise IngestionError(f"{path}: missing header row")
        header = [h.strip() for h in reader.fieldnames]
        reader.fieldnames = header
        rows = list(reader)
    return header, rows


def ingest_csv(path: str, schema: DataSchema, standardize: bool = False) -> TrialDataset:
    """Read a two-arm trial CSV.

    Rows with a missing outcome or covariate are dropped; their line numbers
    are kept in ``rejected_rows`` and reported through a warning.
    """
    header, rows = read_rows(path)
    needed = (schema.arm, *schema.outcomes, *schema.covariates)
    unknown = [c for c in needed if c not in header]
    if unknown:
        raise IngestionError(f"{path}: unknown column(s) {unknown}; header is {header}")

    arms: list[int] = []
    outcomes: list[list[float]] = []
    raw_cov: list[dict[str, str]] = []
    rejected: list[int] = []
    for offset, row in enumerate(rows):
        line = offset + 2
        if any(_is_missing(row.get(c)) for c in needed):
            rejected.append(line)
            continue
        a = _parse_float(row[schema.arm], line, schema.arm)
        if a not in (0.0, 1.0):
            raise IngestionError(f"line {line}: arm value {row[schema.arm]!r} not in {{0, 1}}")
        arms.append(int(a))
        outcomes.append([_parse_float(row[c], line, c) for c in schema.outcomes])
        cov = {}
        for c in schema.covariates:
            cell = row[c].strip()
            if c not in schema.categorical:
                _parse_float(cell, line, c)
            cov[c] = cell
        raw_cov.append(cov)
    if rejected:
        warnings.warn(f"{path}: rejected {len(rejected)} row(s) with missing values at lines {rejected}",
                      stacklevel=2)
    arm_arr = np.asarray(arms, dtype=np.int8)
    if not np.any(arm_arr == 0):
        raise IngestionError(f"{path}: control arm empty")
    if not np.any(arm_arr == 1):
        raise IngestionError(f"{path}: experimental arm empty")

    columns = [[r[c] if c in schema.categorical else float(r[c]) for r in raw_cov]
               for c in schema.covariates]
    encoding = CovariateEncoding.fit(schema.covariates, columns, schema.categorical, standardize)
    X, _ = encoding.transform(raw_cov) if raw_cov else (np.zeros((0, encoding.dimension)), 0)
    Y = np.asarray(outcomes, dtype=np.float64)
    data = TrialDataset.from_arrays(X, Y, arm_arr, encoding)
    return TrialDataset(data.control_x, data.control_y, data.experimental_x, data.experimental_y,
                        encoding, tuple(rejected))


class PairRecord(NamedTuple):
    x: np.ndarray
    u: np.ndarray
    s: int


@dataclass(frozen=True)
class PairSet:
    """All ``m * n`` cross-arm pairs, ``i`` outer and ``j`` inner.

    Stores indices and scores; covariates are gathered on demand so the
    ``(m * n, 2d)`` feature matrix exists only when asked for.
    """

    data: TrialDataset
    control_index: np.ndarray
    experimental_index: np.ndarray
    sigma: np.ndarray

    def __len__(self) -> int:
        return self.sigma.shape[0]

    def __iter__(self) -> Iterator[PairRecord]:
        for i, j, s in zip(self.control_index, self.experimental_index, self.sigma):
            yield PairRecord(self.data.control_x[i], self.data.experimental_x[j], int(s))

    def features(self) -> np.ndarray:
        return np.hstack([self.data.control_x[self.control_index],
                          self.data.experimental_x[self.experimental_index]])

    def to_csv(self, path: str) -> None:
        d = self.data.d
        header = [f"x_{k + 1}" for k in range(d)] + [f"u_{k + 1}" for k in range(d)] + ["sigma"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for rec in self:
                w.writerow([repr(float(v)) for v in rec.x] + [repr(float(v)) for v in rec.u] + [rec.s])


def check_pair_budget(m: int, n: int, budget: int = DEFAULT_PAIR_BUDGET) -> None:
    if m * n > budget:
        raise ResourceError(
            f"{m} x {n} = {m * n} pairs exceeds the pair budget of {budget}; "
            "use the bagged pipeline or raise the budget"
        )


def build_pairs(data: TrialDataset, spec: ScoreSpec, budget: int = DEFAULT_PAIR_BUDGET) -> PairSet:
    """Every ``(X_i, U_j, sigma(Y_i, V_j))`` triple of the trial."""
    if data.outcome_dim != len(spec):
        raise ShapeError(f"data has {data.outcome_dim} outcomes but the score specification has {len(spec)} levels")
    check_pair_budget(data.m, data.n, budget)
    sigma = score_matrix(spec, data.control_y, data.experimental_y).ravel()
    ci = np.repeat(np.arange(data.m, dtype=np.intp), data.n)
    ej = np.tile(np.arange(data.n, dtype=np.intp), data.m)
    return PairSet(data, ci, ej, sigma)


def net_benefit(data: TrialDataset, spec: ScoreSpec) -> float:
    """Mean pairwise score over all ``m * n`` cross-arm pairs."""
    validate_outcomes(spec, data.control_y)
    S = score_matrix(spec, data.control_y, data.experimental_y)
    return int(S.sum(dtype=np.int64)) / (data.m * data.n)

"""Command-line interface.

Subcommands: ``simulate``, ``fit``, ``predict``, ``evaluate``, ``netbenefit``
and ``benchmark``. Exit codes: 0 success, 2 usage, 3 invalid input, 4 runtime
failure. Every command is deterministic given ``--seed``; the worker count
(``GPCITR_NUM_THREADS``) never changes the output.

Score specs and column roles live in an INI file::

    [schema]
    arm = arm
    outcomes = y1, y2
    covariates = x1, x2, sex
    categorical = sex
    standardize = false

    [level.1]
    kind = binary

    [level.2]
    kind = continuous
    direction = higher_is_better
    threshold = 3

    [fit]
    method = forest
    n_trees = 100

Flags given on the command line override the ``[fit]`` section.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import sys
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__, rng
from .data import (
    DEFAULT_PAIR_BUDGET,
    DataSchema,
    TrialDataset,
    check_pair_budget,
    ingest_csv,
    net_benefit,
    read_rows,
)
from .errors import DomainError, GpcError, IngestionError, ResourceError, ShapeError
from .evaluation import (
    R0,
    R1,
    RuleSpec,
    bootstrap_se,
    conditional_aipb_se,
    crossfit_ipb,
    fold_assignment,
    oracle_report,
    write_calibration_csv,
)
from .forest import ForestConfig, code_pair_features, fit_coded
from .itr import BAG_BASE, BaggingConfig, ItrModel, fit_bagged, fit_full_pairs, fit_knn
from .knn import METRICS as KNN_METRICS, KnnConfig, default_neighbor_counts
from .scoring import PriorityLevel, ScoreSpec, score_matrix
from . import simulation

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVALID = 3
EXIT_RUNTIME = 4


class ConfigError(DomainError):
    """Malformed or inconsistent configuration."""


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

SCHEMA_KEYS = ("arm", "outcomes", "covariates", "categorical", "standardize")
LEVEL_KEYS = ("kind", "direction", "threshold")
FIT_KEYS: dict[str, Callable[[str], Any]] = {
    "method": str,
    "seed": int,
    "n_trees": int,
    "mtry": int,
    "min_leaf": int,
    "max_depth": int,
    "bags": int,
    "q": float,
    "knn_c": int,
    "knn_e": int,
    "metric": str,
    "pair_budget": int,
}
METHODS = ("knn", "forest", "bagged")


def _split_list(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.split(",") if v.strip())


def _parse_bool(value: str, key: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


@dataclass
class RunConfig:
    """Parsed configuration file."""

    schema: DataSchema | None = None
    spec: ScoreSpec | None = None
    standardize: bool = False
    fit: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keep key case so typos are caught, not folded
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        cfg = cls()
        levels: dict[int, PriorityLevel] = {}
        for section in parser.sections():
            items = dict(parser.items(section))
            if section == "schema":
                _reject_unknown(section, items, SCHEMA_KEYS)
                for key in ("arm", "outcomes", "covariates"):
                    if key not in items:
                        raise ConfigError(f"[schema] is missing {key!r}")
                cfg.schema = DataSchema(items["arm"].strip(), _split_list(items["outcomes"]),
                                        _split_list(items["covariates"]),
                                        _split_list(items.get("categorical", "")))
                cfg.standardize = _parse_bool(items.get("standardize", "false"), "standardize")
            elif section.startswith("level."):
                try:
                    index = int(section[len("level."):])
                except ValueError:
                    raise ConfigError(f"bad level section name [{section}]") from None
                _reject_unknown(section, items, LEVEL_KEYS)
                try:
                    levels[index] = PriorityLevel.from_dict(
                        {k: (float(v) if k == "threshold" else v.strip()) for k, v in items.items()})
                except (ValueError, DomainError) as exc:
                    raise ConfigError(f"[{section}]: {exc}") from exc
            elif section == "fit":
                _reject_unknown(section, items, tuple(FIT_KEYS))
                for key, value in items.items():
                    try:
                        cfg.fit[key] = FIT_KEYS[key](value.strip())
                    except ValueError:
                        raise ConfigError(f"[fit] {key}: cannot parse {value!r}") from None
            else:
                raise ConfigError(f"unknown config section [{section}]")
        if levels:
            order = sorted(levels)
            if order != list(range(1, len(order) + 1)):
                raise ConfigError(f"level sections must be numbered 1..K, got {order}")
            cfg.spec = ScoreSpec([levels[i] for i in order])
        if cfg.schema is not None and cfg.spec is not None and len(cfg.schema.outcomes) != len(cfg.spec):
            raise ConfigError(f"{len(cfg.schema.outcomes)} outcome column(s) but {len(cfg.spec)} score level(s)")
        if "method" in cfg.fit and cfg.fit["method"] not in METHODS:
            raise ConfigError(f"[fit] method must be one of {METHODS}")
        return cfg

    @classmethod
    def read(cls, path: str) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        if self.schema is not None:
            parser["schema"] = {
                "arm": self.schema.arm,
                "outcomes": ", ".join(self.schema.outcomes),
                "covariates": ", ".join(self.schema.covariates),
                "categorical": ", ".join(self.schema.categorical),
                "standardize": "true" if self.standardize else "false",
            }
        if self.spec is not None:
            for i, level in enumerate(self.spec.levels, start=1):
                parser[f"level.{i}"] = {k: repr(v) if isinstance(v, float) else str(v)
                                        for k, v in level.to_dict().items()}
        if self.fit:
            parser["fit"] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in self.fit.items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_ini())


def _reject_unknown(section: str, items: dict[str, str], allowed: Sequence[str]) -> None:
    unknown = sorted(set(items) - set(allowed))
    if unknown:
        raise ConfigError(f"[{section}] has unknown key(s) {unknown}; allowed: {list(allowed)}")


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.read(args.config) if getattr(args, "config", None) else RunConfig()
    if cfg.schema is None:
        raise ConfigError("a config file with a [schema] section is required")
    if cfg.spec is None:
        raise ConfigError("the config file needs at least one [level.N] section")
    return cfg


def _setting(args: argparse.Namespace, cfg: RunConfig, key: str, default: Any) -> Any:
    value = getattr(args, key, None)
    if value is not None:
        return value
    return cfg.fit.get(key, default)


# --------------------------------------------------------------------------
# output helpers
# --------------------------------------------------------------------------


def _write_json(path: str, payload: Any) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _ensure_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)


def _fmt(value: float | None) -> str:
    return "NA" if value is None else f"{value:.4f}"


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------


def simulation_config(scenario: int) -> RunConfig:
    schema = DataSchema("arm", ("y1", "y2"), tuple(f"x{i}" for i in range(1, simulation.N_COVARIATES)))
    return RunConfig(schema, simulation.scenario_spec(scenario))


def cmd_simulate(args: argparse.Namespace) -> int:
    params = simulation.make_params(args.scenario, args.seed)
    train = simulation.sample_population(params, args.n, rng.derive(args.seed, "simulate.train"))
    evaluation = simulation.sample_population(params, args.eval, rng.derive(args.seed, "simulate.eval"))
    _ensure_dir(args.out)
    _, train_arm = train.split_trial()
    eval_arm = (np.arange(args.eval) >= args.eval // 2).astype(np.int8)
    simulation.write_population_csv(train, train_arm, os.path.join(args.out, "train.csv"))
    simulation.write_population_csv(evaluation, eval_arm, os.path.join(args.out, "eval.csv"))
    simulation_config(args.scenario).write(os.path.join(args.out, "config.ini"))
    _write_json(os.path.join(args.out, "params.json"), params.summary())
    o = evaluation.oracle_ipb
    print(f"scenario {args.scenario}, seed {args.seed}: {args.n} training rows "
          f"({int((train_arm == 0).sum())} control / {int((train_arm == 1).sum())} experimental), "
          f"{args.eval} evaluation rows")
    print(f"covariance eigenvalues: {', '.join(f'{v:.1f}' for v in params.eigenvalues)}")
    print(f"oracle IPB on evaluation rows: mean {o.mean():.4f}, share favoring treatment {(o > 0).mean():.4f}, "
          f"AIPB(r0, ropt) {np.maximum(o, 0).mean():.4f}")
    print(f"wrote {os.path.join(args.out, 'train.csv')}, eval.csv, config.ini, params.json")
    return EXIT_OK


# --------------------------------------------------------------------------
# fit
# --------------------------------------------------------------------------


def parse_cv_grid(tokens: Sequence[str]) -> dict[str, list[int]]:
    """``["trees=100,200", "mtry=4,8"]`` -> ``{"n_trees": [100, 200], "mtry": [4, 8]}``."""
    aliases = {"trees": "n_trees", "n_trees": "n_trees", "mtry": "mtry", "min_leaf": "min_leaf"}
    grid: dict[str, list[int]] = {}
    for tok in tokens:
        key, sep, values = tok.partition("=")
        if not sep or key not in aliases:
            raise ConfigError(f"bad --cv-grid entry {tok!r}; use trees=..., mtry=... or min_leaf=...")
        try:
            grid[aliases[key]] = [int(v) for v in _split_list(values)]
        except ValueError:
            raise ConfigError(f"--cv-grid {key}: values must be integers") from None
        if not grid[aliases[key]]:
            raise ConfigError(f"--cv-grid {key}: no values")
    return grid


def _grid_cells(grid: dict[str, list[int]]) -> list[dict[str, int]]:
    cells: list[dict[str, int]] = [{}]
    for key in sorted(grid):
        cells = [{**c, key: v} for c in cells for v in grid[key]]
    return cells


def cv_log_loss(data: TrialDataset, spec: ScoreSpec, config: ForestConfig, folds: int = 5,
                seed: int = 0, threads: int | None = None) -> float:
    """Mean multiclass log-loss of a full-pairs forest over arm-stratified subject folds.

    Training pairs join training subjects of both arms; held-out pairs join
    held-out controls with held-out experimental subjects.
    """
    if data.m < folds or data.n < folds:
        raise DomainError(f"cross-validation needs at least {folds} subjects per arm")
    fc, fe = fold_assignment(data.m, data.n, folds, seed)
    losses = []
    eps = 1e-12
    for f in range(folds):
        train = data.subset(np.flatnonzero(fc != f), np.flatnonzero(fe != f))
        test = data.subset(np.flatnonzero(fc == f), np.flatnonzero(fe == f))
        sigma = score_matrix(spec, train.control_y, train.experimental_y).ravel()
        forest = fit_coded(config, code_pair_features(train.control_x, train.experimental_x), sigma, threads)
        feats = np.hstack([np.repeat(test.control_x, test.n, axis=0), np.tile(test.experimental_x, (test.m, 1))])
        labels = score_matrix(spec, test.control_y, test.experimental_y).ravel().astype(np.int64) + 1
        proba = forest.predict_proba(feats)
        losses.append(float(-np.mean(np.log(np.clip(proba[np.arange(labels.size), labels], eps, 1.0)))))
    return float(np.mean(losses))


def _forest_from(args: argparse.Namespace, cfg: RunConfig, base: ForestConfig) -> ForestConfig:
    return ForestConfig(
        n_trees=_setting(args, cfg, "n_trees", base.n_trees),
        mtry=_setting(args, cfg, "mtry", base.mtry),
        min_leaf=_setting(args, cfg, "min_leaf", base.min_leaf),
        max_depth=_setting(args, cfg, "max_depth", base.max_depth),
        seed=0,
    )


def cmd_fit(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    data = ingest_csv(args.data, cfg.schema, standardize=cfg.standardize)
    spec = cfg.spec
    method = _setting(args, cfg, "method", "forest")
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}")
    seed = int(_setting(args, cfg, "seed", 0))
    threads = rng.thread_count()
    report: dict[str, Any] = {
        "method": method,
        "seed": seed,
        "m": data.m,
        "n": data.n,
        "rejected_rows": list(data.rejected_rows),
        "score": spec.to_dict(),
        "covariates": data.encoding.feature_names if data.encoding is not None else [],
    }
    if args.cv_grid and method != "forest":
        raise ConfigError("--cv-grid applies to --method forest only")

    if method == "knn":
        c = _setting(args, cfg, "knn_c", None)
        e = _setting(args, cfg, "knn_e", None)
        metric = _setting(args, cfg, "metric", "euclidean")
        if (c is None) != (e is None):
            raise ConfigError("give both --knn-c and --knn-e, or neither for the default counts")
        if c is None:
            c, e = default_neighbor_counts(data.m, data.n)
        model = fit_knn(data, spec, KnnConfig(int(c), int(e), metric))
        report["knn"] = {"c": model.estimator.config.c, "e": model.estimator.config.e,
                         "metric": model.estimator.config.metric}
    elif method == "forest":
        forest = _forest_from(args, cfg, ForestConfig(n_trees=100, min_leaf=5))
        budget = int(_setting(args, cfg, "pair_budget", DEFAULT_PAIR_BUDGET))
        if args.cv_grid:
            grid = parse_cv_grid(args.cv_grid)
            check_pair_budget(data.m, data.n, budget)
            cells = []
            for cell in _grid_cells(grid):
                candidate = forest.replace(seed=rng.derive_int(seed, "fit.cv_forest"), **cell)
                loss = cv_log_loss(data, spec, candidate, 5, seed, threads)
                cells.append({**cell, "log_loss": loss})
            best = min(range(len(cells)), key=lambda i: (cells[i]["log_loss"], i))
            chosen = {k: v for k, v in cells[best].items() if k != "log_loss"}
            forest = forest.replace(**chosen)
            report["cv"] = {"folds": 5, "criterion": "multiclass log-loss", "cells": cells, "selected": chosen}
        forest = forest.replace(seed=rng.derive_int(seed, "fit.forest"))
        model = fit_full_pairs(data, spec, forest, budget=budget, threads=threads)
        report["forest"] = {"n_trees": forest.n_trees, "mtry": forest.resolved_mtry(2 * data.d),
                            "min_leaf": forest.min_leaf, "max_depth": forest.max_depth}
        report["pairs"] = data.m * data.n
    else:
        base = _forest_from(args, cfg, BAG_BASE)
        bag = BaggingConfig(int(_setting(args, cfg, "bags", 50)), _setting(args, cfg, "q", None),
                            rng.derive_int(seed, "fit.bagging"))
        model = fit_bagged(data, spec, bag, base, threads=threads)
        report["bagging"] = {"b": bag.b, "q": bag.resolved_q(min(data.m, data.n)),
                             "bag_sizes": list(model.estimator.bag_sizes)}
        report["forest"] = {"n_trees": base.n_trees, "mtry": base.resolved_mtry(2 * data.d),
                            "min_leaf": base.min_leaf, "max_depth": base.max_depth}

    model.info = {**(model.info or {}), "seed": seed, "method": method}
    model.save(args.out)
    train_ipb = model.ipb_encoded(data.covariates())
    report["training_ipb"] = {"mean": float(train_ipb.mean()),
                              "share_recommended": float((train_ipb > 0).mean())}
    report_path = args.report or args.out + ".json"
    _write_json(report_path, report)
    print(f"fitted {method} model on {data.m} control + {data.n} experimental subjects")
    if "cv" in report:
        print(f"cross-validation selected {report['cv']['selected']}")
    print(f"wrote {args.out} and {report_path}")
    return EXIT_OK


# --------------------------------------------------------------------------
# predict
# --------------------------------------------------------------------------


def cmd_predict(args: argparse.Namespace) -> int:
    model = ItrModel.load(args.model)
    header, rows = read_rows(args.data)
    if model.encoding is None:
        raise DomainError("model has no covariate encoding; cannot map CSV columns")
    names = model.encoding.names
    missing = [c for c in names if c not in header]
    if missing:
        raise IngestionError(f"{args.data}: missing covariate column(s) {missing}")
    X = np.zeros((len(rows), model.encoding.dimension))
    errors: list[str] = []
    unseen = 0
    for i, row in enumerate(rows):
        with warnings.catch_warnings(record=True):
            warnings.simplefilter("always")
            try:
                x, u = model.encoding.transform([{c: row[c] for c in names}])
            except (DomainError, ShapeError, ValueError) as exc:
                errors.append(f"line {i + 2}: {exc}")
                continue
        X[i] = x[0]
        unseen += u
    if errors:
        shown = "\n  ".join(errors[:20])
        more = f"\n  ... and {len(errors) - 20} more" if len(errors) > 20 else ""
        raise DomainError(f"{len(errors)} row(s) cannot be encoded:\n  {shown}{more}")
    ipb = model.ipb_encoded(X) if rows else np.zeros(0)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header + ["ipb", "recommended"])
        for row, v in zip(rows, ipb):
            w.writerow([row[c] for c in header] + [repr(float(v)), int(v > 0)])
    if unseen:
        print(f"warning: {unseen} unseen categorical value(s) encoded as the reference category",
              file=sys.stderr)
    print(f"wrote {len(rows)} prediction(s) to {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# evaluate
# --------------------------------------------------------------------------


def _column(rows: list[dict[str, str]], name: str, path: str) -> np.ndarray:
    out = np.empty(len(rows))
    for i, row in enumerate(rows):
        try:
            out[i] = float(row[name])
        except (KeyError, ValueError):
            raise IngestionError(f"{path}: line {i + 2}: bad or missing {name!r}") from None
        if not math.isfinite(out[i]):
            raise IngestionError(f"{path}: line {i + 2}: non-finite {name!r}")
    return out


def _evaluate_oracle(args: argparse.Namespace) -> int:
    header, rows = read_rows(args.predictions)
    for col in ("ipb", args.oracle_column):
        if col not in header:
            raise IngestionError(f"{args.predictions}: missing column {col!r}")
    if not rows:
        raise DomainError("no predictions to evaluate")
    pred = _column(rows, "ipb", args.predictions)
    orc = _column(rows, args.oracle_column, args.predictions)
    rule = _column(rows, "recommended", args.predictions).astype(np.int8) if "recommended" in header else None
    report = oracle_report(pred, orc, rule, args.bins)
    _ensure_dir(args.out)
    report.to_json(os.path.join(args.out, "metrics.json"))
    report.to_csv(os.path.join(args.out, "metrics.csv"))
    write_calibration_csv(report.calibration, os.path.join(args.out, "calibration.csv"))
    print(f"RMSE(IPB)   {_fmt(report.rmse_ipb)}")
    print(f"AIPB bias   {_fmt(report.aipb['bias'][0])}")
    print(f"AUC         {_fmt(report.auc)}")
    print(f"MCC         {_fmt(report.mcc)}")
    print(f"sensitivity {_fmt(report.sensitivity)}")
    print(f"specificity {_fmt(report.specificity)}")
    if report.auc is None:
        print("warning: oracle rule has a single class; AUC and MCC are undefined", file=sys.stderr)
    print(f"wrote {os.path.join(args.out, 'metrics.json')}, metrics.csv, calibration.csv")
    return EXIT_OK


def _fit_recipe(args: argparse.Namespace, cfg: RunConfig, spec: ScoreSpec, seed: int) -> Callable[[TrialDataset], ItrModel]:
    method = _setting(args, cfg, "method", "forest")
    if method == "knn":
        return lambda d: fit_knn(d, spec)
    if method == "bagged":
        base = _forest_from(args, cfg, BAG_BASE)
        bag = BaggingConfig(int(_setting(args, cfg, "bags", 50)), _setting(args, cfg, "q", None),
                            rng.derive_int(seed, "evaluate.bagging"))
        return lambda d: fit_bagged(d, spec, bag, base)
    forest = _forest_from(args, cfg, ForestConfig(n_trees=100, min_leaf=5)).replace(
        seed=rng.derive_int(seed, "evaluate.forest"))
    budget = int(_setting(args, cfg, "pair_budget", DEFAULT_PAIR_BUDGET))
    return lambda d: fit_full_pairs(d, spec, forest, budget=budget)


def _evaluate_crossfit(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    data = ingest_csv(args.data, cfg.schema, standardize=cfg.standardize)
    spec = cfg.spec
    seed = int(_setting(args, cfg, "seed", 0))
    fit_fn = _fit_recipe(args, cfg, spec, seed)
    cf = crossfit_ipb(data, fit_fn, args.folds, seed)
    X = data.covariates()
    rhat = (cf.ipb > 0).astype(np.int8)
    pairs = {"r0,r1": (R0, R1), "r0,rhat": (R0, RuleSpec("model")), "r1,rhat": (R1, RuleSpec("model"))}
    results = {}
    for name, (r, s) in pairs.items():
        per_fold = []
        for f in range(args.folds):
            idx = np.flatnonzero(cf.fold == f)
            diff = s.actions(X[idx], idx, cf.models[f]).astype(np.float64) - r.actions(X[idx], idx, cf.models[f])
            per_fold.append(float(np.mean(diff * cf.ipb[idx])))
        s_all = rhat if s.kind == "model" else s.actions(X)
        terms = (s_all.astype(np.float64) - r.actions(X)) * cf.ipb
        se = conditional_aipb_se(terms, data.m, data.n, args.bootstrap, seed).se
        results[name] = {"estimate": float(np.mean(per_fold)), "se": se}
    report = {
        "folds": args.folds,
        "bootstrap": args.bootstrap,
        "seed": seed,
        "m": data.m,
        "n": data.n,
        "aipb": results,
        "share_recommended": float(rhat.mean()),
    }
    _ensure_dir(args.out)
    _write_json(os.path.join(args.out, "aipb.json"), report)
    with open(os.path.join(args.out, "aipb.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rules", "estimate", "se"])
        for name, v in results.items():
            w.writerow([name, repr(v["estimate"]), repr(v["se"])])
    for name, v in results.items():
        print(f"AIPB({name}) = {v['estimate']:.4f} (SE {v['se']:.4f})")
    print(f"wrote {os.path.join(args.out, 'aipb.json')}, aipb.csv")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    if (args.predictions is None) == (args.data is None):
        raise ConfigError("give either --predictions (oracle mode) or --data with --config (cross-fitting mode)")
    return _evaluate_oracle(args) if args.predictions else _evaluate_crossfit(args)


# --------------------------------------------------------------------------
# netbenefit
# --------------------------------------------------------------------------


def cmd_netbenefit(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    data = ingest_csv(args.data, cfg.schema)
    spec = cfg.spec
    result = bootstrap_se(data, lambda d: net_benefit(d, spec), args.bootstrap, args.seed)
    payload = {"net_benefit": result.estimate, "se": result.se, "m": data.m, "n": data.n,
               "bootstrap": args.bootstrap, "seed": args.seed}
    if args.out:
        _write_json(args.out, payload)
    print(f"net benefit {result.estimate!r} (SE {result.se!r}) from {data.m} x {data.n} pairs")
    return EXIT_OK


# --------------------------------------------------------------------------
# benchmark
# --------------------------------------------------------------------------


def cmd_benchmark(args: argparse.Namespace) -> int:
    sizes = tuple(int(s) for s in _split_list(args.sizes))
    forest = None
    if any(v is not None for v in (args.n_trees, args.mtry, args.min_leaf, args.max_depth)):
        base = BAG_BASE if args.method == "bagged" else simulation.BENCHMARK_FOREST
        forest = ForestConfig(
            n_trees=args.n_trees if args.n_trees is not None else base.n_trees,
            mtry=args.mtry if args.mtry is not None else base.mtry,
            min_leaf=args.min_leaf if args.min_leaf is not None else base.min_leaf,
            max_depth=args.max_depth if args.max_depth is not None else base.max_depth,
        )
    config = simulation.BenchmarkConfig(
        scenario=args.scenario,
        train_sizes=sizes,
        iterations=args.iterations,
        eval_size=args.eval_size,
        seed=args.seed,
        method=args.method,
        forest=forest,
        bagging=BaggingConfig(args.bags, args.q),
        bins=args.bins,
    )
    progress = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    report = simulation.run_benchmark(config, progress)
    report.write(args.out)
    widths = [max(len(r[i]) for r in report.table()) for i in range(len(report.table()[0]))]
    for row in report.table():
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    print(f"wrote {os.path.join(args.out, 'report.json')}, table.csv, iterations.csv, calibration.csv")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}") from None
    if not 0 <= v < 2**63:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2**63)")
    return v


def _add_forest_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-trees", dest="n_trees", type=_positive_int, help="trees per forest")
    p.add_argument("--mtry", type=_positive_int, help="features tried per split (default ceil(sqrt(F)))")
    p.add_argument("--min-leaf", dest="min_leaf", type=_positive_int, help="minimum bootstrap weight per leaf")
    p.add_argument("--max-depth", dest="max_depth", type=_positive_int, help="maximum tree depth")


def _add_method_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=METHODS, help="estimator (default forest)")
    p.add_argument("--seed", type=_seed, help="master seed (default 0)")
    p.add_argument("--knn-c", dest="knn_c", type=_positive_int, help="control neighbors")
    p.add_argument("--knn-e", dest="knn_e", type=_positive_int, help="experimental neighbors")
    p.add_argument("--metric", choices=KNN_METRICS, help="kNN distance")
    _add_forest_flags(p)
    p.add_argument("--bags", type=_positive_int, help="bagged learners (default 50)")
    p.add_argument("--q", type=float, help="subsampling probability (default min(m,n)**-0.25)")
    p.add_argument("--pair-budget", dest="pair_budget", type=_positive_int,
                   help=f"maximum pairs for the full-pairs forest (default {DEFAULT_PAIR_BUDGET})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpcitr", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", help="generate synthetic training and evaluation CSVs")
    p.add_argument("--scenario", type=int, choices=(1, 2), required=True)
    p.add_argument("--n", type=_positive_int, required=True, help="training rows (split half per arm)")
    p.add_argument("--eval", type=_positive_int, default=10_000, help="evaluation rows")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a treatment-rule model")
    p.add_argument("--data", required=True, help="trial CSV")
    p.add_argument("--config", required=True, help="INI file with [schema] and [level.N] sections")
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--report", help="fit report JSON (default <out>.json)")
    p.add_argument("--cv-grid", dest="cv_grid", nargs="+", metavar="KEY=V1,V2",
                   help="5-fold log-loss selection over forest settings, e.g. trees=100,200 mtry=4,8")
    _add_method_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="IPB and recommended treatment for each row")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="covariate CSV; all columns are kept")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against an oracle, or cross-fit AIPB on trial data")
    p.add_argument("--predictions", help="predict output with an oracle column")
    p.add_argument("--oracle-column", dest="oracle_column", default="oracle_ipb")
    p.add_argument("--bins", type=_positive_int, default=20, help="calibration bins")
    p.add_argument("--data", help="trial CSV for cross-fitted AIPB")
    p.add_argument("--config", help="INI config for --data")
    p.add_argument("--folds", type=_positive_int, default=3)
    p.add_argument("--bootstrap", type=_positive_int, default=200, help="bootstrap replicates for SEs")
    p.add_argument("--out", required=True, help="output directory")
    _add_method_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("netbenefit", help="net benefit with a bootstrap standard error")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--bootstrap", type=_positive_int, default=200)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", help="optional JSON output")
    p.set_defaults(func=cmd_netbenefit)

    p = sub.add_parser("benchmark", help="Monte Carlo campaign on a simulation scenario")
    p.add_argument("--scenario", type=int, choices=(1, 2), required=True)
    p.add_argument("--sizes", default="400,2000", help="comma-separated training sizes")
    p.add_argument("--iterations", type=_positive_int, default=2)
    p.add_argument("--eval-size", dest="eval_size", type=_positive_int, default=10_000)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--method", choices=METHODS, default="forest")
    _add_forest_flags(p)
    p.add_argument("--bags", type=_positive_int, default=50)
    p.add_argument("--q", type=float)
    p.add_argument("--bins", type=_positive_int, default=20)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--verbose", action="store_true", help="print per-iteration progress to stderr")
    p.set_defaults(func=cmd_benchmark)
    return parser


def _show_warning(message, category, filename, lineno, file=None, line=None) -> None:  # noqa: ANN001
    print(f"warning: {message}", file=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    previous = warnings.showwarning
    warnings.showwarning = _show_warning
    try:
        return args.func(args)
    except (DomainError, ShapeError, IngestionError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ResourceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (GpcError, OSError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        warnings.showwarning = previous


if __name__ == "__main__":
    sys.exit(main())

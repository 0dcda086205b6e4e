"""Benchmark orchestration: generate scenario data, select hyperparameters
by cross-validation, fit each method and record metrics.

A run is described by a JSON document::

    {
      "scenarios": [{"name": "toy2d", "params": {"n": 5000}}],
      "methods": ["ppdre", "ulsif"],
      "seeds": [0, 1],
      "folds": 5,
      "grids": {"ppdre": {"J": [100, 150], "lam": [0.5], "lr": [0.1], "K": [5]}},
      "ppdre": {"select": "greedy", "patience": 1},
      "standardize": true,
      "out": "results",
      "workers": 1
    }

Only ``scenarios``, ``methods`` and ``seeds`` are required. Unknown keys are
rejected before anything is computed.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import applications, baselines, metrics, selection, worlds
from .io import StandardizedModel, save_model
from .selection import BANDWIDTH_FACTORS, LOGISTIC_RATES, PPDRE_GRID, ULSIF_LAMBDAS, GridPoint

logger = logging.getLogger(__name__)

RATIO_METHODS = ("ppdre", "ulsif", "kliep", "logistic")
# weightings that need no ratio fit; only meaningful for weighted downstream tasks
PSEUDO_METHODS = ("unweighted", "truth")
SCENARIOS = {
    "toy2d": {"d": 2, "n": 5000},
    "stabilized_weights": {"d_x": 10, "c": 0.5, "n": 5000},
    "mi_gaussian": {"p": 2, "rho": 0.8, "n": 5000},
    "dose_response": {"n": 2000, "mc_n": 100_000},
    "covariate_shift_friedman": {"n": 2000, "noise_sd": 1.0},
    "covariate_shift_csv": {"path": None, "target": None, "columns": None},
}
WEIGHTED_SCENARIOS = ("dose_response", "covariate_shift_friedman", "covariate_shift_csv")
CONFIG_KEYS = {"scenarios", "scenario", "methods", "seeds", "folds", "grids", "ppdre",
               "standardize", "out", "workers"}
PPDRE_OPTIONS = {"select": "greedy", "patience": 1, "max_inner_iters": 2000, "rel_tol": 1e-5}
GRID_KEYS = {
    "ppdre": {"J", "lam", "lr", "K"},
    "ulsif": {"sigma_factors", "lam"},
    "kliep": {"sigma_factors"},
    "logistic": {"lr"},
}
WORKERS_ENV = "PPDRE_WORKERS"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scenarios: list
    methods: list
    seeds: list
    folds: int = 5
    grids: dict = field(default_factory=dict)
    ppdre: dict = field(default_factory=lambda: dict(PPDRE_OPTIONS))
    standardize: bool = True
    out: str = "results"
    workers: int | None = None

    def grid_for(self, method: str) -> dict:
        defaults = {
            "ppdre": {k: list(v) for k, v in PPDRE_GRID.items()},
            "ulsif": {"sigma_factors": list(BANDWIDTH_FACTORS), "lam": list(ULSIF_LAMBDAS)},
            "kliep": {"sigma_factors": list(BANDWIDTH_FACTORS)},
            "logistic": {"lr": list(LOGISTIC_RATES)},
        }[method]
        defaults.update(self.grids.get(method, {}))
        return defaults


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def parse_config(doc: dict, overrides: dict | None = None) -> RunConfig:
    """Validate a config document; ``overrides`` (from command-line flags)
    take precedence over the document."""
    doc = dict(doc)
    for key, value in (overrides or {}).items():
        if value is not None:
            doc[key] = value
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    if "scenario" in doc:
        if "scenarios" in doc:
            raise ConfigError("give either 'scenario' or 'scenarios', not both")
        doc["scenarios"] = [doc.pop("scenario")]

    scenarios = []
    for entry in doc.get("scenarios") or []:
        if isinstance(entry, str):
            entry = {"name": entry}
        if set(entry) - {"name", "params"}:
            raise ConfigError(f"scenario entries take 'name' and 'params', got {sorted(entry)}")
        name = entry.get("name")
        if name not in SCENARIOS:
            raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
        params = dict(SCENARIOS[name])
        extra = set(entry.get("params", {})) - set(params)
        if extra:
            raise ConfigError(f"scenario {name}: unknown parameter(s) {', '.join(sorted(extra))}")
        params.update(entry.get("params", {}))
        if name == "covariate_shift_csv":
            if not params["path"] or not params["target"]:
                raise ConfigError("covariate_shift_csv needs 'path' and 'target'")
            if not Path(params["path"]).is_file():
                raise ConfigError(f"CSV input {params['path']} does not exist")
        scenarios.append({"name": name, "params": params})
    if not scenarios:
        raise ConfigError("at least one scenario is required")

    methods = list(doc.get("methods") or [])
    if not methods:
        raise ConfigError("at least one method is required")
    for m in methods:
        if m not in RATIO_METHODS + PSEUDO_METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {', '.join(RATIO_METHODS + PSEUDO_METHODS)}")
        if m in PSEUDO_METHODS and not all(s["name"] in WEIGHTED_SCENARIOS or m == "truth" for s in scenarios):
            raise ConfigError(f"method {m!r} only applies to weighted downstream scenarios")

    seeds = [int(s) for s in doc.get("seeds") or []]
    if not seeds:
        raise ConfigError("at least one seed is required")

    grids = doc.get("grids", {})
    for method, grid in grids.items():
        if method not in GRID_KEYS:
            raise ConfigError(f"grid given for unknown method {method!r}")
        bad = set(grid) - GRID_KEYS[method]
        if bad:
            raise ConfigError(f"grid for {method}: unknown key(s) {', '.join(sorted(bad))}")
        for key, values in grid.items():
            if not isinstance(values, list) or not values:
                raise ConfigError(f"grid for {method}.{key} must be a nonempty list")

    ppdre = dict(PPDRE_OPTIONS)
    bad = set(doc.get("ppdre", {})) - set(PPDRE_OPTIONS)
    if bad:
        raise ConfigError(f"unknown ppdre option(s): {', '.join(sorted(bad))}")
    ppdre.update(doc.get("ppdre", {}))
    if ppdre["select"] not in ("greedy", "grid"):
        raise ConfigError("ppdre.select must be 'greedy' or 'grid'")

    folds = int(doc.get("folds", 5))
    if folds < 2:
        raise ConfigError("folds must be at least 2")
    workers = doc.get("workers")
    return RunConfig(scenarios, methods, seeds, folds, grids, ppdre, bool(doc.get("standardize", True)),
                     str(doc.get("out", "results")), None if workers is None else int(workers))


def load_config(path, overrides: dict | None = None) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(doc, overrides)


# ---------------------------------------------------------------------------
# fitting one method with CV

def method_seed(seed: int, method: str) -> int:
    return selection.derive_seed(seed, zlib.crc32(method.encode()))


def fit_ratio(method: str, X_p, X_q, cfg: RunConfig, seed: int):
    """CV-select hyperparameters for ``method`` and refit on all data.

    Returns ``(model, choice)`` where ``choice`` describes the selection.
    """
    X_p, X_q = np.asarray(X_p, float), np.asarray(X_q, float)
    if cfg.standardize:
        shift, scale = StandardizedModel.fit_transform(X_p, X_q)
        X_p, X_q = (X_p - shift) / scale, (X_q - shift) / scale
    grid = cfg.grid_for(method)
    folds = selection.kfold_split(X_p.shape[0], X_q.shape[0], cfg.folds, seed)

    if method == "ppdre":
        opts = cfg.ppdre
        inner = {"max_inner_iters": int(opts["max_inner_iters"]), "rel_tol": float(opts["rel_tol"])}
        if opts["select"] == "greedy":
            points = selection.expand_grid("ppdre", {k: grid[k] for k in ("J", "lam", "lr")})
            points = [GridPoint("ppdre", {**p.params, **inner}) for p in points]
            res = selection.select_K(points, X_p, X_q, int(max(grid["K"])), int(opts["patience"]), folds, seed)
            model, choice = res.model, {**res.point.params, "K": res.K}
        else:
            points = selection.expand_grid("ppdre", {k: grid[k] for k in ("K", "J", "lam", "lr")})
            points = [GridPoint("ppdre", {**p.params, **inner}) for p in points]
            res = selection.grid_search("ppdre", points, X_p, X_q, folds, seed)
            model = selection.fit_point(res.best, X_p, X_q, seed)
            choice = dict(res.best.params)
    else:
        if method in ("ulsif", "kliep"):
            med = baselines.median_distance(X_p, X_q)
            spec = {"sigma": [med * f for f in grid["sigma_factors"]]}
            if method == "ulsif":
                spec["lam"] = grid["lam"]
        else:
            spec = dict(grid)
        points = selection.expand_grid(method, spec)
        res = selection.grid_search(method, points, X_p, X_q, folds, seed)
        model = selection.fit_point(res.best, X_p, X_q, seed)
        choice = dict(res.best.params)
    if cfg.standardize:
        model = StandardizedModel(model, shift, scale)
    return model, choice


# ---------------------------------------------------------------------------
# scenarios

def _scenario_data(name: str, params: dict, seed: int):
    if name == "toy2d":
        return worlds.gen_gaussian_pair(params["d"], params["n"], params["n"], seed)
    if name == "stabilized_weights":
        c = params["c"]
        if np.isscalar(c):
            # a scalar scales the first coordinate direction
            c = np.eye(int(params["d_x"]))[0] * float(c)
        else:
            c = np.asarray(c, float)
        return worlds.gen_stabilized_weights(c, params["n"], seed)
    if name == "mi_gaussian":
        return worlds.gen_mi_gaussian(params["p"], params["rho"], params["n"], seed)
    if name == "dose_response":
        return worlds.gen_dose_response(params["n"], seed, params["mc_n"])
    if name == "covariate_shift_friedman":
        X, y = worlds.gen_friedman(params["n"], params["noise_sd"], seed)
        return worlds.gen_covariate_shift(X, y, seed)
    if name == "covariate_shift_csv":
        X, y, _ = worlds.read_csv_table(params["path"], params.get("columns"), params["target"])
        return worlds.gen_covariate_shift(X, y, seed)
    raise ConfigError(f"unknown scenario {name!r}")


def _shift_truth(split: worlds.ShiftSplit):
    """Exact test/train input density ratio for the biased split at the
    training rows, with the class-size constant estimated by the counts."""
    prob = split.selection_prob[split.train_index]
    return (1.0 - prob) / prob * (split.train_index.size / max(split.test_index.size, 1))


def _weights(method, X_p, X_q, cfg, seed, truth_fn):
    if method == "unweighted":
        return np.ones(X_q.shape[0]), None, {}
    if method == "truth":
        return truth_fn(), None, {}
    model, choice = fit_ratio(method, X_p, X_q, cfg, seed)
    return np.asarray(model(X_q), float), model, choice


def run_unit(scenario: dict, method: str, seed: int, cfg: RunConfig, out_dir: Path | None = None):
    """Run one (scenario, method, seed) cell; returns ``(records, runtime, choice)``."""
    name, params = scenario["name"], scenario["params"]
    data = _scenario_data(name, params, seed)
    fit_seed = method_seed(seed, method)
    start = time.perf_counter()
    records = []
    choice: dict = {}

    if name in ("toy2d", "stabilized_weights", "mi_gaussian"):
        if method == "unweighted":
            raise ConfigError(f"method 'unweighted' does not apply to {name}")
        if method == "truth":
            model = data.truth
        else:
            model, choice = fit_ratio(method, data.X_p, data.X_q, cfg, fit_seed)
        n = data.X_q.shape[0]
        if name == "mi_gaussian":
            r_p, clamped = metrics.clamp_positive(model(data.X_p))
            est = float(np.mean(np.log(r_p)))
            records.append((name, "mae_mi", metrics.mae_mi(est, data.value), n, clamped))
        else:
            r_hat, clamped = metrics.clamp_positive(model(data.X_q))
            r_true = data.truth(data.X_q)
            records.append((name, "rmsle", metrics.rmsle(r_hat, r_true), n, clamped))
            records.append((name, "rmse", metrics.rmse(r_hat, r_true), n, False))
            if name == "toy2d" and data.d == 2 and out_dir is not None:
                pts = metrics.lattice()
                metrics.write_grid_dump(pts, data.truth(pts), model(pts),
                                        out_dir / f"grid_{name}_{method}_seed{seed}.csv")
        if out_dir is not None and method != "truth":
            save_model(model, out_dir / f"model_{name}_{method}_seed{seed}.json")
    elif name == "dose_response":
        joint = data.joint
        product = np.column_stack([data.T[np.random.default_rng(fit_seed).permutation(data.T.size)], data.X])
        w, model, choice = _weights(method, product, joint, cfg, fit_seed, data.stabilized_weight)
        fit = applications.fit_adrf(data.T, data.Y, w)
        records.append((name, "ase", metrics.ase(fit, data.adrf_oracle, data.T), data.T.size, False))
    else:
        split = data
        w, model, choice = _weights(method, split.X_test, split.X_train, cfg, fit_seed,
                                    lambda: _shift_truth(split))
        lam, _ = applications.krr_select_lambda(split.X_train, split.y_train, w, seed=fit_seed)
        krr = applications.krr_fit(split.X_train, split.y_train, w, lam)
        records.append((name, "nmse", metrics.nmse(split.y_test, krr(split.X_test)),
                        split.y_test.size, False))
    if name in WEIGHTED_SCENARIOS and model is not None and out_dir is not None:
        save_model(model, out_dir / f"model_{name}_{method}_seed{seed}.json")
    runtime = time.perf_counter() - start
    out = [metrics.MetricRecord(s, method, seed, m, v, n, None, c) for s, m, v, n, c in records]
    return out, runtime, choice


def _unit_task(args):
    scenario, method, seed, cfg, out_dir = args
    try:
        records, runtime, choice = run_unit(scenario, method, seed, cfg, out_dir)
        return records, runtime, choice, None
    except Exception as exc:  # one failing cell must not abort the sweep
        logger.exception("%s/%s/seed %d failed", scenario["name"], method, seed)
        return [], 0.0, {}, f"{type(exc).__name__}: {exc}"


def _write_rows(path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def run_bench(cfg: RunConfig) -> int:
    """Run every (scenario, seed, method) cell and write ``report.csv``,
    ``timings.csv`` and ``selection.csv`` into ``cfg.out``. Returns the
    process exit code: 0 if every cell succeeded."""
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    units = [(s, m, seed, cfg, out_dir) for s in cfg.scenarios for seed in cfg.seeds for m in cfg.methods]
    workers = cfg.workers or default_workers()
    if workers > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_unit_task, units))
    else:
        results = [_unit_task(u) for u in units]

    records, timings, choices = [], [], []
    failed = 0
    for (scenario, method, seed, _, _), (recs, runtime, choice, error) in zip(units, results):
        name = scenario["name"]
        if error is not None:
            failed += 1
            records.append(metrics.MetricRecord(name, method, seed, "error", float("nan"), 0))
            logger.error("%s/%s/seed %d: %s", name, method, seed, error)
            continue
        records.extend(recs)
        timings.append((name, method, seed, f"{runtime:.3f}"))
        choices.append((name, method, seed, json.dumps(choice, sort_keys=True)))
    metrics.write_report(records, out_dir / "report.csv")
    _write_rows(out_dir / "timings.csv", ("scenario", "method", "seed", "runtime_s"), timings)
    _write_rows(out_dir / "selection.csv", ("scenario", "method", "seed", "choice"), choices)
    return 1 if failed else 0

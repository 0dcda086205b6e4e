"""Cross-validated hyperparameter search and greedy growth of the number of
projections."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import baselines
from .estimator import FitConfig, PPRatioModel, fit, fit_projection
from .numerics import make_rng

logger = logging.getLogger(__name__)

# Search grid for ppDRE (number of factors, basis size, ridge, Adam step).
PPDRE_GRID = {
    "K": (5, 10, 15),
    "J": (20, 50, 70, 100, 150),
    "lam": (0.5, 1.0, 5.0, 10.0),
    "lr": (0.001, 0.01, 0.1),
}
BANDWIDTH_FACTORS = (0.25, 0.5, 1.0, 2.0, 4.0)
ULSIF_LAMBDAS = (1e-3, 1e-2, 0.1, 1.0, 10.0)
LOGISTIC_RATES = (0.05, 0.5, 2.0)

IMPROVEMENT_THRESHOLD = 1e-6


class SelectionError(RuntimeError):
    pass


def derive_seed(seed: int, *keys: int) -> int:
    """A 32-bit seed for the stream ``(seed, *keys)``."""
    return int(np.random.SeedSequence([int(seed)] + [int(k) for k in keys]).generate_state(1)[0])


@dataclass(frozen=True)
class FoldAssignment:
    folds_p: np.ndarray
    folds_q: np.ndarray
    k: int
    seed: int = 0

    def split(self, i: int):
        """Index arrays ``(train_p, val_p, train_q, val_q)`` for fold ``i``."""
        if not 0 <= i < self.k:
            raise IndexError(f"fold {i} out of range for k={self.k}")
        return (
            np.flatnonzero(self.folds_p != i),
            np.flatnonzero(self.folds_p == i),
            np.flatnonzero(self.folds_q != i),
            np.flatnonzero(self.folds_q == i),
        )


def _assign(n, k, rng):
    folds = np.arange(n) % k
    return folds[rng.permutation(n)]


def kfold_split(n_p: int, n_q: int, k: int = 5, seed: int = 0) -> FoldAssignment:
    if k < 2:
        raise ValueError("need at least two folds")
    if n_p < k or n_q < k:
        raise ValueError(f"cannot split {min(n_p, n_q)} rows into {k} folds")
    rng = make_rng(seed)
    return FoldAssignment(_assign(n_p, k, rng), _assign(n_q, k, rng), k, seed)


def validation_loss(model, X_p_val, X_q_val) -> float:
    """Unpenalized squared-loss criterion ``mean_q r^2 - 2 mean_p r``; equal
    to the squared L2(q) distance to the true ratio up to a constant."""
    r_q = np.asarray(model(np.asarray(X_q_val, float)), float)
    r_p = np.asarray(model(np.asarray(X_p_val, float)), float)
    if r_q.size == 0 or r_p.size == 0:
        raise ValueError("held-out sets must be nonempty")
    return float(np.mean(r_q * r_q) - 2.0 * np.mean(r_p))


@dataclass(frozen=True)
class GridPoint:
    method: str
    params: dict = field(default_factory=dict)

    def label(self) -> str:
        inner = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.method}({inner})"


def expand_grid(method: str, grid: dict) -> list[GridPoint]:
    """Cartesian product of a ``{name: values}`` mapping, in key order."""
    keys = list(grid)
    return [GridPoint(method, dict(zip(keys, vals))) for vals in itertools.product(*(grid[k] for k in keys))]


def default_grid(method: str, X_p=None, X_q=None, include_K: bool = False) -> list[GridPoint]:
    if method == "ppdre":
        grid = dict(PPDRE_GRID)
        if not include_K:
            grid.pop("K")
        return expand_grid("ppdre", grid)
    if method in ("ulsif", "kliep"):
        if X_p is None or X_q is None:
            raise ValueError(f"{method} bandwidth grid needs the data")
        med = baselines.median_distance(X_p, X_q)
        sigmas = tuple(med * f for f in BANDWIDTH_FACTORS)
        if method == "ulsif":
            return expand_grid("ulsif", {"sigma": sigmas, "lam": ULSIF_LAMBDAS})
        return expand_grid("kliep", {"sigma": sigmas})
    if method == "logistic":
        return expand_grid("logistic", {"lr": LOGISTIC_RATES})
    raise ValueError(f"unknown method {method!r}")


def fit_point(point: GridPoint, X_p, X_q, seed: int = 0, K: int | None = None):
    """Fit the model described by one grid point."""
    p = dict(point.params)
    if point.method == "ppdre":
        K_point = p.pop("K", 5)
        return fit(X_p, X_q, FitConfig(seed=seed, **p), int(K_point if K is None else K))
    if point.method == "ulsif":
        return baselines.ulsif_fit(X_p, X_q, seed=seed, **p)
    if point.method == "kliep":
        return baselines.kliep_fit(X_p, X_q, seed=seed, **p)
    if point.method == "logistic":
        return baselines.logistic_ratio_fit(X_p, X_q, seed=seed, **p)
    raise ValueError(f"unknown method {point.method!r}")


@dataclass
class GridResult:
    best: GridPoint
    table: list[dict]

    def losses(self) -> np.ndarray:
        return np.array([row["loss"] for row in self.table])


def grid_search(method: str, grid: Sequence[GridPoint], X_p, X_q, folds: FoldAssignment,
                seed: int = 0, fitter: Callable | None = None) -> GridResult:
    """k-fold CV over ``grid``; the best point minimizes the fold-mean
    validation loss, earliest point winning ties. Points whose fit fails on
    any fold are recorded with infinite loss."""
    if not grid:
        raise ValueError("grid is empty")
    fitter = fitter or fit_point
    X_p, X_q = np.asarray(X_p, float), np.asarray(X_q, float)
    table = []
    for i, point in enumerate(grid):
        if point.method != method:
            raise ValueError(f"grid point {point.label()} does not belong to method {method!r}")
        fold_losses, error = [], None
        for f in range(folds.k):
            tr_p, va_p, tr_q, va_q = folds.split(f)
            try:
                model = fitter(point, X_p[tr_p], X_q[tr_q], derive_seed(seed, i, f))
                fold_losses.append(validation_loss(model, X_p[va_p], X_q[va_q]))
            except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
                error = f"{type(exc).__name__}: {exc}"
                break
        loss = float(np.mean(fold_losses)) if error is None else np.inf
        table.append({"point": point, "loss": loss, "fold_losses": fold_losses, "error": error})
        logger.info("cv %s -> %s", point.label(), error or f"{loss:.6g}")
    losses = np.array([row["loss"] for row in table])
    if not np.any(np.isfinite(losses)):
        details = "; ".join(f"{row['point'].label()}: {row['error']}" for row in table)
        raise SelectionError(f"every grid point failed ({details})")
    return GridResult(grid[int(np.argmin(losses))], table)


@dataclass
class KSelection:
    K: int
    model: PPRatioModel
    point: GridPoint
    table: list[dict]


def _grow_point(point: GridPoint, X_p, X_q, folds, K_max, patience, seed, point_index):
    """Lock-step growth over folds for one ppDRE grid point. Returns the
    mean validation loss after each added factor and its running minimum."""
    cfg_params = {k: v for k, v in point.params.items() if k != "K"}
    models = [PPRatioModel(X_p.shape[1]) for _ in range(folds.k)]
    splits = [folds.split(f) for f in range(folds.k)]
    cfgs = [FitConfig(seed=derive_seed(seed, point_index, f), **cfg_params) for f in range(folds.k)]
    losses, running, error = [], [], None
    best, stale = np.inf, 0
    for k in range(1, K_max + 1):
        fold_losses = []
        try:
            for f, (tr_p, va_p, tr_q, va_q) in enumerate(splits):
                proj = fit_projection(models[f], X_q[tr_q], X_p[tr_p], cfgs[f])
                models[f] = models[f].extend(proj)
                fold_losses.append(validation_loss(models[f], X_p[va_p], X_q[va_q]))
        except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
            if k == 1:
                raise
            error = f"growth stopped at K={k}: {type(exc).__name__}: {exc}"
            break
        loss = float(np.mean(fold_losses))
        losses.append(loss)
        if loss < best - IMPROVEMENT_THRESHOLD:
            best, stale = loss, 0
        else:
            stale += 1
        running.append(best)
        if stale >= patience:
            break
    return losses, running, error


def select_K(grid: Sequence[GridPoint], X_p, X_q, K_max: int = 15, patience: int = 1,
             folds: FoldAssignment | None = None, seed: int = 0) -> KSelection:
    """Pick ppDRE hyperparameters and the number of factors by growing the
    model one factor at a time on the training folds until the mean
    validation loss stops improving, then refit on all data."""
    if K_max < 1:
        raise ValueError("K_max must be at least 1")
    if patience < 1:
        raise ValueError("patience must be at least 1")
    if not grid:
        raise ValueError("grid is empty")
    X_p, X_q = np.asarray(X_p, float), np.asarray(X_q, float)
    folds = folds or kfold_split(X_p.shape[0], X_q.shape[0], 5, seed)
    table = []
    for i, point in enumerate(grid):
        try:
            losses, running, error = _grow_point(point, X_p, X_q, folds, K_max, patience, seed, i)
        except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
            losses, running, error = [], [], f"{type(exc).__name__}: {exc}"
        if losses:
            k_best = int(np.argmin(losses)) + 1
            loss = losses[k_best - 1]
        else:
            k_best, loss = 0, np.inf
        table.append({"point": point, "K": k_best, "loss": loss, "losses": losses,
                      "running_min": running, "error": error})
        logger.info("select_K %s -> K=%d loss=%.6g", point.label(), k_best, loss)
    losses = np.array([row["loss"] for row in table])
    if not np.any(np.isfinite(losses)):
        details = "; ".join(f"{row['point'].label()}: {row['error']}" for row in table)
        raise SelectionError(f"every grid point failed ({details})")
    best = table[int(np.argmin(losses))]
    params = {k: v for k, v in best["point"].params.items() if k != "K"}
    model = fit(X_p, X_q, FitConfig(seed=seed, **params), best["K"])
    return KSelection(best["K"], model, best["point"], table)

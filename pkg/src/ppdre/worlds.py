"""Synthetic data generators with known truths.

Every generator is a pure function of its parameters and seed. Ratio
scenarios return the numerator sample ``X_p``, the denominator sample ``X_q``
and the true ratio ``p/q`` as a callable.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .numerics import make_rng


@dataclass(frozen=True, eq=False)
class LabeledScenario:
    X_p: np.ndarray
    X_q: np.ndarray
    truth: Callable | None = None
    value: float | None = None
    descriptor: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.X_p.shape[1]


def gaussian_pair_ratio(X, d: int | None = None):
    """``N(0, I) / N(0, 2I)`` density ratio: ``2^{d/2} exp(-|x|^2 / 4)``."""
    X = np.atleast_2d(np.asarray(X, float))
    d = X.shape[1] if d is None else d
    return 2.0 ** (d / 2.0) * np.exp(-np.sum(X * X, axis=1) / 4.0)


def gen_gaussian_pair(d: int = 2, n_p: int = 5000, n_q: int = 5000, seed: int = 0) -> LabeledScenario:
    if d < 1:
        raise ValueError("d must be positive")
    rng = make_rng(seed)
    X_p = rng.standard_normal((n_p, d))
    X_q = math.sqrt(2.0) * rng.standard_normal((n_q, d))
    return LabeledScenario(X_p, X_q, gaussian_pair_ratio, None,
                           {"name": "toy2d" if d == 2 else "gaussian_pair", "d": d, "n_p": n_p, "n_q": n_q, "seed": seed})


def gen_stabilized_weights(c, n: int = 5000, seed: int = 0) -> LabeledScenario:
    """Linear-Gaussian treatment ``T = c.X + eps``. Rows are ``(t, x)``; the
    denominator sample is the observed joint sample and the numerator sample
    pairs each ``x_i`` with a permuted treatment, so the ratio is the
    stabilized weight ``f_T(t) / f_{T|X}(t|x)``."""
    c = np.asarray(c, float).ravel()
    if n < 2:
        raise ValueError("n must be at least 2")
    rng = make_rng(seed)
    X = rng.standard_normal((n, c.size))
    T = X @ c + rng.standard_normal(n)
    joint = np.column_stack([T, X])
    product = np.column_stack([T[rng.permutation(n)], X])
    marginal_sd = math.sqrt(1.0 + c @ c)

    def truth(Z):
        Z = np.atleast_2d(np.asarray(Z, float))
        t, x = Z[:, 0], Z[:, 1:]
        return norm.pdf(t, 0.0, marginal_sd) / norm.pdf(t, x @ c, 1.0)

    return LabeledScenario(product, joint, truth, None,
                           {"name": "stabilized_weights", "d_x": c.size, "c": c.tolist(), "n": n, "seed": seed})


def gaussian_mi(p: int, rho: float) -> float:
    return -0.5 * p * math.log(1.0 - rho * rho)


def gen_mi_gaussian(p: int = 2, rho: float = 0.8, n: int = 5000, seed: int = 0) -> LabeledScenario:
    """Pairs ``(u, v)`` with ``corr(u_i, v_j) = rho * [i == j]``. The
    numerator sample is the joint sample and the denominator sample permutes
    the ``v`` rows; ``value`` is the exact mutual information."""
    if not abs(rho) < 1:
        raise ValueError("|rho| must be below 1")
    if p < 1:
        raise ValueError("p must be positive")
    rng = make_rng(seed)
    U = rng.standard_normal((n, p))
    V = rho * U + math.sqrt(1.0 - rho * rho) * rng.standard_normal((n, p))
    joint = np.hstack([U, V])
    product = np.hstack([U, V[rng.permutation(n)]])
    s = 1.0 - rho * rho

    def truth(Z):
        Z = np.atleast_2d(np.asarray(Z, float))
        u, v = Z[:, :p], Z[:, p:]
        log_r = -0.5 * math.log(s) * p - np.sum(rho * rho * (u * u + v * v) - 2 * rho * u * v, axis=1) / (2 * s)
        return np.exp(log_r)

    return LabeledScenario(joint, product, truth, gaussian_mi(p, rho),
                           {"name": "mi_gaussian", "p": p, "rho": rho, "n": n, "seed": seed})


# ---------------------------------------------------------------------------
# dose response

DOSE_DIM = 25
_I1 = np.array([3, 6, 7, 8, 9, 10, 11, 12, 13, 14]) - 1
_I2 = np.arange(15, 25) - 1


def treatment_logit(X) -> np.ndarray:
    """Noise-free part of the latent treatment (before the logistic map)."""
    X = np.asarray(X, float)
    x345 = X[:, 2:5]
    return (X[:, 0] / (1.0 + X[:, 1])
            + x345.max(axis=1) / (0.2 + x345.min(axis=1))
            + np.tanh(5.0 * X[:, _I1].mean(axis=1))
            - 2.0)


def dose_curve(t) -> np.ndarray:
    t = np.asarray(t, float)
    return (1.2 - t * t) * np.sin(2.0 * np.pi * t - 2.0)


def covariate_effect(X) -> np.ndarray:
    X = np.asarray(X, float)
    return (0.5 * np.tanh(5.0 * X[:, _I2].mean(axis=1))
            + 1.5 * np.exp(0.2 * (X[:, 0] - X[:, 4]) / (0.1 + X[:, 1:4].min(axis=1))))


def outcome_mean(t, X) -> np.ndarray:
    """``h(t, x)``; ``t`` broadcasts against the rows of ``X``."""
    return dose_curve(t) * covariate_effect(X)


def draw_covariates(rng, n: int) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=(n, DOSE_DIM))


@dataclass(frozen=True, eq=False)
class DoseResponseWorld:
    X: np.ndarray
    T: np.ndarray
    Y: np.ndarray
    mc_effect: np.ndarray = field(repr=False)
    mc_noise: np.ndarray = field(repr=False)
    mc_logit: np.ndarray = field(repr=False)
    descriptor: dict = field(default_factory=dict)

    def adrf_oracle(self, t):
        """Monte Carlo ``E_X h(t, X)``."""
        return dose_curve(t) * self.mc_effect.mean()

    def adrf_oracle_sd(self, t):
        """Monte Carlo standard error of :meth:`adrf_oracle`."""
        return np.abs(dose_curve(t)) * self.mc_effect.std() / math.sqrt(self.mc_effect.size)

    def qdrf_oracle(self, t, tau: float):
        """Monte Carlo ``tau``-quantile of ``h(t, X) + 0.5 eps``."""
        t_arr = np.atleast_1d(np.asarray(t, float))
        out = np.array([np.quantile(dose_curve(ti) * self.mc_effect + self.mc_noise, tau) for ti in t_arr])
        return out if np.ndim(t) else out[0]

    def stabilized_weight(self, T=None, X=None, chunk: int = 256):
        """True ``f_T(t) / f_{T|X}(t|x)`` at the observed (or given) rows.

        The latent ``s = log((1-t)/t)`` is Gaussian given ``x`` with sd 0.5;
        the Jacobian of the logistic map cancels in the ratio and the
        marginal density of ``s`` is a Monte Carlo mixture.
        """
        T = self.T if T is None else np.asarray(T, float)
        X = self.X if X is None else np.asarray(X, float)
        s = np.log((1.0 - T) / T)
        cond = norm.pdf(s, treatment_logit(X), 0.5)
        marg = np.empty_like(s)
        for i in range(0, s.size, chunk):
            blk = s[i:i + chunk, None]
            marg[i:i + chunk] = norm.pdf(blk, self.mc_logit[None, :], 0.5).mean(axis=1)
        return marg / cond

    @property
    def joint(self) -> np.ndarray:
        """Rows ``(t, x)`` of the observed sample."""
        return np.column_stack([self.T, self.X])


def gen_dose_response(n: int = 2000, seed: int = 0, mc_n: int = 100_000, X=None) -> DoseResponseWorld:
    """Semi-synthetic continuous-treatment world on 25 covariates.

    Covariates are i.i.d. uniform on [0, 1] unless ``X`` is given (e.g. real
    covariates loaded from CSV). The Monte Carlo oracles use their own stream
    derived from ``seed``.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if mc_n < 10_000:
        raise ValueError("mc_n must be at least 1e4")
    rng = make_rng(seed)
    if X is None:
        X = draw_covariates(rng, n)
    else:
        X = np.asarray(X, float)
        if X.ndim != 2 or X.shape[1] != DOSE_DIM:
            raise ValueError(f"covariates must have {DOSE_DIM} columns")
        n = X.shape[0]
    latent = treatment_logit(X) + 0.5 * rng.standard_normal(n)
    T = expit(-latent)
    Y = outcome_mean(T, X) + 0.5 * rng.standard_normal(n)

    oracle = make_rng(seed, 1)
    X_mc = draw_covariates(oracle, mc_n)
    return DoseResponseWorld(
        X, T, Y,
        mc_effect=covariate_effect(X_mc),
        mc_noise=0.5 * oracle.standard_normal(mc_n),
        mc_logit=treatment_logit(X_mc),
        descriptor={"name": "dose_response", "n": n, "seed": seed, "mc_n": mc_n},
    )


# ---------------------------------------------------------------------------
# covariate shift

@dataclass(frozen=True, eq=False)
class ShiftSplit:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    train_index: np.ndarray
    test_index: np.ndarray
    selection_prob: np.ndarray
    omega: np.ndarray


def gen_covariate_shift(X, y, seed: int = 0, max_redraws: int = 10) -> ShiftSplit:
    """Biased train/test split: a row enters the training set with
    probability ``sigmoid(4 w.(x - xbar) / sd)`` for a random ``w`` uniform
    on ``[-1, 1]^d``; the remaining rows form the test set."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    if X.shape[0] < 20:
        raise ValueError("need at least 20 rows")
    rng = make_rng(seed)
    centred = X - X.mean(axis=0)
    for _ in range(max_redraws):
        omega = rng.uniform(-1.0, 1.0, size=X.shape[1])
        proj = centred @ omega
        sd = proj.std()
        if sd > 0:
            break
    else:
        raise ValueError("selection projection is constant for every drawn direction")
    prob = expit(4.0 * proj / sd)
    selected = rng.uniform(size=X.shape[0]) < prob
    train, test = np.flatnonzero(selected), np.flatnonzero(~selected)
    return ShiftSplit(X[train], y[train], X[test], y[test], train, test, prob, omega)


def friedman_response(X) -> np.ndarray:
    X = np.asarray(X, float)
    return (10.0 * np.sin(np.pi * X[:, 0] * X[:, 1]) + 20.0 * (X[:, 2] - 0.5) ** 2
            + 10.0 * X[:, 3] + 5.0 * X[:, 4])


def gen_friedman(n: int = 2000, noise_sd: float = 1.0, seed: int = 0):
    if n < 1:
        raise ValueError("n must be positive")
    rng = make_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, 10))
    y = friedman_response(X) + noise_sd * rng.standard_normal(n)
    return X, y


# ---------------------------------------------------------------------------
# CSV ingestion

class CSVFormatError(ValueError):
    pass


def read_csv_table(path, columns=None, target: str | None = None):
    """Read a numeric CSV with a header row.

    Returns ``(X, y, names)``: ``X`` holds ``columns`` (default: every column
    except ``target``), ``y`` the target column or ``None``. Any row with a
    non-finite or unparseable value is rejected, listing file line numbers.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CSVFormatError(f"{path}: empty file") from None
        rows = [(reader.line_num, row) for row in reader if row and any(cell.strip() for cell in row)]

    if target is not None and target not in header:
        raise CSVFormatError(f"{path}: target column {target!r} not found (columns: {', '.join(header)})")
    if columns is None:
        columns = [h for h in header if h != target]
    missing = [c for c in columns if c not in header]
    if missing:
        raise CSVFormatError(f"{path}: column(s) {', '.join(map(repr, missing))} not found")
    idx = [header.index(c) for c in columns]

    values, bad = [], []
    for line, row in rows:
        if len(row) != len(header):
            bad.append(line)
            continue
        try:
            vals = [float(cell) for cell in row]
        except ValueError:
            bad.append(line)
            continue
        if not all(math.isfinite(v) for v in vals):
            bad.append(line)
            continue
        values.append(vals)
    if bad:
        raise CSVFormatError(f"{path}: non-numeric or non-finite values on line(s) {', '.join(map(str, bad))}")
    data = np.array(values, float).reshape(len(values), len(header))
    X = data[:, idx]
    y = data[:, header.index(target)] if target is not None else None
    return X, y, list(columns)

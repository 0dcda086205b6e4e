"""Projection pursuit density ratio estimation.

The ratio ``p(x) / q(x)`` is modelled as a product of univariate factors,

    r_K(x) = prod_k f_k(a_k . x),    f_k(z) = beta_k . Phi(z; gamma_k),

fitted one factor at a time against the squared-loss criterion

    L_k(a, beta) = mean_q[r_{k-1}^2 (beta . Phi)^2] - 2 mean_p[r_{k-1} (beta . Phi)]
                   + lam * |beta|^2.

For fixed direction ``a`` and centers ``gamma`` the criterion is quadratic in
``beta`` and is minimized in closed form; ``(a, gamma)`` are then moved by
Adam with ``beta`` held at its profiled value, and ``a`` is projected back to
the unit sphere after every step.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .basis import GaussianBasis, gaussian_features, init_centers
from .numerics import AdamState, NotPositiveDefiniteError, adam_step, make_rng, spd_solve

logger = logging.getLogger(__name__)


class SingularProfileError(np.linalg.LinAlgError):
    pass


class DegenerateProjectionError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Projection:
    """One fitted factor ``max(beta . Phi(a . x; gamma), floor)``."""

    a: np.ndarray
    basis: GaussianBasis
    beta: np.ndarray
    floor: float
    info: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).ravel()
        beta = np.asarray(self.beta, dtype=float).ravel()
        if abs(np.linalg.norm(a) - 1.0) > 1e-10:
            raise ValueError("projection direction must have unit norm")
        if beta.size != self.basis.size:
            raise ValueError("beta and basis sizes differ")
        if not np.all(np.isfinite(beta)):
            raise ValueError("beta must be finite")
        if not self.floor > 0:
            raise ValueError("truncation floor must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "floor", float(self.floor))

    @classmethod
    def from_arrays(cls, a, gamma, beta, floor, info=None) -> "Projection":
        """Build a projection from unsorted centers, keeping ``beta`` aligned."""
        gamma = np.asarray(gamma, dtype=float).ravel()
        beta = np.asarray(beta, dtype=float).ravel()
        order = np.argsort(gamma, kind="stable")
        return cls(a, GaussianBasis(gamma[order]), beta[order], floor, info or {})

    @property
    def gamma(self) -> np.ndarray:
        return self.basis.centers

    @property
    def d(self) -> int:
        return self.a.size

    def raw(self, X) -> np.ndarray:
        """Untruncated factor values ``beta . Phi(a . x)``."""
        return self.basis.eval(np.asarray(X, dtype=float) @ self.a) @ self.beta

    def __call__(self, X) -> np.ndarray:
        return np.maximum(self.raw(X), self.floor)


def canonicalize(proj: Projection) -> Projection:
    """Flip ``(a, gamma)`` to ``(-a, -gamma)`` so that the first nonzero entry
    of ``a`` is positive. The factor as a function of ``x`` is unchanged
    because the Gaussian bump is even."""
    nz = np.flatnonzero(proj.a)
    if nz.size == 0 or proj.a[nz[0]] > 0:
        return proj
    return Projection.from_arrays(-proj.a, -proj.gamma, proj.beta, proj.floor, proj.info)


@dataclass(frozen=True, eq=False)
class PPRatioModel:
    d: int
    projections: tuple = ()

    def __post_init__(self):
        projections = tuple(self.projections)
        for p in projections:
            if p.d != self.d:
                raise ValueError(f"projection of dimension {p.d} in a model of dimension {self.d}")
        object.__setattr__(self, "projections", projections)

    @property
    def K(self) -> int:
        return len(self.projections)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ValueError(f"expected inputs with {self.d} columns, got shape {X.shape}")
        return X

    def factors(self, X, truncate: bool = True) -> np.ndarray:
        """Per-projection factor values, shape ``(n, K)``."""
        X = self._check(X)
        out = np.ones((X.shape[0], self.K))
        for k, p in enumerate(self.projections):
            out[:, k] = p(X) if truncate else p.raw(X)
        return out

    def evaluate(self, X, truncate: bool = True) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        vals = np.prod(self.factors(X, truncate), axis=1)
        return vals[0] if X.ndim == 1 else vals

    __call__ = evaluate

    def extend(self, proj: Projection) -> "PPRatioModel":
        return PPRatioModel(self.d, self.projections + (proj,))

    def truncated(self, K: int) -> "PPRatioModel":
        return PPRatioModel(self.d, self.projections[:K])

    # serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "method": "ppdre",
            "d": self.d,
            "K": self.K,
            "projections": [
                {
                    "a": p.a.tolist(),
                    "gamma": p.gamma.tolist(),
                    "beta": p.beta.tolist(),
                    "floor": p.floor,
                }
                for p in self.projections
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PPRatioModel":
        if doc.get("method", "ppdre") != "ppdre":
            raise ValueError(f"not a ppdre model: {doc.get('method')!r}")
        projections = [
            Projection(np.array(p["a"]), GaussianBasis(np.array(p["gamma"])), np.array(p["beta"]), p["floor"])
            for p in doc["projections"]
        ]
        if doc.get("K", len(projections)) != len(projections):
            raise ValueError("K does not match the number of projections")
        return cls(int(doc["d"]), projections)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameters of one ppDRE fit.

    ``J``, ``lam`` and ``lr`` default to values inside the standard search
    grid; ``truncate_weights=False`` feeds the untruncated previous model into
    the next factor's loss (ablation only).
    """

    J: int = 50
    lam: float = 1.0
    lr: float = 0.01
    max_inner_iters: int = 2000
    rel_tol: float = 1e-5
    window: int = 5
    seed: int = 0
    truncate_weights: bool = True

    def __post_init__(self):
        if self.J < 1:
            raise ValueError("J must be at least 1")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.lr <= 0 or self.rel_tol <= 0:
            raise ValueError("lr and rel_tol must be positive")
        if self.max_inner_iters < 1 or self.window < 1:
            raise ValueError("iteration limits must be positive")


# ---------------------------------------------------------------------------
# criterion pieces

def _design(a, gamma, X):
    return gaussian_features(X @ a, gamma)


def _profile_system(a, gamma, lam, w_q, w_p, X_q, X_p):
    Z = w_q[:, None] * _design(a, gamma, X_q)
    W = _design(a, gamma, X_p).T @ w_p
    A = Z.T @ Z / X_q.shape[0]
    A = 0.5 * (A + A.T) + lam * np.eye(gamma.size)
    return A, W / X_p.shape[0]


def _solve_profile(A, rhs, lam):
    try:
        return spd_solve(A, rhs)
    except NotPositiveDefiniteError as exc:
        raise SingularProfileError(
            f"singular profile system (lam={lam}, pivot {exc.pivot})"
        ) from exc


def _centers(basis) -> np.ndarray:
    return basis.centers if isinstance(basis, GaussianBasis) else np.asarray(basis, dtype=float)


def profile_beta(a, basis, lam, w_q, w_p, X_q, X_p) -> np.ndarray:
    """Closed-form minimizer in ``beta`` of the criterion at fixed ``(a, gamma)``:
    ``(Z'Z/n_q + lam I)^{-1} W/n_p``."""
    A, rhs = _profile_system(
        np.asarray(a, float), _centers(basis), lam, np.asarray(w_q, float), np.asarray(w_p, float),
        np.asarray(X_q, float), np.asarray(X_p, float),
    )
    return _solve_profile(A, rhs, lam)


def empirical_loss(a, basis, beta, lam, w_q, w_p, X_q, X_p) -> float:
    gamma = _centers(basis)
    beta = np.asarray(beta, float)
    s_q = _design(np.asarray(a, float), gamma, np.asarray(X_q, float)) @ beta
    s_p = _design(np.asarray(a, float), gamma, np.asarray(X_p, float)) @ beta
    w_q = np.asarray(w_q, float)
    w_p = np.asarray(w_p, float)
    return float(np.mean((w_q * s_q) ** 2) - 2.0 * np.mean(w_p * s_p) + lam * beta @ beta)


def _criterion_terms(a, gamma, beta, w_q, w_p, X_q, X_p):
    """Basis values, their z-derivatives and dL/ds for both samples, where
    ``s`` is the factor value at each sample point."""
    diff_q = (X_q @ a)[:, None] - gamma
    diff_p = (X_p @ a)[:, None] - gamma
    E_q, E_p = np.exp(-0.5 * diff_q * diff_q), np.exp(-0.5 * diff_p * diff_p)
    D_q, D_p = -diff_q * E_q, -diff_p * E_p
    u_q = (2.0 / X_q.shape[0]) * w_q * w_q * (E_q @ beta)
    u_p = (-2.0 / X_p.shape[0]) * w_p
    return E_q, E_p, D_q, D_p, u_q, u_p


def _grads_from_terms(beta, X_q, X_p, D_q, D_p, u_q, u_p):
    grad_a = X_q.T @ (u_q * (D_q @ beta)) + X_p.T @ (u_p * (D_p @ beta))
    grad_gamma = -beta * (D_q.T @ u_q + D_p.T @ u_p)
    return grad_a, grad_gamma


def loss_grad(a, basis, beta, lam, w_q, w_p, X_q, X_p):
    """Gradient of the criterion in ``(a, gamma)`` with ``beta`` held fixed."""
    beta = np.asarray(beta, float)
    X_q, X_p = np.asarray(X_q, float), np.asarray(X_p, float)
    _, _, D_q, D_p, u_q, u_p = _criterion_terms(
        np.asarray(a, float), _centers(basis), beta, np.asarray(w_q, float), np.asarray(w_p, float), X_q, X_p
    )
    return _grads_from_terms(beta, X_q, X_p, D_q, D_p, u_q, u_p)


# ---------------------------------------------------------------------------
# fitting

def _basis_and_slope(z, gamma):
    """Return ``(E, G)`` with ``E = exp(-(z-c)^2/2)`` and ``G = (z-c) * E``,
    i.e. minus the z-derivative of ``E``; computed with two n-by-J buffers."""
    G = np.subtract.outer(z, gamma)
    E = G * G
    E *= -0.5
    np.exp(E, out=E)
    G *= E
    return E, G


def _gram(Z, scale):
    C = Z.T @ Z
    C += C.T
    C *= 0.5 * scale
    return C


def _step_terms(a, gamma, lam, w_q, w_p, X_q, X_p, unit_q=False):
    """Profile beta at ``(a, gamma)`` and return it with the loss and the
    ``(a, gamma)`` gradient, sharing one pass of basis evaluations."""
    n_q, n_p = X_q.shape[0], X_p.shape[0]
    E_q, G_q = _basis_and_slope(X_q @ a, gamma)
    E_p, G_p = _basis_and_slope(X_p @ a, gamma)
    A = _gram(E_q if unit_q else E_q * w_q[:, None], 1.0 / n_q)
    A[np.diag_indices_from(A)] += lam
    rhs = (w_p @ E_p) / n_p
    beta = _solve_profile(A, rhs, lam)
    loss = float(beta @ A @ beta - 2.0 * beta @ rhs)
    u_q = (2.0 / n_q) * w_q * w_q * (E_q @ beta)
    u_p = (-2.0 / n_p) * w_p
    # D = -G, so both chain-rule terms flip sign
    grad_a = -(X_q.T @ (u_q * (G_q @ beta)) + X_p.T @ (u_p * (G_p @ beta)))
    grad_gamma = beta * (u_q @ G_q + u_p @ G_p)
    return beta, loss, grad_a, grad_gamma


def _prev_weights(model: PPRatioModel, X, cfg: FitConfig) -> np.ndarray:
    return model.evaluate(X, truncate=cfg.truncate_weights) if model.K else np.ones(X.shape[0])


def fit_projection(prev_model: PPRatioModel, X_q, X_p, cfg: FitConfig, index: int | None = None) -> Projection:
    """Fit one factor against the current model ``prev_model``.

    Alternates the closed-form beta update with one Adam step on
    ``(a, gamma)`` until the profiled loss changes by less than ``rel_tol``
    (relative) across ``window`` iterations, or ``max_inner_iters`` is hit.
    The iterate with the lowest profiled loss is returned, canonicalized onto
    the upper hemisphere, with its truncation floor set to the smallest
    positive factor value over the pooled training inputs.
    """
    X_q = np.asarray(X_q, dtype=float)
    X_p = np.asarray(X_p, dtype=float)
    if X_q.shape[0] < 2 or X_p.shape[0] < 2:
        raise ValueError("need at least two rows in each sample")
    d = X_q.shape[1]
    if X_p.shape[1] != d or prev_model.d != d:
        raise ValueError("sample dimensions disagree")
    index = prev_model.K if index is None else index
    rng = make_rng(cfg.seed, index)

    w_q = _prev_weights(prev_model, X_q, cfg)
    w_p = _prev_weights(prev_model, X_p, cfg)
    unit_q = bool(np.all(w_q == 1.0))
    pooled = np.vstack([X_q, X_p])

    a = rng.standard_normal(d)
    a /= np.linalg.norm(a)
    gamma = init_centers(rng, cfg.J, pooled @ a).centers.copy()
    start_gamma = gamma.copy()
    state = AdamState.zeros(d + cfg.J)

    history: list[float] = []
    best = None
    converged = False
    for t in range(cfg.max_inner_iters):
        beta, loss, g_a, g_gamma = _step_terms(a, gamma, cfg.lam, w_q, w_p, X_q, X_p, unit_q)
        history.append(loss)
        if best is None or loss < best[3]:
            best = (a.copy(), gamma.copy(), beta, loss)
        if t >= cfg.window:
            ref = history[-1 - cfg.window]
            if abs(loss - ref) <= cfg.rel_tol * max(abs(ref), 1e-12):
                converged = True
                break
        params, state = adam_step(np.concatenate([a, gamma]), np.concatenate([g_a, g_gamma]), state, cfg.lr)
        a = params[:d]
        norm = np.linalg.norm(a)
        if not norm > 0:
            raise DegenerateProjectionError("projection direction collapsed to zero")
        a = a / norm
        gamma = params[d:]
    else:
        # the last Adam step has not been scored yet
        beta, loss, _, _ = _step_terms(a, gamma, cfg.lam, w_q, w_p, X_q, X_p, unit_q)
        history.append(loss)
        if loss < best[3]:
            best = (a.copy(), gamma.copy(), beta, loss)

    a, gamma, beta, loss = best
    raw = gaussian_features(pooled @ a, gamma) @ beta
    positive = raw[raw > 0]
    if positive.size == 0:
        raise DegenerateProjectionError(
            f"projection {index}: fitted factor is nonpositive on every training point"
        )
    info = {
        "loss": loss,
        "loss_history": history,
        "n_iter": len(history),
        "converged": converged,
        "gamma_drift": float(np.max(np.abs(np.sort(gamma) - np.sort(start_gamma)))),
    }
    logger.debug("projection %d: loss %.6g after %d iterations", index, loss, len(history))
    return canonicalize(Projection.from_arrays(a, gamma, beta, float(positive.min()), info))


def fit_path(X_p, X_q, cfg: FitConfig, K: int, start: PPRatioModel | None = None) -> Iterator[PPRatioModel]:
    """Yield the fitted models with 1, 2, ..., K projections."""
    X_p = np.asarray(X_p, dtype=float)
    X_q = np.asarray(X_q, dtype=float)
    if X_p.ndim != 2 or X_q.ndim != 2 or X_p.shape[1] != X_q.shape[1]:
        raise ValueError("samples must be 2-d arrays with the same number of columns")
    if X_p.shape[0] == 0 or X_q.shape[0] == 0:
        raise ValueError("samples must be nonempty")
    model = start if start is not None else PPRatioModel(X_p.shape[1])
    for _ in range(K):
        model = model.extend(fit_projection(model, X_q, X_p, cfg))
        yield model


def fit(X_p, X_q, cfg: FitConfig = FitConfig(), K: int = 5) -> PPRatioModel:
    """Fit a ``K``-factor model of ``p/q`` from samples of ``p`` and ``q``."""
    if K < 0:
        raise ValueError("K must be nonnegative")
    X_p = np.asarray(X_p, dtype=float)
    model = PPRatioModel(X_p.shape[1] if X_p.ndim == 2 else 0)
    for model in fit_path(X_p, X_q, cfg, K):
        pass
    return model

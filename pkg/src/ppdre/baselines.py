"""Classical density ratio baselines: uLSIF, KLIEP and a logistic-regression
classifier. All three expose the same call interface as ``PPRatioModel``:
``model(X)`` returns ratio estimates for the rows of ``X``."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .numerics import make_rng, spd_solve

logger = logging.getLogger(__name__)

KLIEP_FLOOR = 1e-12


def gaussian_kernel(x, x_prime, sigma: float) -> float:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    diff = np.asarray(x, float) - np.asarray(x_prime, float)
    return float(np.exp(-(diff @ diff) / (2.0 * sigma * sigma)))


def gaussian_gram(X, centers, sigma: float) -> np.ndarray:
    """``exp(-|x_i - c_l|^2 / (2 sigma^2))`` for all row/center pairs."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    sq = cdist(np.asarray(X, float), np.asarray(centers, float), "sqeuclidean")
    return np.exp(-sq / (2.0 * sigma * sigma))


def median_distance(X_p, X_q, max_rows: int = 1000, seed: int = 0) -> float:
    """Median pairwise distance of the pooled sample, computed on a
    deterministic subsample for large inputs."""
    pooled = np.vstack([X_p, X_q])
    if pooled.shape[0] > max_rows:
        idx = make_rng(seed).choice(pooled.shape[0], max_rows, replace=False)
        pooled = pooled[np.sort(idx)]
    dist = pdist(pooled)
    med = float(np.median(dist[dist > 0])) if np.any(dist > 0) else 1.0
    return med


def _pick_centers(X_p, b, seed):
    n_p = X_p.shape[0]
    b = min(b, n_p)
    idx = make_rng(seed).choice(n_p, b, replace=False)
    return X_p[np.sort(idx)]


@dataclass(frozen=True, eq=False)
class KernelRatioModel:
    """``theta . psi(x)`` with Gaussian kernels at ``centers``.

    ``kind`` selects the lower clamp used at evaluation: 0 for uLSIF and
    ``KLIEP_FLOOR`` for KLIEP so that logs of the output stay finite.
    """

    centers: np.ndarray
    sigma: float
    theta: np.ndarray
    kind: str = "ulsif"
    info: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.kind not in ("ulsif", "kliep"):
            raise ValueError(f"unknown kernel model kind {self.kind!r}")
        centers = np.atleast_2d(np.asarray(self.centers, float))
        theta = np.asarray(self.theta, float).ravel()
        if theta.size != centers.shape[0]:
            raise ValueError("theta and centers sizes differ")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "theta", theta)

    @property
    def d(self) -> int:
        return self.centers.shape[1]

    @property
    def method(self) -> str:
        return self.kind

    def evaluate(self, X):
        X = np.asarray(X, float)
        single = X.ndim == 1
        X2 = np.atleast_2d(X)
        if X2.shape[1] != self.d:
            raise ValueError(f"expected inputs with {self.d} columns, got {X2.shape[1]}")
        vals = gaussian_gram(X2, self.centers, self.sigma) @ self.theta
        vals = np.maximum(vals, 0.0 if self.kind == "ulsif" else KLIEP_FLOOR)
        return vals[0] if single else vals

    __call__ = evaluate

    def to_dict(self) -> dict:
        return {
            "method": self.kind,
            "d": self.d,
            "sigma": self.sigma,
            "centers": self.centers.tolist(),
            "theta": self.theta.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "KernelRatioModel":
        return cls(np.array(doc["centers"], float), float(doc["sigma"]), np.array(doc["theta"], float), doc["method"])


def ulsif_fit(X_p, X_q, sigma: float, lam: float, b: int = 100, seed: int = 0) -> KernelRatioModel:
    """Unconstrained least-squares importance fitting.

    Solves ``(H + lam I) theta = h`` with ``H = mean_q psi psi'`` and
    ``h = mean_p psi``, then sets negative coefficients to zero.
    """
    X_p, X_q = np.asarray(X_p, float), np.asarray(X_q, float)
    if sigma <= 0 or lam <= 0:
        raise ValueError("sigma and lam must be positive")
    if b > X_p.shape[0]:
        raise ValueError("more centers requested than numerator rows")
    centers = _pick_centers(X_p, b, seed)
    psi_q = gaussian_gram(X_q, centers, sigma)
    psi_p = gaussian_gram(X_p, centers, sigma)
    H = psi_q.T @ psi_q / X_q.shape[0]
    H = 0.5 * (H + H.T)
    h = psi_p.mean(axis=0)
    system = H + lam * np.eye(H.shape[0])
    theta_raw = spd_solve(system, h)
    theta = np.maximum(theta_raw, 0.0)
    info = {"theta_raw": theta_raw, "residual": float(np.linalg.norm(system @ theta_raw - h))}
    return KernelRatioModel(centers, sigma, theta, "ulsif", info)


def kliep_fit(X_p, X_q, sigma: float, b: int = 100, lr: float = 1e-3, iters: int = 2000,
              seed: int = 0, tol: float = 1e-8) -> KernelRatioModel:
    """Kullback-Leibler importance estimation by projected gradient ascent.

    Maximizes ``mean_p log(theta . psi)`` subject to ``mean_q theta . psi = 1``
    and ``theta >= 0``. A step that lowers the objective is rejected and the
    step size halved.
    """
    X_p, X_q = np.asarray(X_p, float), np.asarray(X_q, float)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    centers = _pick_centers(X_p, b, seed)
    psi_p = gaussian_gram(X_p, centers, sigma)
    c = gaussian_gram(X_q, centers, sigma).mean(axis=0)
    cc = c @ c
    clamped = False

    def objective(theta):
        nonlocal clamped
        vals = psi_p @ theta
        if np.any(vals <= 0):
            clamped = True
            vals = np.maximum(vals, KLIEP_FLOOR)
        return float(np.mean(np.log(vals))), vals

    def project(theta):
        theta = theta + c * (1.0 - c @ theta) / cc
        theta = np.maximum(theta, 0.0)
        s = c @ theta
        if s <= 0:
            theta = np.ones_like(theta)
            s = c @ theta
        return theta / s

    theta = project(np.ones(centers.shape[0]))
    obj, vals = objective(theta)
    history = [obj]
    step = lr
    for _ in range(iters):
        grad = psi_p.T @ (1.0 / vals) / X_p.shape[0]
        cand = project(theta + step * grad)
        cand_obj, cand_vals = objective(cand)
        if cand_obj >= obj:
            improvement = cand_obj - obj
            theta, obj, vals = cand, cand_obj, cand_vals
            history.append(obj)
            if improvement < tol * max(1.0, abs(obj)):
                break
        else:
            step *= 0.5
            if step < 1e-12 * lr:
                break
    if clamped:
        logger.warning("kliep: nonpositive fitted value on the numerator sample was clamped")
    info = {"objective_history": history, "clamped": clamped, "constraint": float(c @ theta)}
    return KernelRatioModel(centers, sigma, theta, "kliep", info)


@dataclass(frozen=True, eq=False)
class LogisticRatioModel:
    """Ratio from a linear logistic classifier separating p (label 1) from
    q (label 0): ``(n_q / n_p) * P(1|x) / P(0|x)``."""

    w: np.ndarray
    b: float
    prior: float
    info: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        w = np.asarray(self.w, float).ravel()
        if not (np.all(np.isfinite(w)) and np.isfinite(self.b) and np.isfinite(self.prior)):
            raise ValueError("logistic parameters must be finite")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "prior", float(self.prior))

    @property
    def d(self) -> int:
        return self.w.size

    method = "logistic"

    def evaluate(self, X):
        X = np.asarray(X, float)
        single = X.ndim == 1
        X2 = np.atleast_2d(X)
        if X2.shape[1] != self.d:
            raise ValueError(f"expected inputs with {self.d} columns, got {X2.shape[1]}")
        # p / (1 - p) is exp of the logit
        vals = self.prior * np.exp(X2 @ self.w + self.b)
        return vals[0] if single else vals

    __call__ = evaluate

    def to_dict(self) -> dict:
        return {"method": "logistic", "d": self.d, "w": self.w.tolist(), "b": self.b, "prior": self.prior}

    @classmethod
    def from_dict(cls, doc: dict) -> "LogisticRatioModel":
        return cls(np.array(doc["w"], float), doc["b"], doc["prior"])


def logistic_ratio_fit(X_p, X_q, lr: float = 0.5, iters: int = 2000, seed: int = 0,
                       max_norm: float = 50.0) -> LogisticRatioModel:
    """Full-batch gradient descent on the cross-entropy of the p-vs-q
    classifier. Inputs are standardized internally and the coefficients
    mapped back to the original scale."""
    X_p, X_q = np.asarray(X_p, float), np.asarray(X_q, float)
    if X_p.shape[0] == 0 or X_q.shape[0] == 0:
        raise ValueError("both samples must be nonempty")
    X = np.vstack([X_p, X_q])
    y = np.concatenate([np.ones(X_p.shape[0]), np.zeros(X_q.shape[0])])
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Xs = (X - mu) / sd

    rng = make_rng(seed)
    w = 1e-3 * rng.standard_normal(X.shape[1])
    b = 0.0
    n = X.shape[0]
    clipped = False
    tail_start = iters - max(iters // 10, 1)
    tail_norm = 0.0
    for it in range(iters):
        logit = Xs @ w + b
        prob = 0.5 * (1.0 + np.tanh(0.5 * logit))
        resid = prob - y
        w = w - lr * (Xs.T @ resid) / n
        b = b - lr * resid.mean()
        norm = np.linalg.norm(w)
        if norm > max_norm:
            w *= max_norm / norm
            clipped = True
        if it == tail_start:
            tail_norm = float(np.hypot(np.linalg.norm(w), b))
    logit = Xs @ w + b
    loss = float(np.mean(np.logaddexp(0.0, logit) - y * logit))
    # gradient descent on separable data drives the loss to zero only at a
    # logarithmic rate, so a perfect training classification with still
    # growing coefficients (or a clipped norm) also counts as separation
    perfect = bool(np.all((logit > 0) == (y == 1)))
    growing = np.hypot(np.linalg.norm(w), b) > tail_norm * (1 + 1e-3)
    separated = loss < 1e-6 or (perfect and (clipped or growing))
    if separated:
        warnings.warn("logistic ratio fit: samples look linearly separable", RuntimeWarning)
    w_orig = w / sd
    b_orig = b - w_orig @ mu
    info = {"loss": loss, "separated": separated}
    return LogisticRatioModel(w_orig, b_orig, X_q.shape[0] / X_p.shape[0], info)


def kernel_evaluate(model, x):
    """Evaluate a uLSIF, KLIEP or logistic ratio model at ``x``."""
    return model.evaluate(x)

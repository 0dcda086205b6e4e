"""Consumers of a fitted ratio: mutual information, weighted dose-response
curves and importance-weighted kernel ridge regression."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .numerics import AdamState, adam_step, spd_solve

DEGREE = 4


def estimate_mi(ratio_model, joint_sample) -> float:
    """Mean log ratio over the joint sample."""
    r = np.asarray(ratio_model(np.asarray(joint_sample, float)), float)
    if np.any(r <= 0) or not np.all(np.isfinite(r)):
        raise ValueError("ratio model returned a nonpositive or non-finite value")
    return float(np.mean(np.log(r)))


# ---------------------------------------------------------------------------
# dose response

def quartic_design(t) -> np.ndarray:
    return np.vander(np.asarray(t, float).ravel(), DEGREE + 1, increasing=True)


@dataclass(frozen=True, eq=False)
class DoseResponseFit:
    theta: np.ndarray
    loss: str = "squared"
    tau: float | None = None
    info: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta must be finite")
        if self.loss == "pinball" and not (self.tau is not None and 0 < self.tau < 1):
            raise ValueError("tau must lie in (0, 1)")

    def __call__(self, t):
        return quartic_design(t) @ self.theta


def _check_weights(weights, n):
    w = np.asarray(weights, float).ravel()
    if w.size != n:
        raise ValueError("weights and data lengths differ")
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be nonnegative and not all zero")
    return w


def fit_adrf(T, Y, weights) -> DoseResponseFit:
    """Weighted least squares for the quartic dose-response curve.

    Solved by least squares on the row-scaled design rather than through the
    normal equations, whose monomial Gram matrix is badly conditioned; the
    normal-equation residual, relative to the system's scale, is reported in ``info``.
    """
    T, Y = np.asarray(T, float).ravel(), np.asarray(Y, float).ravel()
    w = _check_weights(weights, T.size)
    Phi = quartic_design(T)
    sw = np.sqrt(w)
    theta, _, rank, _ = np.linalg.lstsq(sw[:, None] * Phi, sw * Y, rcond=None)
    if rank < DEGREE + 1:
        raise np.linalg.LinAlgError(
            f"rank-deficient dose-response design: rank {rank} < {DEGREE + 1} (too few distinct weighted doses)"
        )
    A = Phi.T @ (w[:, None] * Phi)
    rhs = Phi.T @ (w * Y)
    scale = max(float(np.abs(rhs).max()), float(np.abs(A).max()), 1e-300)
    return DoseResponseFit(theta, "squared", None, {"residual": float(np.linalg.norm(A @ theta - rhs) / scale)})


def smoothed_pinball(v, tau: float, h: float):
    """Pinball loss with the kink replaced by a quadratic on ``|v| <= h``.
    Returns ``(loss, derivative)`` elementwise."""
    v = np.asarray(v, float)
    inside = np.abs(v) <= h
    absv = np.where(inside, v * v / (2 * h) + h / 2, np.abs(v))
    dabs = np.where(inside, v / h, np.sign(v))
    return (tau - 0.5) * v + 0.5 * absv, (tau - 0.5) + 0.5 * dabs


def fit_qdrf(T, Y, weights, tau: float, h: float | None = None, lr: float = 0.05,
             iters: int = 3000, init: DoseResponseFit | None = None) -> DoseResponseFit:
    """Weighted quartic quantile curve by Adam on the smoothed pinball loss.

    The optimization runs in the coordinates of an orthonormalized design
    (same fitted curves, far better conditioned than raw monomials) and
    starts from the weighted least-squares curve unless ``init`` is given.
    ``h`` defaults to ``0.05 * std(Y)``.
    """
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    T, Y = np.asarray(T, float).ravel(), np.asarray(Y, float).ravel()
    w = _check_weights(weights, T.size)
    h = 0.05 * float(np.std(Y)) if h is None else h
    if h <= 0:
        h = 1e-8
    w = w / w.sum()

    Phi = quartic_design(T)
    Q, R = np.linalg.qr(Phi)
    start = init if init is not None else fit_adrf(T, Y, w)
    eta = R @ start.theta

    def objective(eta):
        loss, dloss = smoothed_pinball(Y - Q @ eta, tau, h)
        return float(w @ loss), -(Q.T @ (w * dloss))

    loss0, grad = objective(eta)
    best_eta, best_loss = eta.copy(), loss0
    state = AdamState.zeros(eta.size)
    scale = max(float(np.std(Y)), 1e-12)
    for _ in range(iters):
        eta, state = adam_step(eta, grad / scale, state, lr * scale)
        loss, grad = objective(eta)
        if not np.isfinite(loss) or loss > 1e6:
            raise FloatingPointError(f"quantile fit diverged (loss {loss})")
        if loss < best_loss:
            best_eta, best_loss = eta.copy(), loss
    theta = np.linalg.solve(R, best_eta)
    return DoseResponseFit(theta, "pinball", tau, {"loss": best_loss, "initial_loss": loss0, "h": h})


# ---------------------------------------------------------------------------
# importance-weighted kernel ridge regression

def krr_kernel(X, Z) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, float))
    return np.exp(-cdist(X, np.atleast_2d(np.asarray(Z, float)), "sqeuclidean") / X.shape[1])


@dataclass(frozen=True, eq=False)
class KRRModel:
    X_train: np.ndarray
    theta: np.ndarray
    lam: float
    info: dict = field(default_factory=dict, repr=False)

    def __call__(self, X):
        X = np.asarray(X, float)
        single = X.ndim == 1
        X2 = np.atleast_2d(X)
        if X2.shape[1] != self.X_train.shape[1]:
            raise ValueError(f"expected inputs with {self.X_train.shape[1]} columns, got {X2.shape[1]}")
        out = krr_kernel(X2, self.X_train) @ self.theta
        return out[0] if single else out


def krr_objective(theta, K, y, w, lam) -> float:
    """``mean_i w_i [ (K theta - y)_i^2 + lam |theta|^2 ]``."""
    resid = K @ theta - y
    return float(np.mean(w * (resid * resid + lam * theta @ theta)))


def krr_fit(X_tr, y_tr, weights=None, lam: float = 1e-2, K=None) -> KRRModel:
    """Importance-weighted kernel ridge regression.

    The ridge term sits inside the weighted average, so the stationarity
    condition is ``(K W K + lam s I) theta = K W y`` with ``W = diag(w)/n``
    and ``s = mean(w)``: the effective ridge scales with the mean weight.
    """
    X_tr = np.asarray(X_tr, float)
    y_tr = np.asarray(y_tr, float).ravel()
    n = X_tr.shape[0]
    w = np.ones(n) if weights is None else _check_weights(weights, n)
    if lam <= 0:
        raise ValueError("lam must be positive")
    K = krr_kernel(X_tr, X_tr) if K is None else K
    KW = K * (w / n)[None, :]
    A = KW @ K
    A = 0.5 * (A + A.T)
    s = w.mean()
    A[np.diag_indices_from(A)] += lam * s
    rhs = KW @ y_tr
    theta = spd_solve(A, rhs)
    return KRRModel(X_tr, theta, lam, {"residual": float(np.linalg.norm(A @ theta - rhs))})


def krr_predict(model: KRRModel, x):
    return model(x)


KRR_LAMBDAS = (1e-4, 1e-3, 1e-2, 0.1, 1.0)


def krr_select_lambda(X_tr, y_tr, weights=None, lambdas=KRR_LAMBDAS, k: int = 5, seed: int = 0):
    """Importance-weighted k-fold CV for the ridge strength. Returns
    ``(best_lambda, mean_scores)``; the score of a fold is the weighted mean
    squared error on its held-out rows."""
    from .selection import kfold_split

    X_tr = np.asarray(X_tr, float)
    y_tr = np.asarray(y_tr, float).ravel()
    n = X_tr.shape[0]
    w = np.ones(n) if weights is None else _check_weights(weights, n)
    folds = kfold_split(n, n, k, seed).folds_q
    K_full = krr_kernel(X_tr, X_tr)
    scores = np.zeros(len(lambdas))
    for f in range(k):
        tr, va = np.flatnonzero(folds != f), np.flatnonzero(folds == f)
        K_tr = K_full[np.ix_(tr, tr)]
        for j, lam in enumerate(lambdas):
            model = krr_fit(X_tr[tr], y_tr[tr], w[tr], lam, K=K_tr)
            pred = K_full[np.ix_(va, tr)] @ model.theta
            wv = w[va]
            scores[j] += float(wv @ (pred - y_tr[va]) ** 2) / max(wv.sum(), 1e-300)
    scores /= k
    return float(lambdas[int(np.argmin(scores))]), scores

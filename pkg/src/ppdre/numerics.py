"""Low-level numerics shared by every estimator.

Ridge systems are solved through a Cholesky factorization, the optimizer is a
plain full-batch Adam, and all randomness comes from numpy's PCG64 generator
seeded through ``SeedSequence`` so that child streams can be derived from a
parent seed plus integer keys.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import lapack


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a Cholesky factorization meets a non-positive pivot."""

    def __init__(self, pivot: int):
        self.pivot = pivot
        super().__init__(f"matrix is not positive definite (pivot {pivot})")


class NonFiniteGradientError(FloatingPointError):
    pass


def spd_solve(A, b):
    """Solve ``A x = b`` for a symmetric positive-definite ``A``.

    ``b`` may be a vector or a matrix of right-hand sides. Raises
    :class:`NotPositiveDefiniteError` carrying the (0-based) index of the first
    failing pivot.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if b.shape[0] != A.shape[0]:
        raise ValueError(f"right-hand side has {b.shape[0]} rows, matrix has {A.shape[0]}")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    if not np.all(np.isfinite(A)) or not np.all(np.isfinite(b)):
        raise ValueError("non-finite entries in linear system")

    c, info = lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(info - 1)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    x, info = lapack.dpotrs(c, b, lower=1)
    if info != 0:
        raise ValueError(f"dpotrs: illegal argument {-info}")
    return x


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, **kwargs) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), **kwargs)

    def copy(self) -> "AdamState":
        return replace(self, m=self.m.copy(), v=self.v.copy())


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``.

    Inputs are not modified.
    """
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if not (params.shape == grads.shape == state.m.shape == state.v.shape):
        raise ValueError("params, grads and optimizer state must have equal shapes")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradientError("non-finite gradient")

    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * (grads * grads)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, m=m, v=v, t=t)


def make_rng(seed, *keys: int) -> np.random.Generator:
    """PCG64 generator for ``seed`` and optional integer stream keys.

    ``make_rng(s, i, j)`` gives a stream independent of ``make_rng(s)`` and of
    ``make_rng(s, i, j')``; this is how grid points and folds get their own
    seeds.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    entropy = [int(seed)] + [int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def standard_normal(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    return rng.standard_normal((n, d))

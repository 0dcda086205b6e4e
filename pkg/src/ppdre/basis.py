"""Gaussian sieve basis with unit bandwidth, phi_j(z) = exp(-(z - c_j)^2 / 2)."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GaussianBasis:
    centers: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        c = np.sort(np.asarray(self.centers, dtype=float).ravel())
        if c.size < 1:
            raise ValueError("basis needs at least one center")
        if not np.all(np.isfinite(c)):
            raise ValueError("basis centers must be finite")
        object.__setattr__(self, "centers", c)

    @property
    def size(self) -> int:
        return self.centers.size

    def eval(self, z):
        """Basis matrix of shape ``z.shape + (J,)``."""
        return gaussian_features(z, self.centers)

    def eval_dz(self, z):
        return gaussian_features_dz(z, self.centers)

    def eval_dgamma(self, z):
        return -gaussian_features_dz(z, self.centers)


def gaussian_features(z, centers):
    diff = np.asarray(z, dtype=float)[..., None] - centers
    return np.exp(-0.5 * diff * diff)


def gaussian_features_dz(z, centers):
    diff = np.asarray(z, dtype=float)[..., None] - centers
    return -diff * np.exp(-0.5 * diff * diff)


def init_centers(rng: np.random.Generator, J: int, projected) -> GaussianBasis:
    """Draw ``J`` centers uniformly over the range of the projected data."""
    projected = np.asarray(projected, dtype=float).ravel()
    if J < 1:
        raise ValueError("J must be at least 1")
    if projected.size < 2:
        raise ValueError("need at least two projected values")
    lo, hi = projected.min(), projected.max()
    if hi == lo:
        warnings.warn("projected data is constant; all centers coincide", RuntimeWarning)
        return GaussianBasis(np.full(J, lo), degenerate=True)
    return GaussianBasis(rng.uniform(lo, hi, size=J))

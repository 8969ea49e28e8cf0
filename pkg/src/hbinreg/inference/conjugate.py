"""Conjugate Gaussian update for probit-type data augmentation."""

from __future__ import annotations

import numpy as np
from scipy import linalg

__all__ = ["conjugate_gaussian_coeff_update", "conjugate_posterior"]


def conjugate_posterior(Z, X, sigma):
    """Mean and precision Cholesky of ``beta | Z`` under ``Z ~ N(X beta, I)``.

    Prior ``beta ~ N(0, sigma^2 I)``; returns ``(mean, L)`` with
    ``L L' = X'X + sigma^-2 I``.
    """
    X = np.asarray(getattr(X, "values", X), dtype=float)
    Z = np.asarray(Z, dtype=float)
    P = X.T @ X + np.eye(X.shape[1]) / sigma**2
    L = linalg.cholesky(P, lower=True)
    mean = linalg.cho_solve((L, True), X.T @ Z)
    return mean, L


def conjugate_gaussian_coeff_update(Z, X, sigma, rng) -> np.ndarray:
    """One draw from ``N(V X'Z, V)``, ``V = (X'X + sigma^-2 I)^-1``."""
    mean, L = conjugate_posterior(Z, X, sigma)
    eps = rng.standard_normal(mean.shape[0])
    return mean + linalg.solve_triangular(L.T, eps, lower=False)

"""Auxiliary-variable representations of binary regression.

A binary response is the indicator that a latent variable ``z`` is positive,
so its success probability is ``1 - F_Z(0)``.  Two auxiliary specifications
are indistinguishable from binary data whenever these probabilities agree
for every covariate value; this module evaluates, compares and constructs
such pairs, and exposes the scaling non-identifiability of binary quantile
regression under an asymmetric Laplace working likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import special

from .errors import (
    SaturationError,
    ShapeError,
    SpecError,
    UndefinedQuantityError,
)
from .glm import LinkFamily, log_likelihood

__all__ = [
    "AUX_FAMILIES",
    "AuxiliarySpec",
    "QuantileModel",
    "ald_cdf",
    "success_probability",
    "check_equivalence",
    "EquivalenceReport",
    "match_nonlinear_systematic",
    "glm_spec",
    "qr_binary_loglik",
    "qr_x_intercept",
    "qr_relative_effect",
    "qr_normalize",
    "heteroskedastic_quantile_coefficients",
]

AUX_FAMILIES = ("gaussian", "logistic", "asymmetric-laplace", "poisson", "negbin")
_COUNT = ("poisson", "negbin")


def _design(x) -> np.ndarray:
    """Promote a 1-d covariate grid to rows ``(1, x)``; pass 2-d through."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if x.ndim == 1:
        return np.column_stack([np.ones_like(x), x])
    return x


@dataclass(frozen=True)
class AuxiliarySpec:
    """Conditional distribution of an auxiliary variable given covariates.

    ``location`` is either a coefficient vector applied to design rows, or a
    callable mapping design rows to the location directly (a non-linear
    systematic component).  Count families use a log link, so for them the
    location is ``log E[z]``.  ``scale`` is a constant, a coefficient vector
    (scale linear in the covariates) or a callable.
    """

    family: str
    location: np.ndarray | Callable
    scale: float | np.ndarray | Callable = 1.0
    skew: float = 0.5
    r_nb: float | None = None

    def __post_init__(self):
        if self.family not in AUX_FAMILIES:
            raise SpecError(f"unknown auxiliary family {self.family!r}")
        if not 0.0 < self.skew < 1.0:
            raise SpecError("asymmetric-Laplace skew must lie in (0, 1)")
        if self.family == "negbin" and (self.r_nb is None or self.r_nb <= 0):
            raise SpecError("negbin auxiliary needs r_nb > 0")
        if self.family in _COUNT and not (
                np.isscalar(self.scale) and self.scale == 1.0):
            raise SpecError("count families have no scale map")
        if not callable(self.location):
            object.__setattr__(self, "location",
                               np.asarray(self.location, dtype=float))

    def location_at(self, x) -> np.ndarray:
        X = _design(x)
        if callable(self.location):
            return np.asarray(self.location(X), dtype=float)
        if X.shape[1] != self.location.shape[0]:
            raise ShapeError("design width does not match location coefficients")
        return X @ self.location

    def scale_at(self, x) -> np.ndarray:
        X = _design(x)
        s = self.scale
        if callable(s):
            out = np.asarray(s(X), dtype=float)
        elif np.ndim(s) == 0:
            out = np.full(X.shape[0], float(s))
        else:
            out = X @ np.asarray(s, dtype=float)
        if np.any(~(out > 0)):
            raise SpecError("scale map must be strictly positive on the grid")
        return out


def ald_cdf(z, location=0.0, scale=1.0, tau=0.5):
    """CDF of the asymmetric Laplace law whose tau-quantile is ``location``."""
    u = (np.asarray(z, dtype=float) - location) / scale
    below = tau * np.exp((1.0 - tau) * np.minimum(u, 0.0))
    above = 1.0 - (1.0 - tau) * np.exp(-tau * np.maximum(u, 0.0))
    return np.where(u < 0, below, above)


def ald_survival(z, location=0.0, scale=1.0, tau=0.5):
    """``1 - ald_cdf`` without cancellation in the upper tail."""
    u = (np.asarray(z, dtype=float) - location) / scale
    below = -np.expm1(np.log(tau) + (1.0 - tau) * np.minimum(u, 0.0))
    above = (1.0 - tau) * np.exp(-tau * np.maximum(u, 0.0))
    return np.where(u < 0, below, above)


def success_probability(spec: AuxiliarySpec, x) -> np.ndarray:
    """``Pr(z > 0)`` for each design row (or 1-d covariate value)."""
    loc = spec.location_at(x)
    fam = spec.family
    if fam == "poisson":
        return -np.expm1(-np.exp(loc))
    if fam == "negbin":
        r = spec.r_nb
        return -np.expm1(-r * np.log1p(np.exp(loc) / r))
    scale = spec.scale_at(x)
    if fam == "gaussian":
        return special.ndtr(loc / scale)
    if fam == "logistic":
        return special.expit(loc / scale)
    return ald_survival(0.0, loc, scale, spec.skew)


def glm_spec(link: LinkFamily, beta) -> AuxiliarySpec:
    """Auxiliary specification reproducing a linear GLM with ``link``."""
    kind = link.kind
    if kind == "probit":
        return AuxiliarySpec("gaussian", beta)
    if kind == "logit":
        return AuxiliarySpec("logistic", beta)
    if kind == "cloglog":
        return AuxiliarySpec("poisson", beta)
    if kind == "negbin":
        return AuxiliarySpec("negbin", beta, r_nb=link.r_nb)
    raise SpecError(f"no auxiliary family corresponds to the {kind} link")


@dataclass(frozen=True)
class EquivalenceReport:
    equivalent: bool
    max_abs_diff: float
    argmax: float


def check_equivalence(a: AuxiliarySpec, b: AuxiliarySpec, grid=None,
                      tol: float = 1e-8) -> EquivalenceReport:
    """Compare the probability curves of two specifications on a grid.

    The default grid is 401 points on ``[-5, 5]``.
    """
    if grid is None:
        grid = np.linspace(-5.0, 5.0, 401)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise SpecError("empty comparison grid")
    diff = np.abs(success_probability(a, grid) - success_probability(b, grid))
    i = int(np.argmax(diff))
    at = grid[i] if grid.ndim == 1 else i
    return EquivalenceReport(bool(diff[i] <= tol), float(diff[i]), float(at))


def match_nonlinear_systematic(target: AuxiliarySpec, base_link: LinkFamily,
                               grid) -> np.ndarray:
    """Systematic component that makes ``base_link`` reproduce ``target``.

    Returns ``eta_b = g_b(p_target(x))`` on the grid.
    """
    p = success_probability(target, grid)
    if np.any(~(p > base_link.lower)) or np.any(~(p < 1.0)):
        raise SaturationError(
            "target probability saturates on the grid; cannot invert link")
    return base_link.link(p)


def matched_spec(target: AuxiliarySpec, base_link: LinkFamily) -> AuxiliarySpec:
    """Companion auxiliary spec with a non-linear location (probit/logit base)."""
    family = {"probit": "gaussian", "logit": "logistic"}.get(base_link.kind)
    if family is None:
        raise SpecError("companion specs are built on probit or logit bases")

    def location(X):
        return match_nonlinear_systematic(target, base_link, X)

    return AuxiliarySpec(family, location)


# ---------------------------------------------------------------------------
# binary quantile regression

@dataclass(frozen=True)
class QuantileModel:
    quantile_level: float
    beta_tau: np.ndarray
    ald_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.quantile_level < 1.0:
            raise SpecError("quantile level must lie in (0, 1)")
        if not self.ald_scale > 0:
            raise SpecError("ALD scale must be positive")
        object.__setattr__(self, "beta_tau",
                           np.asarray(self.beta_tau, dtype=float))

    def scaled(self, k: float) -> "QuantileModel":
        """Jointly rescale coefficients and ALD scale by ``k > 0``."""
        return replace(self, beta_tau=k * self.beta_tau,
                       ald_scale=k * self.ald_scale)

    def success_probability(self, X) -> np.ndarray:
        eta = _design(X) @ self.beta_tau
        return ald_survival(-eta, 0.0, self.ald_scale, self.quantile_level)


def qr_binary_loglik(model: QuantileModel, y, X) -> float:
    """Bernoulli log-likelihood with ``p = 1 - F_ALD(-x'beta(tau); sigma, tau)``."""
    X = getattr(X, "values", X)
    return log_likelihood(y, model.success_probability(X))


def qr_x_intercept(model: QuantileModel | np.ndarray, direction: int = 1) -> float:
    """Root of the tau-quantile plane along one covariate axis."""
    beta = getattr(model, "beta_tau", model)
    beta = np.asarray(beta, dtype=float)
    if beta[direction] == 0:
        raise UndefinedQuantityError(
            "quantile line is parallel to the covariate axis")
    return float(-beta[0] / beta[direction]) + 0.0  # no negative zero


def qr_relative_effect(beta_tau, j: int) -> float:
    """``beta_j / ||beta_{-0}||_2`` with the norm over non-intercept entries."""
    beta = np.asarray(getattr(beta_tau, "beta_tau", beta_tau), dtype=float)
    norm = np.linalg.norm(beta[1:])
    if norm == 0:
        raise UndefinedQuantityError("all non-intercept coefficients are zero")
    return float(beta[j] / norm)


def qr_normalize(model: QuantileModel, constraint: str = "l2",
                 index: int = 1) -> QuantileModel:
    """Project onto an identifying constraint, carrying the ALD scale along.

    ``"l2"`` gives ``||beta(tau)||_2 = 1``; ``"unit"`` gives
    ``beta_index(tau) = 1``.  Both leave the probability curve unchanged.
    """
    if constraint == "l2":
        k = np.linalg.norm(model.beta_tau)
    elif constraint == "unit":
        k = model.beta_tau[index]
    else:
        raise SpecError(f"unknown constraint {constraint!r}")
    if not k > 0:
        raise UndefinedQuantityError(
            "constraint requires a positive normalizing constant")
    return model.scaled(1.0 / k)


def heteroskedastic_quantile_coefficients(beta, gamma, tau) -> np.ndarray:
    """Quantile-line coefficients of ``z ~ N(b0 + b1 x, (g0 + g1 x)^2)``.

    ``Q(z | x, tau) = (b0 + q g0) + (b1 + q g1) x`` with ``q = Phi^{-1}(tau)``;
    returns an array of shape (len(tau), 2).
    """
    q = special.ndtri(np.atleast_1d(np.asarray(tau, dtype=float)))
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    return beta[None, :] + q[:, None] * gamma[None, :]

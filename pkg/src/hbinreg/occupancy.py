"""Occupancy models with imperfect detection.

A site is occupied when its auxiliary variable is positive, and a visit to
an occupied site detects the species when the visit's own auxiliary variable
is positive.  Four formulations are supported:

========  ======================  =====================
kind      occupancy psi_i          detection r_ij
========  ======================  =====================
naive     constant psi            constant r
kr        logistic CDF of x'b     logistic CDF of w'a
poisson   1 - exp(-e^{x'b})       Phi(w'a)
spatial   1 - exp(-e^{x'b + z})   Phi(w'a)
========  ======================  =====================
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ConfigError, ShapeError, StateError, UnsupportedModelError
from .glm import P_CEIL, P_FLOOR

__all__ = [
    "MODEL_KINDS",
    "OccupancyModelSpec",
    "parse_model",
    "psi",
    "detection_prob",
    "site_marginal_loglik",
    "observation_prob",
    "abundance_intensity",
    "sample_occ_indicator",
    "log_psi_pair",
    "log_r_pair",
    "marginal_loglik_sites",
    "occupied_posterior_logit",
]

MODEL_KINDS = ("naive", "kr", "poisson", "spatial")
_PREFIX = {"naive": "N", "kr": "KR", "poisson": "P", "spatial": "SP"}


@dataclass(frozen=True)
class OccupancyModelSpec:
    kind: str
    covariates: str = "L"
    extra_interaction: bool = False

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.covariates not in ("L", "Q"):
            raise ConfigError(f"covariate collection must be L or Q, "
                              f"got {self.covariates!r}")

    @property
    def name(self) -> str:
        if self.kind == "naive":
            return "N"
        return _PREFIX[self.kind] + self.covariates

    @property
    def uses_covariates(self) -> bool:
        return self.kind != "naive"

    @property
    def detection_link(self) -> str:
        return "logit" if self.kind == "kr" else "probit"

    @property
    def occupancy_link(self) -> str:
        return {"kr": "logit", "poisson": "cloglog",
                "spatial": "cloglog"}.get(self.kind, "constant")


def parse_model(text: str, covariates: str | None = None) -> OccupancyModelSpec:
    """Parse ``naive``/``N``, ``krl``, ``pq``, ``spl`` or ``poisson`` + collection."""
    t = text.strip().lower()
    if t in ("n", "naive"):
        return OccupancyModelSpec("naive")
    if t in MODEL_KINDS:
        coll = {"linear": "L", "quadratic": "Q"}.get(covariates, covariates) or "L"
        return OccupancyModelSpec(t, coll.upper())
    for kind, prefix in (("spatial", "sp"), ("kr", "kr"), ("poisson", "p")):
        if t.startswith(prefix) and t[len(prefix):] in ("l", "q"):
            return OccupancyModelSpec(kind, t[-1].upper())
    raise ConfigError(f"cannot parse model name {text!r}")


# ---------------------------------------------------------------------------
# scalar / vector probabilities

def psi(model: OccupancyModelSpec, beta, zeta_i=None, x_i=None):
    """Occupancy probability.  For ``naive``, ``beta`` is psi itself."""
    if model.kind == "naive":
        return np.asarray(beta, dtype=float)
    eta = np.asarray(x_i, dtype=float) @ np.asarray(beta, dtype=float)
    if model.kind == "kr":
        return special.expit(eta)
    if model.kind == "spatial":
        if zeta_i is None:
            raise StateError("spatial model needs the site's random effect")
        eta = eta + zeta_i
    return -np.expm1(-np.exp(eta))


def detection_prob(model: OccupancyModelSpec, alpha, w_ij=None):
    """Per-visit detection probability given occupancy."""
    if model.kind == "naive":
        return np.asarray(alpha, dtype=float)
    eta = np.asarray(w_ij, dtype=float) @ np.asarray(alpha, dtype=float)
    if model.kind == "kr":
        return special.expit(eta)
    return special.ndtr(eta)


def abundance_intensity(beta, zeta_i=None, x_i=None, model=None):
    """Poisson intensity ``exp(x'beta + zeta)``."""
    if model is not None and model.kind not in ("poisson", "spatial"):
        raise UnsupportedModelError(
            f"abundance intensity is undefined for the {model.kind} model")
    eta = np.asarray(x_i, dtype=float) @ np.asarray(beta, dtype=float)
    if zeta_i is not None:
        eta = eta + zeta_i
    return np.exp(eta)


def observation_prob(psi_i, r_ij):
    """Marginal probability of a detection on one visit, ``psi * r``."""
    return np.asarray(psi_i) * np.asarray(r_ij)


def site_marginal_loglik(psi_i, r_i, y_i) -> float:
    """Log-probability of one site's detection history, occupancy summed out."""
    r = np.clip(np.asarray(r_i, dtype=float), P_FLOOR, P_CEIL)
    y = np.asarray(y_i, dtype=float)
    if r.shape != y.shape:
        raise ShapeError("r and y have different lengths")
    p = float(np.clip(psi_i, P_FLOOR, 1.0))
    if np.any(y > 0):
        return float(np.log(p) + np.sum(y * np.log(r) + (1 - y) * np.log1p(-r)))
    return float(np.logaddexp(np.log(p) + np.sum(np.log1p(-r)),
                              np.log1p(-p) if p < 1.0 else -np.inf))


def sample_occ_indicator(psi_i, r_i, y_i, rng) -> int:
    """Draw a site's latent occupancy from its full conditional."""
    if np.any(np.asarray(y_i) > 0):
        return 1
    a = psi_i * np.prod(1.0 - np.asarray(r_i, dtype=float))
    b = 1.0 - psi_i
    if a + b == 0:
        return 1
    return int(rng.random() < a / (a + b))


# ---------------------------------------------------------------------------
# vectorized forms used by the samplers (padded site x visit arrays)

def log_psi_pair(kind: str, eta):
    """``(log psi, log(1 - psi))`` for a linear predictor (incl. any zeta)."""
    if kind == "kr":
        return -np.logaddexp(0.0, -eta), -np.logaddexp(0.0, eta)
    lam = np.exp(eta)
    with np.errstate(divide="ignore"):
        lp = np.log(-np.expm1(-lam))
    return np.maximum(lp, np.log(P_FLOOR)), -lam


def log_r_pair(kind: str, eta):
    """``(log r, log(1 - r))`` for detection; logit for KR, probit otherwise."""
    if kind == "kr":
        return -np.logaddexp(0.0, -eta), -np.logaddexp(0.0, eta)
    return special.log_ndtr(eta), special.log_ndtr(-eta)


def marginal_loglik_sites(log_psi, log1m_psi, log_r, log1m_r, Y, mask,
                          detected):
    """Per-site marginal log-likelihood on padded (n, J) visit arrays."""
    hist = np.where(mask, np.where(Y > 0, log_r, log1m_r), 0.0).sum(axis=1)
    miss = np.where(mask, log1m_r, 0.0).sum(axis=1)
    undetected = np.logaddexp(log_psi + miss, log1m_psi)
    return np.where(detected, log_psi + hist, undetected)


def occupied_posterior_logit(log_psi, log1m_psi, log1m_r, mask):
    """Log-odds that an undetected site is occupied."""
    miss = np.where(mask, log1m_r, 0.0).sum(axis=1)
    return log_psi + miss - log1m_psi

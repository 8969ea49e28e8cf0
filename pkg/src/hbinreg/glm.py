"""GLM primitives for binary responses.

Inverse links, the Bernoulli log-likelihood, covariate design matrices built
from polynomial terms over standardized base covariates, and analytic
gradients of the resulting probability curves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import special

from .errors import DomainError, IngestionError, InvalidShapeError, ShapeError

__all__ = [
    "LINK_KINDS",
    "LinkFamily",
    "inverse_link",
    "log_likelihood",
    "probability_gradient",
    "DesignMatrix",
    "design_terms",
    "build_design",
    "P_FLOOR",
    "P_CEIL",
]

LINK_KINDS = ("logit", "probit", "cloglog", "skew-logistic", "negbin")

# Clamp applied before taking logs so MH ratios stay finite.
P_FLOOR = 1e-300
P_CEIL = 1.0 - 1e-16

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class LinkFamily:
    """A binary-regression link.

    Parameters
    ----------
    kind : str
        One of ``LINK_KINDS``.
    kappa : float
        Skewness of the skew-logistic inverse link ``(e^eta + kappa) /
        (1 + e^eta + kappa)``; ``kappa = 0`` is the logit.
    r_nb : float, optional
        Overdispersion of the negative-binomial auxiliary; required for
        ``kind="negbin"``.  ``r_nb -> inf`` recovers the cloglog.
    """

    kind: str = "logit"
    kappa: float = 0.0
    r_nb: float | None = None

    def __post_init__(self):
        if self.kind not in LINK_KINDS:
            raise InvalidShapeError(f"unknown link kind {self.kind!r}")
        if self.kind == "skew-logistic":
            if not np.isfinite(self.kappa) or self.kappa < 0:
                raise InvalidShapeError(f"kappa must be >= 0, got {self.kappa}")
        if self.kind == "negbin":
            if self.r_nb is None or not np.isfinite(self.r_nb) or self.r_nb <= 0:
                raise InvalidShapeError(f"r_nb must be > 0, got {self.r_nb}")

    # -- inverse link -----------------------------------------------------

    def inverse(self, eta):
        eta = _finite(eta)
        k = self.kind
        if k == "logit":
            return special.expit(eta)
        if k == "probit":
            return special.ndtr(eta)
        if k == "cloglog":
            return -np.expm1(-np.exp(eta))
        if k == "skew-logistic":
            s = special.expit(eta - np.log1p(self.kappa))
            return s + self.kappa * (1.0 - s) / (1.0 + self.kappa)
        # negbin: 1 - (r / (r + e^eta))^r
        r = self.r_nb
        return -np.expm1(-r * np.log1p(np.exp(eta) / r))

    def derivative(self, eta):
        """d g^{-1}(eta) / d eta."""
        eta = _finite(eta)
        k = self.kind
        if k == "logit":
            s = special.expit(eta)
            return s * (1.0 - s)
        if k == "probit":
            return np.exp(-0.5 * eta**2 - _LOG_SQRT_2PI)
        if k == "cloglog":
            return np.exp(eta - np.exp(eta))
        if k == "skew-logistic":
            # e^eta / (1 + kappa + e^eta)^2 written through s = expit(eta - log(1+kappa))
            s = special.expit(eta - np.log1p(self.kappa))
            return s * (1.0 - s) / (1.0 + self.kappa)
        r = self.r_nb
        lam = np.exp(eta)
        return np.exp(eta - (r + 1.0) * np.log1p(lam / r))

    # -- forward link -----------------------------------------------------

    @property
    def lower(self) -> float:
        """Infimum of the inverse link's range."""
        if self.kind == "skew-logistic":
            return self.kappa / (1.0 + self.kappa)
        return 0.0

    def link(self, p):
        """Forward link g(p); defined on ``(lower, 1)``."""
        p = np.asarray(p, dtype=float)
        if np.any(~(p > self.lower)) or np.any(~(p < 1.0)):
            raise DomainError(
                f"{self.kind} link is defined on ({self.lower:g}, 1)")
        k = self.kind
        if k == "logit":
            return special.logit(p)
        if k == "probit":
            return special.ndtri(p)
        if k == "cloglog":
            return np.log(-np.log1p(-p))
        if k == "skew-logistic":
            kap = self.kappa
            return np.log(p * (1.0 + kap) - kap) - np.log1p(-p)
        r = self.r_nb
        # (1 - p)^(-1/r) - 1 = expm1(-log1p(-p) / r)
        return np.log(r) + np.log(np.expm1(-np.log1p(-p) / r))

    def __str__(self):
        if self.kind == "skew-logistic":
            return f"skew-logistic(kappa={self.kappa:g})"
        if self.kind == "negbin":
            return f"negbin(r={self.r_nb:g})"
        return self.kind


def _finite(eta):
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise DomainError("linear predictor must be finite")
    return eta


def inverse_link(link: LinkFamily, eta):
    return link.inverse(eta)


def log_likelihood(y, p) -> float:
    """Bernoulli log-likelihood ``sum y log p + (1 - y) log(1 - p)``."""
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    if y.shape != p.shape:
        raise ShapeError(f"y has shape {y.shape} but p has shape {p.shape}")
    p = np.clip(p, P_FLOOR, P_CEIL)
    return float(np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def probability_gradient(link: LinkFamily, beta, x):
    """Gradient of ``g^{-1}(x'beta)`` with respect to the design vector ``x``."""
    beta = np.asarray(beta, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != beta.shape[0]:
        raise ShapeError("x and beta have different lengths")
    eta = x @ beta
    return np.multiply.outer(link.derivative(eta), beta)


# ---------------------------------------------------------------------------
# design matrices

_BASES = {
    "occupancy": ("elevation", "forest"),
    "detection": ("date", "duration"),
}


def design_terms(collection: str, target: str, extra_interaction: bool = False):
    """Base covariates and exponent rows for a covariate collection.

    Returns ``(base, exponents)`` where each row of ``exponents`` holds the
    power of every base covariate in one design column.
    """
    if target not in _BASES:
        raise DomainError(f"unknown design target {target!r}")
    if collection not in ("L", "Q"):
        raise DomainError(f"unknown covariate collection {collection!r}")
    base = _BASES[target]
    terms = [(0, 0), (1, 0), (0, 1)]
    if collection == "Q":
        if target == "occupancy":
            terms += [(2, 0), (0, 2), (2, 1), (1, 2)]
            if extra_interaction:
                terms.append((1, 1))
        else:
            terms.append((0, 2))
    elif extra_interaction and target == "occupancy":
        terms.append((1, 1))
    return base, np.array(terms, dtype=int)


def _term_name(base, exps):
    parts = []
    for name, e in zip(base, exps):
        if e == 1:
            parts.append(name)
        elif e > 1:
            parts.append(f"{name}^{e}")
    return ":".join(parts) if parts else "intercept"


@dataclass(frozen=True)
class DesignMatrix:
    """Design matrix of polynomial terms in standardized base covariates.

    ``values[:, t] = prod_k s_k ** exponents[t, k]`` with
    ``s_k = (raw_k - center[k]) / scale[k]``.
    """

    values: np.ndarray
    base: tuple
    exponents: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    names: tuple = field(default=())

    def __post_init__(self):
        if not self.names:
            object.__setattr__(self, "names", tuple(
                _term_name(self.base, e) for e in self.exponents))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def q(self) -> int:
        return self.values.shape[1]

    def standardize(self, raw) -> np.ndarray:
        """(n, k) standardized base covariates from a table or array."""
        arr = _base_array(raw, self.base)
        return (arr - self.center) / self.scale

    def expand(self, std) -> np.ndarray:
        std = np.atleast_2d(np.asarray(std, dtype=float))
        return np.prod(std[:, None, :] ** self.exponents[None, :, :], axis=2)

    def base_values(self) -> np.ndarray:
        """(n, k) standardized base covariates, read off the linear columns."""
        e = self.exponents
        cols = [int(np.flatnonzero((e.sum(axis=1) == 1) & (e[:, k] == 1))[0])
                for k in range(e.shape[1])]
        return self.values[:, cols]

    def raw_base(self) -> np.ndarray:
        """(n, k) base covariates in raw units."""
        return self.base_values() * self.scale + self.center

    def rows(self, raw) -> np.ndarray:
        """Design rows for new raw covariates using the stored standardization."""
        return self.expand(self.standardize(raw))

    def jacobian(self, std) -> np.ndarray:
        """d(design row)/d(standardized base), shape (n, q, k)."""
        std = np.atleast_2d(np.asarray(std, dtype=float))
        e = self.exponents
        n, k = std.shape
        out = np.zeros((n, e.shape[0], k))
        for j in range(k):
            ej = e[:, j]
            reduced = e.copy()
            reduced[:, j] = np.maximum(ej - 1, 0)
            prod = np.prod(std[:, None, :] ** reduced[None, :, :], axis=2)
            out[:, :, j] = ej[None, :] * prod
        return out

    def gradient(self, link: LinkFamily, beta, raw, offset=0.0) -> np.ndarray:
        """Gradient of ``g^{-1}(x(raw)'beta + offset)`` w.r.t. raw base covariates.

        Returns shape (n, k), in probability per raw covariate unit.
        """
        beta = np.asarray(beta, dtype=float)
        std = self.standardize(raw)
        eta = self.expand(std) @ beta + offset
        deta = np.einsum("nqk,q->nk", self.jacobian(std), beta) / self.scale
        return link.derivative(eta)[:, None] * deta


def _base_array(raw, base) -> np.ndarray:
    if isinstance(raw, np.ndarray):
        arr = np.atleast_2d(np.asarray(raw, dtype=float))
        if arr.shape[1] != len(base):
            raise ShapeError(f"expected {len(base)} base covariate columns")
        return arr
    cols = []
    for name in base:
        if name not in raw:
            raise IngestionError(f"missing covariate column {name!r}")
        try:
            col = np.asarray(raw[name], dtype=float)
        except (TypeError, ValueError) as exc:
            raise IngestionError(f"non-numeric values in column {name!r}") from exc
        cols.append(np.atleast_1d(col))
    arr = np.column_stack(cols)
    if not np.all(np.isfinite(arr)):
        raise IngestionError("missing or non-finite covariate values")
    return arr


def build_design(
    raw: Mapping[str, Sequence[float]] | np.ndarray,
    collection: str,
    target: str,
    extra_interaction: bool = False,
    standardization: tuple | None = None,
) -> DesignMatrix:
    """Build an occupancy or detection design matrix for collection L or Q.

    Base covariates are centred and scaled (sample mean, sd with ddof=1)
    before products are formed.  Pass ``standardization=(center, scale)`` to
    reuse constants from a fitted model.
    """
    base, exps = design_terms(collection, target, extra_interaction)
    arr = _base_array(raw, base)
    if standardization is None:
        center = arr.mean(axis=0)
        scale = arr.std(axis=0, ddof=1) if arr.shape[0] > 1 else np.ones(len(base))
        if np.any(~(scale > 0)):
            raise DomainError("cannot standardize a constant covariate")
    else:
        center, scale = (np.asarray(a, dtype=float) for a in standardization)
    dm = DesignMatrix(np.empty((0, len(exps))), base, exps, center, scale)
    return DesignMatrix(dm.expand((arr - center) / scale), base, exps,
                        center, scale)

"""Posterior predictive quantities at new (or training) sites."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import linalg, special

from ..errors import IngestionError, ShapeError
from ..spatial import delaunay_adjacency
from .samplers import FittedModel

__all__ = ["Prediction", "predict", "spatial_conditional_zeta"]

_COORD_ATOL = 1e-9


@dataclass
class Prediction:
    """Posterior draws at new sites; rows are posterior draws.

    ``psi`` is (S, n_sites); ``lam`` and ``zeta`` are present for the
    Poisson-type models.  When visits are supplied, ``r`` and ``p_hat`` are
    (S, n_visits) and ``visit_site`` maps each visit to its site column.
    """

    site_ids: np.ndarray
    psi: np.ndarray
    lam: np.ndarray | None = None
    zeta: np.ndarray | None = None
    r: np.ndarray | None = None
    p_hat: np.ndarray | None = None
    visit_site: np.ndarray | None = None
    visits: pd.DataFrame | None = None

    def p_site(self) -> np.ndarray:
        """(S, n_sites) probability of at least one detection over the visits."""
        if self.r is None:
            raise ShapeError("no visits were supplied")
        log_miss = np.zeros_like(self.psi)
        np.add.at(log_miss, (slice(None), self.visit_site), np.log1p(-self.r))
        return self.psi * -np.expm1(log_miss)

    def summary(self) -> pd.DataFrame:
        """Per-site posterior median and equal-tailed 95% bands."""
        out = {"site_id": self.site_ids}
        for name in ("psi", "lam", "zeta"):
            arr = getattr(self, name)
            if arr is None:
                continue
            q = np.quantile(arr, [0.025, 0.5, 0.975], axis=0)
            out[f"{name}_q2.5"], out[f"{name}_median"], out[f"{name}_q97.5"] = q
        return pd.DataFrame(out)

    def visit_summary(self) -> pd.DataFrame:
        if self.p_hat is None:
            raise ShapeError("no visits were supplied")
        df = self.visits[["site_id", "visit"]].reset_index(drop=True).copy()
        for name in ("r", "p_hat"):
            q = np.quantile(getattr(self, name), [0.025, 0.5, 0.975], axis=0)
            df[f"{name}_q2.5"], df[f"{name}_median"], df[f"{name}_q97.5"] = q
        return df


def _match_training(train, new):
    """Index of the training site at each new coordinate, or -1."""
    out = np.full(len(new), -1)
    for i, c in enumerate(new):
        hit = np.flatnonzero(np.all(np.abs(train - c) <= _COORD_ATOL, axis=1))
        if hit.size:
            out[i] = hit[0]
    return out


def spatial_conditional_zeta(train_coords, zeta, rho, tau2, coords,
                             rng) -> np.ndarray:
    """Draws (S, m) of the spatial effect at ``coords``.

    ``zeta`` (S, n) holds posterior draws of the training field with
    matching ``rho`` and ``tau2`` draws (S,).

    A coordinate equal to a training site reuses that site's draws.  Other
    sites are added to the training Delaunay graph and their effects drawn
    from the CAR conditional given the training field, jointly per draw.
    """
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    train_coords = np.asarray(train_coords, dtype=float)
    S, n = zeta.shape
    out = np.empty((S, len(coords)))
    match = _match_training(train_coords, coords)
    out[:, match >= 0] = zeta[:, match[match >= 0]]
    free = np.flatnonzero(match < 0)
    if free.size == 0:
        return out
    uniq, inverse = np.unique(coords[free], axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    g = delaunay_adjacency(np.vstack([train_coords, uniq]))
    A = g.adjacency.tocsr()
    u = len(uniq)
    Aff = A[n:, n:].toarray()
    Afx = A[n:, :n]
    d_f = g.degrees[n:]
    neigh = (Afx @ zeta.T).T  # (S, u)
    eps = rng.standard_normal((S, u))
    draws = np.empty((S, u))
    for s in range(S):
        M = np.diag(d_f) - rho[s] * Aff
        L = linalg.cholesky(M, lower=True)
        mean = linalg.cho_solve((L, True), rho[s] * neigh[s])
        draws[s] = mean + linalg.solve_triangular(
            L.T, eps[s], lower=False) / np.sqrt(tau2[s])
    out[:, free] = draws[:, inverse]
    return out


def _visit_sites(visits, site_ids):
    index = pd.Series(np.arange(len(site_ids)), index=pd.Index(site_ids))
    ids = visits["site_id"].astype(str)
    unknown = ~ids.isin(index.index)
    if unknown.any():
        raise IngestionError(
            f"visit refers to unknown site_id {ids[unknown].iloc[0]!r}")
    return index.loc[ids].to_numpy()


def predict(fit: FittedModel, sites: pd.DataFrame, visits: pd.DataFrame | None = None,
            seed: int = 0, max_draws: int | None = None) -> Prediction:
    """Posterior draws of occupancy, intensity and per-visit detection.

    ``sites`` needs ``site_id`` and the occupancy covariates (plus
    ``x_km, y_km`` for the spatial model); ``visits`` needs ``site_id`` and
    the detection covariates.  Raw covariates are standardized with the
    constants stored at fit time.
    """
    rng = np.random.default_rng(seed)
    samples = fit.samples
    step = 1
    if max_draws is not None and samples.n_draws > max_draws:
        step = int(np.ceil(samples.n_draws / max_draws))
    model = fit.model
    site_ids = sites["site_id"].astype(str).to_numpy()
    n_new = len(site_ids)
    lam = zeta = None

    if model.kind == "naive":
        psi_d = samples.pooled("psi")[::step]
        psi = np.repeat(psi_d[:, None], n_new, axis=1)
    else:
        beta = fit.beta[::step]
        X = fit.occ_design.rows(sites)
        eta = beta @ X.T
        if model.kind == "spatial":
            if not {"x_km", "y_km"} <= set(sites.columns):
                raise IngestionError("spatial prediction needs x_km and y_km")
            zeta = spatial_conditional_zeta(
                fit.coords, fit.zeta[::step], samples.pooled("rho")[::step],
                samples.pooled("tau2")[::step],
                sites[["x_km", "y_km"]].to_numpy(dtype=float), rng)
            eta = eta + zeta
        if model.kind == "kr":
            psi = special.expit(eta)
        else:
            lam = np.exp(eta)
            psi = -np.expm1(-lam)

    pred = Prediction(site_ids, psi, lam, zeta)
    if visits is not None:
        vs = _visit_sites(visits, site_ids)
        if model.kind == "naive":
            r_d = samples.pooled("r")[::step]
            r = np.repeat(r_d[:, None], len(vs), axis=1)
        else:
            eta_w = fit.alpha[::step] @ fit.det_design.rows(visits).T
            r = special.expit(eta_w) if model.kind == "kr" else special.ndtr(eta_w)
        pred.r = r
        pred.p_hat = psi[:, vs] * r
        pred.visit_site = vs
        pred.visits = visits
    return pred

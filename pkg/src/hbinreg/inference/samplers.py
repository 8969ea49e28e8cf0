"""MCMC for the four occupancy models.

One sweep updates, in order:

* ``beta`` by adaptive random-walk Metropolis on the likelihood with site
  occupancy summed out (collapsed; KR, Poisson, spatial);
* spatial only: each ``zeta_i`` by random-walk Metropolis against its CAR
  full conditional, vectorized over colour classes of the neighbourhood
  graph; ``rho`` by Metropolis on the logit scale; ``tau2`` from its
  conjugate gamma conditional; then two joint moves that leave the
  posterior invariant: an exact Gaussian draw of a common shift between the
  intercept and ``zeta`` (the linear predictor is unchanged), and a
  Metropolis rescaling of ``(zeta, slopes, 1/sqrt(tau2))``, which removes
  most of the funnel between the effects and their precision;
* latent occupancy ``o_i`` of sites without detections from its Bernoulli
  full conditional;
* ``alpha``: probit detection (Poisson, spatial) by truncated-normal data
  augmentation and a conjugate Gaussian draw using visits to occupied
  sites; logistic detection (KR) by collapsed random-walk Metropolis;
* naive: conjugate beta draws for ``psi`` and ``r`` given ``o``.

Proposal scales adapt by Robbins-Monro during burn-in only and are frozen
afterwards, so retained draws come from a fixed Metropolis kernel.
"""

from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from ..data import OccupancyDataset
from ..errors import InitializationError
from ..glm import DesignMatrix, build_design
from ..occupancy import OccupancyModelSpec, log_psi_pair, log_r_pair
from ..spatial import NeighborhoodGraph, delaunay_adjacency
from .config import PriorConfig, SamplerConfig
from .conjugate import conjugate_gaussian_coeff_update
from .samples import PosteriorSamples
from .truncnorm import truncated_normal_draw

__all__ = ["FittedModel", "fit", "Problem", "run_chain", "n_jobs_from_env",
           "tau2_conditional_draw"]

log = logging.getLogger(__name__)

THREADS_ENV = "HBINREG_THREADS"


def n_jobs_from_env(default: int) -> int:
    value = os.environ.get(THREADS_ENV)
    return max(1, int(value)) if value else default


@dataclass
class Problem:
    """Model-ready arrays for one dataset."""

    kind: str
    X: np.ndarray | None
    W: np.ndarray | None
    site_of_visit: np.ndarray
    y: np.ndarray
    n_sites: int
    detected: np.ndarray
    n_visits_site: np.ndarray
    y_site: np.ndarray
    graph: NeighborhoodGraph | None = None

    @classmethod
    def build(cls, model, data: OccupancyDataset, X=None, W=None, graph=None):
        sv = data.visits["site_index"].to_numpy(dtype=int)
        y = data.visits["y"].to_numpy(dtype=float)
        n = data.n_sites
        return cls(
            kind=model.kind,
            X=None if X is None else X.values,
            W=None if W is None else W.values,
            site_of_visit=sv,
            y=y,
            n_sites=n,
            detected=np.bincount(sv, weights=y, minlength=n) > 0,
            n_visits_site=np.bincount(sv, minlength=n).astype(float),
            y_site=np.bincount(sv, weights=y, minlength=n),
            graph=graph,
        )


@dataclass
class FittedModel:
    """A fitted occupancy model; everything needed to predict and score."""

    model: OccupancyModelSpec
    priors: PriorConfig
    sampler: SamplerConfig
    samples: PosteriorSamples
    occ_design: DesignMatrix | None
    det_design: DesignMatrix | None
    site_ids: np.ndarray
    coords: np.ndarray | None = None
    graph: NeighborhoodGraph | None = None
    warnings: list = field(default_factory=list)

    @property
    def beta(self) -> np.ndarray:
        return self.samples.group("beta")

    @property
    def alpha(self) -> np.ndarray:
        return self.samples.group("alpha")

    @property
    def zeta(self) -> np.ndarray:
        return self.samples.group("zeta")


# ---------------------------------------------------------------------------
# adaptation helpers

class _BlockRW:
    """Random-walk proposal with Robbins-Monro scale and burn-in covariance."""

    def __init__(self, dim, target, n_burnin, every, init_sd=0.1):
        self.dim = dim
        self.target = target
        self.n_burnin = n_burnin
        self.every = every
        self.log_scale = np.log(2.38 / np.sqrt(dim))
        self.chol = init_sd * np.eye(dim)
        self.history = []
        self.accepted = 0

    def propose(self, x, rng):
        return x + np.exp(self.log_scale) * (self.chol @ rng.standard_normal(self.dim))

    def update(self, t, log_ratio, x):
        if t >= self.n_burnin:
            return
        gamma = (t + 1.0) ** -0.6
        self.log_scale += gamma * (min(1.0, np.exp(min(log_ratio, 0.0))) - self.target)
        self.history.append(x.copy())
        if self.every and (t + 1) % self.every == 0 and len(self.history) >= 2 * self.dim + 10:
            h = np.asarray(self.history[len(self.history) // 2:])
            cov = np.atleast_2d(np.cov(h, rowvar=False)) + 1e-10 * np.eye(self.dim)
            try:
                self.chol = linalg.cholesky(cov, lower=True)
            except linalg.LinAlgError:
                pass

    @property
    def scale(self) -> float:
        return float(np.exp(self.log_scale))


def _mh_step(x, lp, log_post, block: _BlockRW, t, rng):
    prop = block.propose(x, rng)
    lp_prop = log_post(prop)
    log_ratio = lp_prop - lp if np.isfinite(lp_prop) else -np.inf
    accept = np.log(rng.random()) < log_ratio
    block.update(t, log_ratio, prop if accept else x)
    if accept:
        block.accepted += t >= block.n_burnin
        return prop, lp_prop
    return x, lp


def _tau2_draw(quad, n, priors, rng):
    return rng.gamma(priors.tau2_shape + 0.5 * n,
                     1.0 / (priors.tau2_rate + 0.5 * quad))


def tau2_conditional_draw(zeta, graph: NeighborhoodGraph, rho: float,
                          priors: PriorConfig, rng) -> float:
    """Draw the CAR precision scale from its gamma full conditional."""
    zeta = np.asarray(zeta, dtype=float)
    quad = zeta @ (graph.degrees * zeta) - rho * zeta @ (graph.adjacency @ zeta)
    return float(_tau2_draw(quad, graph.n_sites, priors, rng))


def _site_ll(lpsi, l1mpsi, hist, miss, detected):
    return np.where(detected, lpsi + hist, np.logaddexp(lpsi + miss, l1mpsi))


# ---------------------------------------------------------------------------
# per-chain samplers

def run_chain(prob: Problem, priors: PriorConfig, cfg: SamplerConfig, chain: int):
    """Run one chain; returns ``(draws, acceptance, scale_trace)``."""
    rng = np.random.default_rng([cfg.seed, chain])
    if prob.kind == "naive":
        return _run_naive(prob, priors, cfg, rng)
    return _run_covariate(prob, priors, cfg, rng)


def _run_naive(prob, priors, cfg, rng):
    psi, r = 0.5, 0.5
    n = prob.n_sites
    det = prob.detected
    nv = prob.n_visits_site
    ys = prob.y_site
    keep = range(cfg.n_burnin, cfg.n_iter, cfg.thin)
    out = np.empty((len(keep), 2))
    k = 0
    for t in range(cfg.n_iter):
        a = psi * np.exp(nv * np.log1p(-r))
        p_occ = a / (a + 1.0 - psi)
        o = det | (rng.random(n) < p_occ)
        n_occ = int(o.sum())
        psi = rng.beta(priors.a_psi + n_occ, priors.b_psi + n - n_occ)
        succ = float(ys[o].sum())
        trials = float(nv[o].sum())
        r = rng.beta(priors.a_r + succ, priors.b_r + trials - succ)
        if t >= cfg.n_burnin and (t - cfg.n_burnin) % cfg.thin == 0:
            out[k] = psi, r
            k += 1
    return out, {}, {}


def _run_covariate(prob, priors, cfg, rng):
    kind = prob.kind
    X, W = prob.X, prob.W
    n, q = X.shape
    p = W.shape[1]
    sv, y, det = prob.site_of_visit, prob.y, prob.detected
    y_pos = y > 0
    spatial = kind == "spatial"
    sb2 = priors.sigma_beta**2
    sa2 = priors.sigma_alpha**2

    beta = np.zeros(q)
    alpha = np.zeros(p)
    zeta = np.zeros(n)
    rho_min = priors.rho_min
    rho = 0.5 if rho_min < 0.5 else 0.5 * (rho_min + 1.0)
    tau2 = 1.0

    def detection_terms(alpha):
        lr, l1mr = log_r_pair(kind, W @ alpha)
        hist = np.bincount(sv, weights=np.where(y_pos, lr, l1mr), minlength=n)
        miss = np.bincount(sv, weights=l1mr, minlength=n)
        return hist, miss

    hist, miss = detection_terms(alpha)

    def lp_beta(b):
        lpsi, l1mpsi = log_psi_pair(kind, X @ b + zeta)
        return (_site_ll(lpsi, l1mpsi, hist, miss, det).sum()
                - 0.5 * (b @ b) / sb2)

    def lp_alpha(a):
        h, m = detection_terms(a)
        lpsi, l1mpsi = log_psi_pair(kind, X @ beta + zeta)
        return _site_ll(lpsi, l1mpsi, h, m, det).sum() - 0.5 * (a @ a) / sa2

    lp_b = lp_beta(beta)
    if not np.isfinite(lp_b):
        raise InitializationError("non-finite log-likelihood at initial values")

    every = cfg.adapt_covariance_every
    beta_block = _BlockRW(q, cfg.target_accept_block, cfg.n_burnin, every)
    alpha_block = (_BlockRW(p, cfg.target_accept_block, cfg.n_burnin, every)
                   if kind == "kr" else None)
    lp_a = lp_alpha(alpha) if kind == "kr" else None

    names_extra = 0
    if spatial:
        g = prob.graph
        A = g.adjacency
        d = g.degrees
        lam = g.spectrum
        classes = g.coloring
        zeta_ls = np.full(n, np.log(0.5))
        rho_ls = np.log(0.5)
        scale_ls = np.log(0.1)
        zeta_acc = np.zeros(n)
        rho_acc = 0
        names_extra = n + 2

        def rho_lp(rho_v, zAz):
            return (0.5 * np.sum(np.log1p(-rho_v * lam))
                    + 0.5 * tau2 * rho_v * zAz
                    + np.log(rho_v - rho_min) + np.log1p(-rho_v))

    keep = range(cfg.n_burnin, cfg.n_iter, cfg.thin)
    out = np.empty((len(keep), q + p + names_extra))
    traces = {"beta": np.empty(cfg.n_iter)}
    if kind == "kr":
        traces["alpha"] = np.empty(cfg.n_iter)
    if spatial:
        traces["zeta"] = np.empty(cfg.n_iter)
        traces["rho"] = np.empty(cfg.n_iter)
    k = 0

    for t in range(cfg.n_iter):
        traces["beta"][t] = beta_block.scale
        lp_b = lp_beta(beta)
        beta, lp_b = _mh_step(beta, lp_b, lp_beta, beta_block, t, rng)

        if spatial:
            adapt = t < cfg.n_burnin
            gamma = (t + 1.0) ** -0.6
            traces["zeta"][t] = float(np.exp(zeta_ls.mean()))
            traces["rho"][t] = float(np.exp(rho_ls))
            lin = X @ beta
            for idx in classes:
                Az = A[idx] @ zeta
                cm = rho * Az / d[idx]
                cp = tau2 * d[idx]
                cur = zeta[idx]
                prop = cur + np.exp(zeta_ls[idx]) * rng.standard_normal(idx.size)
                h, m, dt = hist[idx], miss[idx], det[idx]
                lo = _site_ll(*log_psi_pair(kind, lin[idx] + cur), h, m, dt)
                ln = _site_ll(*log_psi_pair(kind, lin[idx] + prop), h, m, dt)
                log_ratio = (ln - 0.5 * cp * (prop - cm) ** 2
                             - lo + 0.5 * cp * (cur - cm) ** 2)
                acc = np.log(rng.random(idx.size)) < log_ratio
                zeta[idx] = np.where(acc, prop, cur)
                if adapt:
                    zeta_ls[idx] += gamma * (np.exp(np.minimum(log_ratio, 0.0))
                                             - cfg.target_accept_scalar)
                else:
                    zeta_acc[idx] += acc

            zAz = zeta @ (A @ zeta)
            theta = np.log((rho - rho_min) / (1.0 - rho))
            theta_p = theta + np.exp(rho_ls) * rng.standard_normal()
            rho_p = rho_min + (1.0 - rho_min) * special.expit(theta_p)
            if rho_min < rho_p < 1.0:
                log_ratio = rho_lp(rho_p, zAz) - rho_lp(rho, zAz)
            else:
                log_ratio = -np.inf
            if np.log(rng.random()) < log_ratio:
                rho = rho_p
                rho_acc += t >= cfg.n_burnin
            if adapt:
                rho_ls += gamma * (min(1.0, np.exp(min(log_ratio, 0.0)))
                                   - cfg.target_accept_scalar)

            tau2 = _tau2_draw(zeta @ (d * zeta) - rho * zAz, n, priors, rng)

            # intercept/zeta shift: x'b + z is unchanged, so only the priors
            # enter and the shift has a Gaussian full conditional
            # (Q 1 = (1 - rho) d)
            prec = 1.0 / sb2 + tau2 * (1.0 - rho) * d.sum()
            mean = (-beta[0] / sb2 + tau2 * (1.0 - rho) * (d @ zeta)) / prec
            delta = mean + rng.standard_normal() / np.sqrt(prec)
            beta[0] += delta
            zeta -= delta
            lin = X @ beta

            # joint rescaling of (zeta, non-intercept beta) by c and tau2 by
            # 1/c^2; the CAR quadratic form is invariant and the Jacobian is
            # c^(n + q - 3)
            log_c = np.exp(scale_ls) * rng.standard_normal()
            c = np.exp(log_c)
            beta_c = beta.copy()
            beta_c[1:] *= c
            zeta_c = c * zeta
            tau2_c = tau2 / c**2
            lsite = _site_ll(*log_psi_pair(kind, lin + zeta), hist, miss, det)
            lsite_c = _site_ll(*log_psi_pair(kind, X @ beta_c + zeta_c),
                               hist, miss, det)
            slope2 = beta[1:] @ beta[1:]
            log_ratio = (lsite_c.sum() - lsite.sum()
                         - 0.5 * (c**2 - 1.0) * slope2 / sb2
                         + (q - 1) * log_c
                         - 2.0 * priors.tau2_shape * log_c
                         - priors.tau2_rate * (tau2_c - tau2))
            if np.log(rng.random()) < log_ratio:
                beta, zeta, tau2 = beta_c, zeta_c, tau2_c
            if adapt:
                scale_ls += gamma * (min(1.0, np.exp(min(log_ratio, 0.0)))
                                     - cfg.target_accept_scalar)

        if kind == "kr":
            traces["alpha"][t] = alpha_block.scale
            lp_a = lp_alpha(alpha)
            alpha, lp_a = _mh_step(alpha, lp_a, lp_alpha, alpha_block, t, rng)
            hist, miss = detection_terms(alpha)
        else:
            lpsi, l1mpsi = log_psi_pair(kind, X @ beta + zeta)
            logit_occ = lpsi + miss - l1mpsi
            o = det | (rng.random(n) < special.expit(logit_occ))
            occ_v = o[sv]
            Wo = W[occ_v]
            u = truncated_normal_draw(Wo @ alpha, y_pos[occ_v], rng)
            alpha = conjugate_gaussian_coeff_update(u, Wo, priors.sigma_alpha, rng)
            hist, miss = detection_terms(alpha)

        if t >= cfg.n_burnin and (t - cfg.n_burnin) % cfg.thin == 0:
            row = [beta, alpha]
            if spatial:
                row += [zeta, [rho, tau2]]
            out[k] = np.concatenate(row)
            k += 1

    n_post = cfg.n_iter - cfg.n_burnin
    acc = {"beta": beta_block.accepted / n_post}
    if kind == "kr":
        acc["alpha"] = alpha_block.accepted / n_post
    if spatial:
        acc["zeta"] = float(zeta_acc.mean() / n_post)
        acc["rho"] = rho_acc / n_post
    return out, acc, traces


# ---------------------------------------------------------------------------

def _param_names(model, X, W, n_sites):
    if model.kind == "naive":
        return ["psi", "r"]
    names = [f"beta[{c}]" for c in X.names] + [f"alpha[{c}]" for c in W.names]
    if model.kind == "spatial":
        names += [f"zeta[{i}]" for i in range(n_sites)] + ["rho", "tau2"]
    return names


def prepare(model: OccupancyModelSpec, data: OccupancyDataset):
    """Designs, graph and sampler arrays for a dataset."""
    X = W = graph = None
    if model.uses_covariates:
        X = build_design(data.sites, model.covariates, "occupancy",
                         model.extra_interaction)
        W = build_design(data.visits, model.covariates, "detection")
    if model.kind == "spatial":
        if data.coords is None:
            raise InitializationError("spatial model requires site coordinates")
        graph = delaunay_adjacency(data.coords)
    return X, W, graph, Problem.build(model, data, X, W, graph)


def fit(model: OccupancyModelSpec, data: OccupancyDataset,
        priors: PriorConfig | None = None,
        cfg: SamplerConfig | None = None) -> FittedModel:
    """Sample the posterior of ``model`` given ``data``."""
    priors = priors or PriorConfig()
    cfg = cfg or SamplerConfig()
    X, W, graph, prob = prepare(model, data)
    names = _param_names(model, X, W, data.n_sites)

    n_jobs = min(n_jobs_from_env(cfg.n_jobs), cfg.n_chains)
    args = [(prob, priors, cfg, c) for c in range(cfg.n_chains)]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as ex:
            results = list(ex.map(run_chain, *zip(*args)))
    else:
        results = [run_chain(*a) for a in args]

    draws = np.stack([r[0] for r in results])
    acceptance = {}
    for key in results[0][1]:
        acceptance[key] = [r[1][key] for r in results]
    traces = {key: np.stack([r[2][key] for r in results])
              for key in results[0][2]}
    iters = np.arange(cfg.n_burnin, cfg.n_iter, cfg.thin)
    samples = PosteriorSamples(names, draws, iters, acceptance, traces)
    if not np.all(np.isfinite(draws)):
        raise InitializationError("sampler produced non-finite draws")

    fitted = FittedModel(model, priors, cfg, samples, X, W,
                         data.sites["site_id"].to_numpy(), data.coords, graph)
    _identifiability_guard(fitted)
    return fitted


def _identifiability_guard(fitted: FittedModel) -> None:
    """Warn when psi is near 1 at every site while detection has an intercept."""
    m = fitted.model
    if m.kind == "naive":
        psi_med = np.median(fitted.samples.pooled("psi"))
        near_one = psi_med > 0.98
    else:
        eta = fitted.beta @ fitted.occ_design.values.T
        if m.kind == "spatial":
            eta = eta + fitted.zeta
        lpsi, _ = log_psi_pair(m.kind, np.median(eta, axis=0))
        near_one = bool(np.all(np.exp(lpsi) > 0.98))
    if near_one:
        msg = (f"{m.name}: occupancy is near 1 at every site; occupancy and "
               "detection intercepts are weakly separated")
        fitted.warnings.append(msg)
        warnings.warn(msg, stacklevel=3)

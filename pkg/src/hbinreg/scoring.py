"""Brier-score cross-validation and marginal probability curves."""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .data import OccupancyDataset
from .errors import ConfigError, ScoreError, ShapeError
from .glm import LinkFamily
from .inference.config import PriorConfig, SamplerConfig
from .inference.predict import predict
from .inference.samplers import FittedModel, fit, n_jobs_from_env
from .occupancy import OccupancyModelSpec, parse_model

__all__ = [
    "brier_score",
    "expected_brier",
    "expected_posterior_score",
    "FoldPlan",
    "make_folds",
    "ScoreReport",
    "cross_validate",
    "ProbabilityCurve",
    "marginal_curve",
]

log = logging.getLogger(__name__)


def brier_score(y, p_hat) -> float:
    """Mean squared difference between binary outcomes and probabilities."""
    y = np.asarray(y, dtype=float)
    p = np.asarray(p_hat, dtype=float)
    if y.shape != p.shape:
        raise ShapeError(f"y has shape {y.shape} but p_hat has {p.shape}")
    if y.size == 0:
        raise ScoreError("score is undefined for an empty holdout set")
    if np.any((p < 0) | (p > 1)):
        raise ScoreError("predicted probabilities must lie in [0, 1]")
    return float(np.mean((y - p) ** 2))


def expected_brier(y, p_draws) -> float:
    """Posterior average of the Brier score; ``p_draws`` is (S, m)."""
    p = np.atleast_2d(np.asarray(p_draws, dtype=float))
    y = np.asarray(y, dtype=float)
    if p.shape[1] != y.size:
        raise ShapeError("p_draws must have one column per outcome")
    if y.size == 0:
        raise ScoreError("score is undefined for an empty holdout set")
    return float(np.mean((y[None, :] - p) ** 2))


def expected_posterior_score(fitted: FittedModel, holdout: OccupancyDataset,
                             per_site: bool = False, seed: int = 0) -> float:
    """Expected Brier score of a fitted model on held-out sites.

    By default each visit is scored against ``psi_i r_ij``; with
    ``per_site`` each site is scored on whether it had any detection,
    against ``psi_i (1 - prod_j (1 - r_ij))``.
    """
    if holdout.n_visits == 0:
        raise ScoreError("score is undefined for an empty holdout set")
    pred = predict(fitted, holdout.sites, holdout.visits, seed=seed)
    if per_site:
        return expected_brier(holdout.detected.astype(float), pred.p_site())
    return expected_brier(holdout.visits["y"].to_numpy(dtype=float), pred.p_hat)


# ---------------------------------------------------------------------------
# cross-validation

@dataclass(frozen=True)
class FoldPlan:
    K: int
    assignment: np.ndarray
    seed: int

    def holdout(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def training(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != k)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.K)


def make_folds(n_sites: int, K: int, seed: int = 0) -> FoldPlan:
    """Assign sites to K folds uniformly at random with balanced sizes."""
    if not 2 <= K <= n_sites:
        raise ConfigError(f"need 2 <= K <= {n_sites}, got K={K}")
    perm = np.random.default_rng(seed).permutation(n_sites)
    assignment = np.empty(n_sites, dtype=int)
    assignment[perm] = np.arange(n_sites) % K
    return FoldPlan(K, assignment, seed)


@dataclass
class ScoreReport:
    """Expected Brier scores per model and fold."""

    scores: pd.DataFrame  # columns model, fold, score
    plan: FoldPlan

    def table(self) -> pd.DataFrame:
        """(fold x model) table of scores."""
        return self.scores.pivot(index="fold", columns="model", values="score")

    def summary(self) -> pd.DataFrame:
        """Mean score and between-fold standard error per model."""
        g = self.scores.groupby("model", sort=False)["score"]
        out = pd.DataFrame({"mean": g.mean(), "sd": g.std(ddof=1),
                            "n_folds": g.size()})
        out["se"] = out["sd"] / np.sqrt(out["n_folds"])
        return out

    def to_csv(self, path) -> None:
        self.scores.to_csv(path, index=False, float_format="%.17g")


def _cv_task(model, train, holdout, priors, cfg, per_site, fold, seed):
    if not train.detected.any():
        warnings.warn(f"fold {fold}: training sites contain no detections",
                      stacklevel=2)
    cfg = replace(cfg, n_jobs=1)
    fitted = fit(model, train, priors, cfg)
    return expected_posterior_score(fitted, holdout, per_site, seed)


def cross_validate(models, data: OccupancyDataset, K: int = 8, seed: int = 0,
                   priors: PriorConfig | None = None,
                   cfg: SamplerConfig | None = None, per_site: bool = False,
                   n_jobs: int = 1) -> ScoreReport:
    """K-fold cross-validation with sites as the fold unit.

    Every model is refitted on the training sites of each fold and scored by
    its expected Brier score on all visits of the held-out sites.
    """
    priors = priors or PriorConfig()
    cfg = cfg or SamplerConfig()
    models = [m if isinstance(m, OccupancyModelSpec) else parse_model(m) for m in models]
    plan = make_folds(data.n_sites, K, seed)
    tasks = []
    for k in range(K):
        train = data.subset(plan.training(k))
        hold = data.subset(plan.holdout(k))
        for m in models:
            tasks.append((m, train, hold, priors, cfg, per_site, k, seed))
    n_jobs = n_jobs_from_env(n_jobs)
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as ex:
            scores = list(ex.map(_cv_task, *zip(*tasks)))
    else:
        scores = [_cv_task(*t) for t in tasks]
    frame = pd.DataFrame({"model": [t[0].name for t in tasks],
                          "fold": [t[6] for t in tasks],
                          "score": scores})
    return ScoreReport(frame, plan)


# ---------------------------------------------------------------------------
# marginal curves

@dataclass
class ProbabilityCurve:
    """Pointwise posterior summaries of a probability curve and its slope.

    ``grid`` is in raw covariate units and ``gradient_*`` in probability per
    raw unit.  ``draws`` (S, n_grid) are kept for downstream checks.
    """

    term: str
    target: str
    grid: np.ndarray
    held: dict
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    gradient_median: np.ndarray
    gradient_lower: np.ndarray
    gradient_upper: np.ndarray
    draws: np.ndarray
    gradient_draws: np.ndarray

    def to_frame(self, gradient: bool = False) -> pd.DataFrame:
        if gradient:
            lo, med, hi = self.gradient_lower, self.gradient_median, self.gradient_upper
        else:
            lo, med, hi = self.lower, self.median, self.upper
        return pd.DataFrame({"term": self.term, "grid": self.grid,
                             "q2.5": lo, "median": med, "q97.5": hi})


def _links(model: OccupancyModelSpec, target: str) -> LinkFamily:
    kind = model.occupancy_link if target == "occupancy" else model.detection_link
    return LinkFamily(kind)


def marginal_curve(fitted: FittedModel, target: str, sweep_term: str, grid,
                   held_at: dict | None = None, average: bool = False,
                   max_draws: int | None = None) -> ProbabilityCurve:
    """Occupancy or detection probability as one base covariate varies.

    Other base covariates sit at ``held_at`` (raw units; default the
    training means, i.e. zero on the standardized scale).  With ``average``
    the curve is instead averaged over the training covariate rows (and,
    for the spatial model, the fitted site effects); otherwise the spatial
    effect is held at its prior mean of zero.
    """
    if target not in ("occupancy", "detection"):
        raise ConfigError("target must be 'occupancy' or 'detection'")
    grid = np.asarray(grid, dtype=float)
    model = fitted.model
    samples = fitted.samples
    step = 1
    if max_draws is not None and samples.n_draws > max_draws:
        step = int(np.ceil(samples.n_draws / max_draws))

    if model.kind == "naive":
        name = "psi" if target == "occupancy" else "r"
        p = samples.pooled(name)[::step]
        draws = np.repeat(p[:, None], grid.size, axis=1)
        return _summarize(sweep_term, target, grid, held_at or {}, draws,
                          np.zeros_like(draws))

    design = fitted.occ_design if target == "occupancy" else fitted.det_design
    coef = (fitted.beta if target == "occupancy" else fitted.alpha)[::step]
    if sweep_term not in design.base:
        raise ConfigError(f"{sweep_term!r} is not a {target} covariate; "
                          f"choose from {list(design.base)}")
    j = design.base.index(sweep_term)
    s_grid = (grid - design.center[j]) / design.scale[j]
    if np.any(np.abs(s_grid) > 4.0):
        warnings.warn(f"grid for {sweep_term!r} extends beyond 4 sd of the "
                      "training data (extrapolation)", stacklevel=2)
    link = _links(model, target)
    spatial = model.kind == "spatial" and target == "occupancy"

    if average:
        base = design.base_values()  # (n, k)
        offsets = fitted.zeta[::step] if spatial else None
    else:
        held = dict(held_at or {})
        unknown = set(held) - set(design.base)
        if unknown:
            raise ConfigError(f"held_at names unknown covariates {sorted(unknown)}")
        raw = np.array([held.get(b, design.center[k])
                        for k, b in enumerate(design.base)])
        base = ((raw - design.center) / design.scale)[None, :]
        offsets = None
    held_out = {b: float(design.center[k] + design.scale[k] * base[:, k].mean())
                for k, b in enumerate(design.base) if k != j}

    S = coef.shape[0]
    draws = np.empty((S, grid.size))
    grads = np.empty((S, grid.size))
    for g, s in enumerate(s_grid):
        std = base.copy()
        std[:, j] = s
        X = design.expand(std)                                  # (n, q)
        dX = design.jacobian(std)[:, :, j] / design.scale[j]    # (n, q)
        eta = coef @ X.T                                        # (S, n)
        if offsets is not None:
            eta = eta + offsets
        deriv = link.derivative(eta)
        draws[:, g] = link.inverse(eta).mean(axis=1)
        grads[:, g] = (deriv * (coef @ dX.T)).mean(axis=1)
    return _summarize(sweep_term, target, grid, held_out, draws, grads)


def _summarize(term, target, grid, held, draws, grads):
    q = np.quantile(draws, [0.025, 0.5, 0.975], axis=0)
    qg = np.quantile(grads, [0.025, 0.5, 0.975], axis=0)
    return ProbabilityCurve(term, target, grid, held, q[1], q[0], q[2],
                            qg[1], qg[0], qg[2], draws, grads)

"""Command-line interface: ``hbinreg {fit,predict,curves,cv,simulate,qr-demo}``.

Settings resolve in three layers: built-in defaults, then an optional JSON
config file (``--config``), then explicit command-line flags.  The resolved
configuration is written to ``<out>/config.json``; passing that file back
with ``--config`` reproduces the run.

Exit codes: 0 success, 2 configuration error, 3 input/ingestion error,
4 numerical failure.  Errors go to stderr as ``error[<kind>]: <message>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .artifact import load_fit, save_fit, write_json
from .auxiliary import (
    AuxiliarySpec,
    QuantileModel,
    check_equivalence,
    heteroskedastic_quantile_coefficients,
    matched_spec,
    qr_binary_loglik,
    qr_relative_effect,
    qr_x_intercept,
)
from .data import ingest, read_sites, read_visits, simulate, write_dataset
from .errors import ConfigError, HBRError, IngestionError, NumericalError
from .glm import LinkFamily
from .inference.config import PriorConfig, SamplerConfig
from .inference.predict import predict
from .inference.samplers import THREADS_ENV, fit
from .occupancy import OccupancyModelSpec, parse_model
from .scoring import cross_validate, marginal_curve

log = logging.getLogger("hbinreg")

EXIT_OK, EXIT_CONFIG, EXIT_INGEST, EXIT_NUMERICAL = 0, 2, 3, 4

_SAMPLER_KEYS = {f.name for f in fields(SamplerConfig)}

# per-command defaults; ``None`` means "required"
DEFAULTS = {
    "fit": {"sites": None, "visits": None, "model": "poisson",
            "covariates": "L", "extra_interaction": False},
    "predict": {"artifact": None, "sites": None, "visits": "",
                "max_draws": 0},
    "curves": {"artifact": None, "target": "both", "terms": "",
               "grid_points": 101, "average": False, "held_at": {},
               "max_draws": 0},
    "cv": {"sites": None, "visits": None, "models": "naive,krl,pl,spl",
           "folds": 8, "per_site": False, "extra_interaction": False},
    "simulate": {"model": "poisson", "covariates": "L",
                 "extra_interaction": False, "sites": 265, "visits": 3,
                 "beta": [0.3, 0.8, -0.5], "alpha": [0.5, 0.3, 0.2],
                 "psi": 0.6, "r": 0.5, "rho": 0.9, "tau2": 1.0,
                 "p_missing": 0.0},
    "qr-demo": {"tau": [0.1, 0.25, 0.5, 0.75, 0.9], "beta": [0.0, 1.0],
                "gamma": [1.0, 0.5], "k": [0.1, 3.0, 40.0], "n": 50},
}
_COMMON = {"seed": 0, "out": "out", "threads": 1}


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _held_at(pairs):
    out = {}
    for item in pairs or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--held-at expects name=value, got {item!r}")
        out[key.strip()] = float(val)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hbinreg", description=(
        "Hierarchical binary regression and site-occupancy models."))
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        # default=SUPPRESS keeps unset flags out of the namespace so that
        # config-file values are not overwritten by argparse defaults
        s = argparse.SUPPRESS
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, default=s)
        sp.add_argument("--out", default=s, help="output directory")
        sp.add_argument("--threads", type=int, default=s,
                        help=f"worker processes (env {THREADS_ENV} overrides)")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    def sampler_flags(sp):
        s = argparse.SUPPRESS
        sp.add_argument("--n-iter", dest="n_iter", type=int, default=s)
        sp.add_argument("--burnin", dest="n_burnin", type=int, default=s)
        sp.add_argument("--chains", dest="n_chains", type=int, default=s)
        sp.add_argument("--thin", type=int, default=s)

    s = argparse.SUPPRESS
    f = common(sub.add_parser("fit", help="fit an occupancy model"))
    f.add_argument("--sites", default=s)
    f.add_argument("--visits", default=s)
    f.add_argument("--model", default=s,
                   help="naive, kr, poisson, spatial or a short name (krl, pq, spl)")
    f.add_argument("--covariates", default=s, help="L/Q or linear/quadratic")
    f.add_argument("--extra-interaction", dest="extra_interaction",
                   action="store_true", default=s)
    sampler_flags(f)

    pr = common(sub.add_parser("predict", help="posterior predictions at sites"))
    pr.add_argument("--artifact", default=s, help="directory written by fit")
    pr.add_argument("--sites", default=s)
    pr.add_argument("--visits", default=s)
    pr.add_argument("--max-draws", dest="max_draws", type=int, default=s)

    c = common(sub.add_parser("curves", help="marginal probability curves"))
    c.add_argument("--artifact", default=s)
    c.add_argument("--target", choices=["occupancy", "detection", "both"], default=s)
    c.add_argument("--terms", default=s, help="comma-separated base covariates")
    c.add_argument("--grid-points", dest="grid_points", type=int, default=s)
    c.add_argument("--average", action="store_true", default=s,
                   help="average over training covariates instead of fixing at means")
    c.add_argument("--held-at", dest="held_at", action="append", default=s,
                   metavar="NAME=VALUE")
    c.add_argument("--max-draws", dest="max_draws", type=int, default=s)

    cv = common(sub.add_parser("cv", help="K-fold cross-validated Brier scores"))
    cv.add_argument("--sites", default=s)
    cv.add_argument("--visits", default=s)
    cv.add_argument("--models", default=s, help="comma-separated model names")
    cv.add_argument("--folds", type=int, default=s)
    cv.add_argument("--per-site", dest="per_site", action="store_true", default=s)
    cv.add_argument("--extra-interaction", dest="extra_interaction",
                    action="store_true", default=s)
    sampler_flags(cv)

    sm = common(sub.add_parser("simulate", help="simulate a dataset"))
    sm.add_argument("--model", default=s)
    sm.add_argument("--covariates", default=s)
    sm.add_argument("--extra-interaction", dest="extra_interaction",
                    action="store_true", default=s)
    sm.add_argument("--sites", type=int, default=s)
    sm.add_argument("--visits", type=int, default=s)
    for name in ("beta", "alpha"):
        sm.add_argument(f"--{name}", default=s, help="comma-separated coefficients")
    for name in ("psi", "r", "rho", "tau2"):
        sm.add_argument(f"--{name}", type=float, default=s)
    sm.add_argument("--p-missing", dest="p_missing", type=float, default=s)

    q = common(sub.add_parser("qr-demo", help="binary quantile regression identifiability"))
    for name in ("tau", "beta", "gamma", "k"):
        q.add_argument(f"--{name}", default=s)
    q.add_argument("--n", type=int, default=s)
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the JSON config file and explicit flags."""
    cmd = args.command
    cfg = {**_COMMON, **DEFAULTS[cmd], "priors": {}, "sampler": {}}
    if args.config:
        try:
            from_file = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON: {exc}") from exc
        if not isinstance(from_file, dict):
            raise ConfigError("config file must hold a JSON object")
        from_file.pop("command", None)
        from_file.pop("version", None)
        unknown = set(from_file) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys for {cmd}: {sorted(unknown)}")
        for key in ("priors", "sampler"):
            cfg[key].update(from_file.pop(key, {}) or {})
        cfg.update(from_file)
    flags = {k: v for k, v in vars(args).items()
             if k not in ("command", "config", "verbose")}
    for key in list(flags):
        if key in _SAMPLER_KEYS and key != "seed":
            cfg["sampler"][key] = flags.pop(key)
    if "held_at" in flags:
        flags["held_at"] = _held_at(flags["held_at"])
    cfg.update(flags)
    missing = [k for k, v in cfg.items() if v is None]
    if missing:
        raise ConfigError(f"{cmd}: missing required settings {missing}")
    cfg["sampler"]["seed"] = int(cfg["seed"])
    cfg["sampler"]["n_jobs"] = int(cfg["threads"])
    # echo every prior and sampler setting, not only the overridden ones
    cfg["priors"] = PriorConfig.from_dict(cfg["priors"]).to_dict()
    cfg["sampler"] = SamplerConfig.from_dict(cfg["sampler"]).to_dict()
    cfg["command"] = cmd
    cfg["version"] = __version__
    return cfg


def _priors(cfg):
    return PriorConfig.from_dict(cfg["priors"])


def _sampler(cfg):
    return SamplerConfig.from_dict(cfg["sampler"])

def _model(cfg):
    m = parse_model(str(cfg["model"]), str(cfg.get("covariates", "L")))
    if cfg.get("extra_interaction"):
        m = OccupancyModelSpec(m.kind, m.covariates, True)
    return m


def _out(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg)
    return out


def _frame_csv(df, path):
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


# ---------------------------------------------------------------------------
# commands

def cmd_fit(cfg):
    data = ingest(cfg["sites"], cfg["visits"])
    model = _model(cfg)
    out = _out(cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fitted = fit(model, data, _priors(cfg), _sampler(cfg))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    save_fit(fitted, out)
    log.info("wrote %s", out)


def cmd_predict(cfg):
    fitted = load_fit(cfg["artifact"])
    need = fitted.model.kind == "spatial"
    sites = read_sites(cfg["sites"], require_coords=need)
    visits = None
    if cfg["visits"]:
        visits = read_visits(cfg["visits"], require_y=False)
    out = _out(cfg)
    pred = predict(fitted, sites, visits, seed=int(cfg["seed"]),
                   max_draws=int(cfg["max_draws"]) or None)
    _frame_csv(pred.summary(), out / "predictions_sites.csv")
    if visits is not None:
        _frame_csv(pred.visit_summary(), out / "predictions_visits.csv")


def cmd_curves(cfg):
    fitted = load_fit(cfg["artifact"])
    out = _out(cfg)
    targets = (["occupancy", "detection"] if cfg["target"] == "both"
               else [cfg["target"]])
    wanted = [t for t in str(cfg["terms"]).split(",") if t]
    curves, grads = [], []
    for target in targets:
        design = fitted.occ_design if target == "occupancy" else fitted.det_design
        if design is None:
            raise ConfigError("the naive model has no covariates to sweep")
        training = design.raw_base()
        held = {k: v for k, v in cfg["held_at"].items() if k in design.base}
        for j, term in enumerate(design.base):
            if wanted and term not in wanted:
                continue
            lo, hi = training[:, j].min(), training[:, j].max()
            grid = np.linspace(lo, hi, int(cfg["grid_points"]))
            c = marginal_curve(fitted, target, term, grid, held,
                               average=bool(cfg["average"]),
                               max_draws=int(cfg["max_draws"]) or None)
            f = c.to_frame()
            f.insert(0, "target", target)
            curves.append(f)
            g = c.to_frame(gradient=True)
            g.insert(0, "target", target)
            grads.append(g)
    if not curves:
        raise ConfigError(f"no covariate matches --terms {cfg['terms']!r}")
    _frame_csv(pd.concat(curves, ignore_index=True), out / "curves.csv")
    _frame_csv(pd.concat(grads, ignore_index=True), out / "gradients.csv")


def cmd_cv(cfg):
    data = ingest(cfg["sites"], cfg["visits"])
    models = [parse_model(m) for m in str(cfg["models"]).split(",") if m.strip()]
    if cfg["extra_interaction"]:
        models = [OccupancyModelSpec(m.kind, m.covariates, True) for m in models]
    out = _out(cfg)
    report = cross_validate(models, data, int(cfg["folds"]), int(cfg["seed"]),
                            _priors(cfg), _sampler(cfg),
                            per_site=bool(cfg["per_site"]),
                            n_jobs=int(cfg["threads"]))
    report.to_csv(out / "cv_scores.csv")
    summ = report.summary().reset_index()
    _frame_csv(summ, out / "cv_summary.csv")
    folds = pd.DataFrame({"site_id": data.sites["site_id"],
                          "fold": report.plan.assignment})
    _frame_csv(folds, out / "cv_folds.csv")


def cmd_simulate(cfg):
    model = _model(cfg)
    out = _out(cfg)
    ds, truth = simulate(model, int(cfg["sites"]), _floats(cfg["beta"]),
                         _floats(cfg["alpha"]), int(cfg["visits"]),
                         float(cfg["psi"]), float(cfg["r"]), float(cfg["rho"]),
                         float(cfg["tau2"]), float(cfg["p_missing"]),
                         int(cfg["seed"]))
    write_dataset(ds, out)
    record = {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v)
              for k, v in truth.items()}
    write_json(out / "truth.json", record)


def qr_report(tau, beta, gamma, k_values, n, seed) -> dict:
    """Identifiability report for binary quantile regression.

    The latent variable is ``z = b0 + b1 x + (g0 + g1 x) e`` with standard
    normal ``e``; its quantile lines are linear in ``x``.
    """
    rng = np.random.default_rng(seed)
    coefs = heteroskedastic_quantile_coefficients(beta, gamma, tau)
    x = rng.uniform(-2.0, 2.0, n)
    X = np.column_stack([np.ones(n), x])
    sd = gamma[0] + gamma[1] * x
    if np.any(sd <= 0):
        raise ConfigError("gamma must give a positive scale on [-2, 2]")
    y = (beta[0] + beta[1] * x + sd * rng.standard_normal(n) > 0).astype(float)
    levels = []
    for t, b in zip(tau, coefs):
        m = QuantileModel(t, b)
        base_ll = qr_binary_loglik(m, y, X)
        rec = {"tau": t, "beta_tau": b.tolist(),
               "x_intercept": qr_x_intercept(m) if b[1] != 0 else None,
               "relative_effect": qr_relative_effect(b, 1),
               "loglik": base_ll, "scaling": []}
        for k in k_values:
            mk = m.scaled(k)
            rec["scaling"].append({
                "k": k,
                "loglik_diff": qr_binary_loglik(mk, y, X) - base_ll,
                "x_intercept_diff": (qr_x_intercept(mk) - rec["x_intercept"]
                                     if rec["x_intercept"] is not None else None),
                "relative_effect_diff": qr_relative_effect(mk.beta_tau, 1)
                - rec["relative_effect"],
            })
        levels.append(rec)
    # an asymmetric-Laplace auxiliary and a logistic companion with a
    # non-linear systematic component give identical binary likelihoods
    ald = AuxiliarySpec("asymmetric-laplace", coefs[0], skew=tau[0])
    companion = matched_spec(ald, LinkFamily("logit"))
    eq = check_equivalence(ald, companion, np.linspace(-3.0, 3.0, 401))
    return {"levels": levels,
            "equivalent_pair": {"a": f"asymmetric-laplace(tau={tau[0]:g}, linear)",
                                "b": "logistic(non-linear systematic component)",
                                "equivalent": eq.equivalent,
                                "max_abs_diff": eq.max_abs_diff},
            "scaling_invariant": all(
                abs(s["loglik_diff"]) < 1e-8 for lv in levels for s in lv["scaling"])}


def cmd_qr_demo(cfg):
    out = _out(cfg)
    report = qr_report(_floats(cfg["tau"]), _floats(cfg["beta"]),
                       _floats(cfg["gamma"]), _floats(cfg["k"]), int(cfg["n"]),
                       int(cfg["seed"]))
    write_json(out / "qr_report.json", report)
    rows = [{"tau": lv["tau"], "b0": lv["beta_tau"][0], "b1": lv["beta_tau"][1],
             "x_intercept": lv["x_intercept"],
             "relative_effect": lv["relative_effect"]} for lv in report["levels"]]
    _frame_csv(pd.DataFrame(rows), out / "qr_levels.csv")


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "curves": cmd_curves,
            "cv": cmd_cv, "simulate": cmd_simulate, "qr-demo": cmd_qr_demo}


def _exit_code(exc) -> tuple[int, str]:
    if isinstance(exc, IngestionError):
        return EXIT_INGEST, "ingest"
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL, "numerical"
    return EXIT_CONFIG, "config"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg)
    except HBRError as exc:
        code, kind = _exit_code(exc)
        print(f"error[{kind}]: {exc}", file=sys.stderr)
        return code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error[ingest]: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error[numerical]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Saving and loading fitted models as a directory of JSON and CSV files.

Layout::

    model.json      spec, priors, sampler settings, standardization,
                    training covariates, site ids/coordinates, graph edges
    samples.csv     long-format posterior draws (gzip above 1e6 values)
    summary.json    per-parameter mean, sd, quantiles, R-hat and ESS
    edges.csv       neighbourhood graph (spatial model only)
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestionError
from .glm import build_design
from .inference.config import PriorConfig, SamplerConfig
from .inference.diagnostics import diagnostics
from .inference.samplers import FittedModel
from .inference.samples import PosteriorSamples
from .occupancy import OccupancyModelSpec
from .spatial import NeighborhoodGraph, write_edge_list

__all__ = ["SCHEMA", "save_fit", "load_fit", "posterior_summary", "write_json"]

SCHEMA = "hbinreg.model/1"


def write_json(path, obj) -> None:
    """Deterministic JSON (sorted keys, shortest round-trip floats)."""
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def _design_record(design):
    if design is None:
        return None
    return {
        "center": design.center.tolist(),
        "scale": design.scale.tolist(),
        "base": list(design.base),
        "training": design.raw_base().tolist(),
    }


def posterior_summary(samples: PosteriorSamples) -> dict:
    """Per-parameter mean, sd, quantiles and (with >= 2 chains) R-hat / ESS."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        diag = diagnostics(samples)
    out = {}
    for name in samples.names:
        x = samples.pooled(name)
        q = np.quantile(x, [0.025, 0.5, 0.975])
        rec = {"mean": float(x.mean()), "sd": float(x.std(ddof=1)),
               "q2.5": float(q[0]), "median": float(q[1]), "q97.5": float(q[2]),
               "ess": float(diag["ess"][name])}
        if "rhat" in diag:
            rec["rhat"] = float(diag["rhat"][name])
        out[name] = rec
    return {"parameters": out,
            "acceptance": {k: [float(v) for v in vals]
                           for k, vals in samples.acceptance.items()},
            "warnings": []}


def save_fit(fitted: FittedModel, out_dir, compress=None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples_path = fitted.samples.write_csv(out / "samples.csv", compress)
    m = fitted.model
    record = {
        "schema": SCHEMA,
        "model": {"kind": m.kind, "covariates": m.covariates,
                  "extra_interaction": m.extra_interaction, "name": m.name},
        "priors": fitted.priors.to_dict(),
        "sampler": fitted.sampler.to_dict(),
        "occupancy_design": _design_record(fitted.occ_design),
        "detection_design": _design_record(fitted.det_design),
        "site_ids": [str(s) for s in fitted.site_ids],
        "coords": None if fitted.coords is None else fitted.coords.tolist(),
        "edges": None if fitted.graph is None else fitted.graph.edges.tolist(),
        "samples": samples_path.name,
        "acceptance": {k: [float(v) for v in vals]
                       for k, vals in fitted.samples.acceptance.items()},
        "warnings": list(fitted.warnings),
    }
    write_json(out / "model.json", record)
    summary = posterior_summary(fitted.samples)
    summary["warnings"] = list(fitted.warnings)
    write_json(out / "summary.json", summary)
    if fitted.graph is not None:
        write_edge_list(fitted.graph, out / "edges.csv", fitted.site_ids)
    return out


def _rebuild_design(rec, model, target):
    if rec is None:
        return None
    base = np.asarray(rec["training"], dtype=float)
    return build_design(base, model.covariates, target,
                        model.extra_interaction if target == "occupancy" else False,
                        standardization=(rec["center"], rec["scale"]))


def load_fit(path) -> FittedModel:
    """Load a fitted model saved by :func:`save_fit` (directory or model.json)."""
    path = Path(path)
    meta = path / "model.json" if path.is_dir() else path
    try:
        record = json.loads(meta.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestionError(f"cannot read model artifact: {exc}", path=meta) from exc
    if record.get("schema") != SCHEMA:
        raise ConfigError(f"unsupported artifact schema {record.get('schema')!r}; "
                          f"expected {SCHEMA!r}")
    mrec = record["model"]
    model = OccupancyModelSpec(mrec["kind"], mrec["covariates"],
                               mrec["extra_interaction"])
    samples = PosteriorSamples.read_csv(meta.parent / record["samples"])
    samples.acceptance = record.get("acceptance", {})
    coords = None if record["coords"] is None else np.asarray(record["coords"])
    graph = None
    if record["edges"] is not None:
        graph = NeighborhoodGraph.from_edges(len(record["site_ids"]),
                                             record["edges"], coords)
    return FittedModel(
        model=model,
        priors=PriorConfig.from_dict(record["priors"]),
        sampler=SamplerConfig.from_dict(record["sampler"]),
        samples=samples,
        occ_design=_rebuild_design(record["occupancy_design"], model, "occupancy"),
        det_design=_rebuild_design(record["detection_design"], model, "detection"),
        site_ids=np.asarray(record["site_ids"], dtype=object),
        coords=coords,
        graph=graph,
        warnings=list(record.get("warnings", [])),
    )

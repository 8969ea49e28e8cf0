"""Occupancy datasets: validated ingestion from CSV, simulation, export."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import linalg

from .errors import ConfigError, IngestionError
from .glm import build_design
from .occupancy import OccupancyModelSpec, psi as psi_fn, detection_prob
from .spatial import CarStructure, delaunay_adjacency

__all__ = [
    "SITE_COLUMNS",
    "VISIT_COLUMNS",
    "OccupancyDataset",
    "ingest",
    "read_sites",
    "read_visits",
    "simulate",
    "write_dataset",
]

log = logging.getLogger(__name__)

SITE_COLUMNS = ("site_id", "x_km", "y_km", "elevation", "forest")
VISIT_COLUMNS = ("site_id", "visit", "y", "date", "duration")


@dataclass
class OccupancyDataset:
    """Sites with occupancy covariates and (ragged) visit records.

    ``visits`` carries a ``site_index`` column pointing into ``sites``.
    Coordinates are in km, elevation in m, forest in percent, date as day of
    year and duration in hours.
    """

    sites: pd.DataFrame
    visits: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(
        columns=list(VISIT_COLUMNS) + ["site_index"]))

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def n_visits(self) -> int:
        return len(self.visits)

    @property
    def coords(self) -> np.ndarray | None:
        if {"x_km", "y_km"} <= set(self.sites.columns):
            return self.sites[["x_km", "y_km"]].to_numpy(dtype=float)
        return None

    @cached_property
    def padded(self):
        """``(Y, mask, rows)`` as (n_sites, J) arrays; ``rows`` indexes visits."""
        v = self.visits
        n = self.n_sites
        if len(v) == 0:
            return (np.zeros((n, 0)), np.zeros((n, 0), bool),
                    np.zeros((n, 0), int))
        order = np.lexsort((v["visit"].to_numpy(), v["site_index"].to_numpy()))
        si = v["site_index"].to_numpy()[order]
        counts = np.bincount(si, minlength=n)
        J = counts.max()
        slot = np.arange(len(si)) - np.repeat(np.cumsum(counts) - counts, counts)
        rows = np.full((n, J), -1)
        rows[si, slot] = order
        mask = rows >= 0
        Y = np.zeros((n, J))
        Y[mask] = v["y"].to_numpy(dtype=float)[rows[mask]]
        return Y, mask, rows

    @property
    def detected(self) -> np.ndarray:
        Y, mask, _ = self.padded
        return (Y * mask).sum(axis=1) > 0

    def subset(self, site_idx) -> "OccupancyDataset":
        site_idx = np.asarray(site_idx, dtype=int)
        sites = self.sites.iloc[site_idx].reset_index(drop=True)
        remap = np.full(self.n_sites, -1)
        remap[site_idx] = np.arange(len(site_idx))
        v = self.visits
        keep = remap[v["site_index"].to_numpy(dtype=int)] >= 0
        visits = v.loc[keep].copy()
        visits["site_index"] = remap[visits["site_index"].to_numpy(dtype=int)]
        return OccupancyDataset(sites, visits.reset_index(drop=True))

    def summary(self) -> str:
        _, mask, _ = self.padded
        per_site = mask.sum(axis=1)
        J = mask.shape[1]
        hist = {k: int(np.sum(per_site == k)) for k in range(J + 1)}
        return (f"{self.n_sites} sites, {self.n_visits} visit rows, "
                f"{int(self.detected.sum())} sites with detections; "
                f"sites by number of visits: {hist}")


def _read_table(path, required, kinds):
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(str(exc), path=path) from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError("empty file", path=path, line=1) from None
        missing = [c for c in required if c not in header]
        if missing:
            raise IngestionError(f"missing columns {missing}", path=path, line=1)
        pos = {c: header.index(c) for c in required}
        out = {c: [] for c in required}
        lines = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise IngestionError(
                    f"expected {len(header)} fields, found {len(row)}",
                    path=path, line=lineno)
            for c in required:
                cell = row[pos[c]].strip()
                if kinds.get(c) is str:
                    out[c].append(cell)
                    continue
                try:
                    val = float(cell)
                except ValueError:
                    raise IngestionError(
                        f"non-numeric value {cell!r} in column {c!r}",
                        path=path, line=lineno) from None
                if not np.isfinite(val):
                    raise IngestionError(f"non-finite value in column {c!r}",
                                         path=path, line=lineno)
                out[c].append(val)
            lines.append(lineno)
    df = pd.DataFrame(out)
    df["_line"] = lines
    return df


def read_sites(path, require_coords=True) -> pd.DataFrame:
    """Read a sites CSV (``site_id, x_km, y_km, elevation, forest``)."""
    cols = SITE_COLUMNS if require_coords else (
        "site_id", "elevation", "forest")
    df = _read_table(path, cols, {"site_id": str})
    dup = df["site_id"].duplicated()
    if dup.any():
        row = df.loc[dup].iloc[0]
        raise IngestionError(f"duplicate site_id {row['site_id']!r}",
                             path=path, line=int(row["_line"]))
    return df.drop(columns="_line")


def read_visits(path, require_y=True) -> pd.DataFrame:
    """Read a visits CSV; ``y`` may be absent when only predicting."""
    cols = VISIT_COLUMNS if require_y else tuple(
        c for c in VISIT_COLUMNS if c != "y")
    df = _read_table(path, cols, {"site_id": str})
    _check_visits(df, path, require_y)
    df = df.drop(columns="_line")
    df["visit"] = df["visit"].astype(int)
    if require_y:
        df["y"] = df["y"].astype(int)
    return df


def _check_visits(visits, path, check_y=True):
    if check_y:
        bad_y = ~visits["y"].isin([0.0, 1.0])
        if bad_y.any():
            row = visits.loc[bad_y].iloc[0]
            raise IngestionError(f"y must be 0 or 1, found {row['y']:g}",
                                 path=path, line=int(row["_line"]))
    if not np.all(visits["visit"] == np.round(visits["visit"])):
        row = visits.loc[visits["visit"] != np.round(visits["visit"])].iloc[0]
        raise IngestionError("visit index must be an integer",
                             path=path, line=int(row["_line"]))
    dup = visits.duplicated(subset=["site_id", "visit"])
    if dup.any():
        row = visits.loc[dup].iloc[0]
        raise IngestionError(
            f"duplicate visit {int(row['visit'])} for site {row['site_id']!r}",
            path=path, line=int(row["_line"]))


def ingest(sites_path, visits_path) -> OccupancyDataset:
    """Load and validate the two input CSVs."""
    sites = read_sites(sites_path)
    visits = _read_table(visits_path, VISIT_COLUMNS, {"site_id": str})
    index = pd.Series(np.arange(len(sites)), index=sites["site_id"])
    known = visits["site_id"].isin(index.index)
    if not known.all():
        row = visits.loc[~known].iloc[0]
        raise IngestionError(f"unknown site_id {row['site_id']!r}",
                             path=visits_path, line=int(row["_line"]))
    _check_visits(visits, visits_path)
    visits = visits.drop(columns="_line")
    visits["visit"] = visits["visit"].astype(int)
    visits["y"] = visits["y"].astype(int)
    visits["site_index"] = index.loc[visits["site_id"]].to_numpy()
    ds = OccupancyDataset(sites, visits)
    log.info("ingested %s", ds.summary())
    return ds


def write_dataset(ds: OccupancyDataset, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sp, vp = out / "sites.csv", out / "visits.csv"
    ds.sites[list(SITE_COLUMNS)].to_csv(sp, index=False, float_format="%.17g")
    ds.visits[list(VISIT_COLUMNS)].to_csv(vp, index=False, float_format="%.17g")
    return sp, vp


# ---------------------------------------------------------------------------
# simulation

def _raw_sites(n, rng):
    return pd.DataFrame({
        "site_id": [f"s{i:04d}" for i in range(n)],
        "x_km": rng.uniform(0.0, 350.0, n),
        "y_km": rng.uniform(0.0, 220.0, n),
        "elevation": rng.uniform(250.0, 2750.0, n),
        "forest": rng.uniform(0.0, 100.0, n),
    })


def simulate(model: OccupancyModelSpec, n_sites: int, beta=None, alpha=None,
             n_visits: int = 3, psi: float = 0.6, r: float = 0.5,
             rho: float = 0.9, tau2: float = 1.0, p_missing: float = 0.0,
             seed: int = 0):
    """Simulate a dataset from one of the occupancy models.

    Coefficients act on the standardized design that ``fit`` will build from
    the simulated raw covariates, so they are directly comparable with
    posterior draws.  Returns ``(dataset, truth)``.
    """
    rng = np.random.default_rng(seed)
    sites = _raw_sites(n_sites, rng)
    rows = []
    for i in range(n_sites):
        for j in range(1, n_visits + 1):
            if j > 1 and rng.random() < p_missing:
                continue
            rows.append((sites["site_id"][i], j, i,
                         float(rng.integers(103, 209)),
                         float(rng.uniform(1.5, 9.5))))
    visits = pd.DataFrame(rows, columns=["site_id", "visit", "site_index",
                                         "date", "duration"])
    truth = {"model": model.name}
    if model.kind == "naive":
        psi_i = np.full(n_sites, psi)
        r_v = np.full(len(visits), r)
        truth.update(psi=psi, r=r)
    else:
        X = build_design(sites, model.covariates, "occupancy",
                         model.extra_interaction)
        W = build_design(visits, model.covariates, "detection")
        beta = np.asarray(beta, dtype=float)
        alpha = np.asarray(alpha, dtype=float)
        if beta.shape != (X.q,) or alpha.shape != (W.q,):
            raise ConfigError(
                f"{model.name} needs {X.q} occupancy and {W.q} detection "
                f"coefficients, got {beta.size} and {alpha.size}")
        zeta = None
        if model.kind == "spatial":
            car = CarStructure(delaunay_adjacency(sites[["x_km", "y_km"]]
                                                  .to_numpy()), rho, tau2)
            L = car.cholesky()
            zeta = linalg.solve_triangular(L.T, rng.standard_normal(n_sites),
                                           lower=False)
            truth.update(zeta=zeta, rho=rho, tau2=tau2)
        psi_i = psi_fn(model, beta, zeta if zeta is not None else 0.0, X.values)
        r_v = detection_prob(model, alpha, W.values)
        truth.update(beta=beta, alpha=alpha)
    occupied = rng.random(n_sites) < psi_i
    si = visits["site_index"].to_numpy()
    y = (occupied[si] & (rng.random(len(visits)) < r_v)).astype(int)
    visits.insert(2, "y", y)
    truth["occupied"] = occupied
    visits = visits[list(VISIT_COLUMNS) + ["site_index"]]
    return OccupancyDataset(sites, visits), truth

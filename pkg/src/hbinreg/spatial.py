"""Delaunay neighbourhood graphs and first-order CAR precision structures."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import csgraph
from scipy.spatial import ConvexHull

from .errors import (
    DegenerateGeometryError,
    DisconnectedGraphError,
    DomainError,
    NotPositiveDefiniteError,
    ShapeError,
)

__all__ = [
    "NeighborhoodGraph",
    "CarStructure",
    "delaunay_adjacency",
    "delaunay_triangles",
    "car_precision",
    "gmrf_logdensity",
    "conditional_gaussian_draw",
    "write_edge_list",
]

_LOG_2PI = np.log(2.0 * np.pi)

# Lift perturbation, relative to the unit-normalized paraboloid.  Large
# enough to clear qhull's merge tolerance, small enough to act only on
# (near-)cocircular configurations.
_TIE_BREAK = 1e-9


def _check_coords(coords) -> np.ndarray:
    pts = np.asarray(coords, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ShapeError("coordinates must have shape (n, 2)")
    if pts.shape[0] < 3:
        raise DegenerateGeometryError("need at least 3 sites to triangulate")
    if not np.all(np.isfinite(pts)):
        raise DegenerateGeometryError("non-finite site coordinates")
    _, inverse, counts = np.unique(pts, axis=0, return_inverse=True,
                                   return_counts=True)
    inverse = np.asarray(inverse).ravel()
    if np.any(counts > 1):
        dup = np.flatnonzero(counts[inverse] > 1)
        raise DegenerateGeometryError(
            f"duplicate coordinates at sites {dup.tolist()}; deduplicate first")
    centred = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[1] <= 1e-12 * sv[0]:
        raise DegenerateGeometryError("all sites are collinear")
    return pts


def delaunay_triangles(coords) -> np.ndarray:
    """Delaunay triangles (m, 3) of planar points.

    Computed as the lower convex hull of the points lifted onto a paraboloid.
    Heights carry a small perturbation increasing with input order, so
    cocircular configurations resolve to one reproducible triangulation.
    """
    pts = _check_coords(coords)
    n = pts.shape[0]
    if n == 3:
        return np.array([[0, 1, 2]])
    span = np.ptp(pts, axis=0).max()
    u = (pts - pts.mean(axis=0)) / span
    lift = np.sum(u**2, axis=1) + _TIE_BREAK * np.arange(1, n + 1) / n
    hull = ConvexHull(np.column_stack([u, lift]))
    lower = hull.equations[:, 2] < -1e-12
    return np.sort(hull.simplices[lower], axis=1)


def _edges_from_triangles(tri: np.ndarray) -> np.ndarray:
    e = np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [0, 2]]])
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


class NeighborhoodGraph:
    """Symmetric binary adjacency over sites, immutable after construction."""

    def __init__(self, adjacency, coordinates=None, check_connected=True):
        A = sparse.csr_matrix(adjacency, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise ShapeError("adjacency must be square")
        A.eliminate_zeros()
        if abs(A - A.T).nnz:
            raise ShapeError("adjacency must be symmetric")
        if np.any(A.diagonal() != 0):
            raise ShapeError("adjacency must have a zero diagonal")
        if np.any(A.data != 1):
            raise ShapeError("adjacency must be binary")
        if check_connected:
            ncomp, labels = csgraph.connected_components(A, directed=False)
            if ncomp > 1:
                raise DisconnectedGraphError(
                    f"neighbourhood graph has {ncomp} components; "
                    "the CAR model requires a connected graph")
        self.adjacency = A
        self.coordinates = (None if coordinates is None
                            else np.asarray(coordinates, dtype=float))

    @classmethod
    def from_edges(cls, n, edges, coordinates=None, check_connected=True):
        edges = np.asarray(edges, dtype=int).reshape(-1, 2)
        data = np.ones(2 * len(edges))
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        A = sparse.csr_matrix((data, (rows, cols)), shape=(n, n))
        A.data[:] = 1.0
        return cls(A, coordinates, check_connected)

    @property
    def n_sites(self) -> int:
        return self.adjacency.shape[0]

    @cached_property
    def edges(self) -> np.ndarray:
        upper = sparse.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return np.column_stack([upper.row[order], upper.col[order]])

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    @cached_property
    def spectrum(self) -> np.ndarray:
        """Eigenvalues of ``D^{-1/2} A D^{-1/2}``, all in ``[-1, 1]``.

        ``log det(D - rho A) = sum log d + sum log(1 - rho lambda)`` so one
        symmetric eigensolve per graph serves every value of rho.
        """
        d = self.degrees
        if np.any(d == 0):
            raise NotPositiveDefiniteError("graph has isolated sites")
        s = 1.0 / np.sqrt(d)
        M = self.adjacency.multiply(s[:, None]).multiply(s[None, :]).toarray()
        return linalg.eigvalsh(M)

    @cached_property
    def coloring(self) -> list:
        """Greedy colour classes; sites in one class share no edge."""
        A = self.adjacency
        colors = np.full(self.n_sites, -1)
        order = np.argsort(-self.degrees, kind="stable")
        for i in order:
            used = set(colors[A.indices[A.indptr[i]:A.indptr[i + 1]]])
            c = 0
            while c in used:
                c += 1
            colors[i] = c
        return [np.flatnonzero(colors == c) for c in range(colors.max() + 1)]

    def permuted(self, perm) -> "NeighborhoodGraph":
        """Graph with site ``k`` of the result equal to site ``perm[k]``."""
        perm = np.asarray(perm)
        A = self.adjacency[perm][:, perm]
        coords = None if self.coordinates is None else self.coordinates[perm]
        return NeighborhoodGraph(A, coords, check_connected=False)


def delaunay_adjacency(coords) -> NeighborhoodGraph:
    """Adjacency of the Delaunay triangulation of site coordinates (km)."""
    tri = delaunay_triangles(coords)
    pts = np.asarray(coords, dtype=float)
    return NeighborhoodGraph.from_edges(len(pts), _edges_from_triangles(tri),
                                        coordinates=pts)


@dataclass(frozen=True)
class CarStructure:
    graph: NeighborhoodGraph
    rho: float
    tau2: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise DomainError(f"rho must lie in (0, 1), got {self.rho}")
        if not self.tau2 > 0:
            raise DomainError(f"tau2 must be positive, got {self.tau2}")

    @property
    def D(self) -> np.ndarray:
        return self.graph.degrees

    def precision(self) -> sparse.csr_matrix:
        return car_precision(self)

    def logdet(self) -> float:
        return car_logdet(self.graph, self.rho, self.tau2)

    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor of Q (dense)."""
        try:
            return linalg.cholesky(self.precision().toarray(), lower=True)
        except linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(str(exc)) from exc


def car_precision(car: CarStructure) -> sparse.csr_matrix:
    """``tau2 * (D - rho A)``."""
    g = car.graph
    Q = sparse.diags(g.degrees) - car.rho * g.adjacency
    return sparse.csr_matrix(car.tau2 * Q)


def car_logdet(graph: NeighborhoodGraph, rho: float, tau2: float = 1.0) -> float:
    terms = 1.0 - rho * graph.spectrum
    if np.any(terms <= 0):
        raise NotPositiveDefiniteError(f"D - rho A is not PD at rho={rho}")
    n = graph.n_sites
    return float(n * np.log(tau2) + np.sum(np.log(graph.degrees))
                 + np.sum(np.log(terms)))


def car_quadform(graph: NeighborhoodGraph, zeta, rho: float) -> float:
    """``zeta' (D - rho A) zeta``."""
    zeta = np.asarray(zeta, dtype=float)
    return float(zeta @ (graph.degrees * zeta) - rho * zeta @ (graph.adjacency @ zeta))


def gmrf_logdensity(zeta, car: CarStructure) -> float:
    """``log N(zeta; 0, Q^{-1})``."""
    zeta = np.asarray(zeta, dtype=float)
    g = car.graph
    if zeta.shape != (g.n_sites,):
        raise ShapeError(f"zeta must have length {g.n_sites}")
    return (0.5 * car.logdet()
            - 0.5 * car.tau2 * car_quadform(g, zeta, car.rho)
            - 0.5 * g.n_sites * _LOG_2PI)


def conditional_gaussian_draw(Q, free, fixed, fixed_values, rng):
    """Draw the ``free`` block of ``N(0, Q^{-1})`` given the ``fixed`` block.

    Uses ``zeta_f | zeta_x ~ N(-Q_ff^{-1} Q_fx zeta_x, Q_ff^{-1})`` with a
    dense Cholesky of ``Q_ff``.  Each row of ``fixed_values`` (m, n_fixed)
    gets one independent draw; returns (m, n_free).
    """
    Q = sparse.csr_matrix(Q)
    free = np.asarray(free, dtype=int)
    fixed = np.asarray(fixed, dtype=int)
    Qff = Q[free][:, free].toarray()
    Qfx = Q[free][:, fixed]
    try:
        L = linalg.cholesky(Qff, lower=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    vals = np.atleast_2d(np.asarray(fixed_values, dtype=float))
    mean = linalg.cho_solve((L, True), -(Qfx @ vals.T)).T
    eps = rng.standard_normal((vals.shape[0], len(free)))
    return mean + linalg.solve_triangular(L.T, eps.T, lower=False).T


def write_edge_list(graph: NeighborhoodGraph, path, site_ids=None) -> None:
    ids = np.arange(graph.n_sites) if site_ids is None else np.asarray(site_ids)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["site_a", "site_b"])
        for i, j in graph.edges:
            w.writerow([ids[i], ids[j]])

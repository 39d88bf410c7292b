"""Voxel-weighted grid graphs and the Dirichlet solver.

Every domain is a graph whose edges carry conductances assembled from
voxel weights: a voxel of weight w and side h contributes h*w/4 to each of
its 12 edges. The discrete energy sum_e c_e (u_i - u_j)^2 is then the
voxel average of |grad u|^2 times the voxel volume, and minimizing it with
uniform weights gives the 7-point Laplacian. Doubled cells are branched
graphs: the K region exists twice, glued along its boundary nodes, each
copy carrying half weight.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DIRECT_LIMIT = 20_000


class SolverError(RuntimeError):
    """Raised when an iterative solve misses its tolerance."""


@dataclass
class WeightedGraph:
    coords: np.ndarray
    edges: np.ndarray
    conductance: np.ndarray
    h: float
    _laplacian: Optional[sp.csr_matrix] = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return len(self.coords)

    def laplacian(self) -> sp.csr_matrix:
        if self._laplacian is None:
            i, j, c = self.edges[:, 0], self.edges[:, 1], self.conductance
            n = self.size
            off = sp.coo_matrix((np.concatenate([-c, -c]), (np.concatenate([i, j]),
                                np.concatenate([j, i]))), shape=(n, n))
            diag = np.bincount(i, c, n) + np.bincount(j, c, n)
            self._laplacian = (off + sp.diags(diag)).tocsr()
        return self._laplacian

    def energy(self, u: np.ndarray, v: Optional[np.ndarray] = None) -> float:
        """sum_e c_e du dv (du^2 when v is omitted); vector fields sum components."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        du = u[i] - u[j]
        dv = du if v is None else v[i] - v[j]
        if du.ndim == 1:
            return float(np.dot(self.conductance, du * dv))
        return float(np.dot(self.conductance, np.sum(du * dv, axis=1)))


def _box_edges(shape, ids, weights, h):
    """Edges and conductances of a node box given voxel weights."""
    nx, ny, nz = shape
    w = np.broadcast_to(np.asarray(weights, float), (nx - 1, ny - 1, nz - 1))
    wp = np.zeros((nx + 1, ny + 1, nz + 1))
    wp[1:-1, 1:-1, 1:-1] = w
    out_e, out_c = [], []
    for axis in range(3):
        # voxel sums around each edge along `axis`
        sl = [slice(None)] * 3
        sl[axis] = slice(1, -1)
        others = [a for a in range(3) if a != axis]
        acc = 0.0
        for da in (0, 1):
            for db in (0, 1):
                s = list(sl)
                s[others[0]] = slice(da, wp.shape[others[0]] - 1 + da)
                s[others[1]] = slice(db, wp.shape[others[1]] - 1 + db)
                acc = acc + wp[tuple(s)]
        c = h * acc / 4.0
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[axis] = slice(0, -1)
        b[axis] = slice(1, None)
        ia, ib = ids[tuple(a)].ravel(), ids[tuple(b)].ravel()
        c = c.ravel()
        keep = c > 0
        out_e.append(np.stack([ia[keep], ib[keep]], 1))
        out_c.append(c[keep])
    return np.vstack(out_e), np.concatenate(out_c)


def box_graph(n: Union[int, tuple], h: float, origin=(0.0, 0.0, 0.0), weights=1.0) -> WeightedGraph:
    shape = (n, n, n) if np.isscalar(n) else tuple(n)
    shape = tuple(s + 1 for s in shape)
    ids = np.arange(np.prod(shape)).reshape(shape)
    edges, cond = _box_edges(shape, ids, weights, h)
    grid = np.stack(np.meshgrid(*[np.arange(s) for s in shape], indexing="ij"), -1).reshape(-1, 3)
    coords = np.asarray(origin, float) + h * grid
    return WeightedGraph(coords, edges, cond, h)


@dataclass
class Domain:
    """A graph with a default Dirichlet mask and optional node labels."""
    kind: str
    graph: WeightedGraph
    dirichlet: np.ndarray
    index: np.ndarray
    copy: np.ndarray
    params: dict = field(default_factory=dict)

    def descriptor(self) -> dict:
        return {"kind": self.kind, "h": self.graph.h, "nodes": self.graph.size, **self.params}


def cube_domain(n: int, side: float = 1.0, origin=(0.0, 0.0, 0.0)) -> Domain:
    g = box_graph(n, side / n, origin)
    idx = np.rint((g.coords - np.asarray(origin)) / g.h).astype(np.int64)
    bd = np.any((idx == 0) | (idx == n), axis=1)
    return Domain("cube", g, bd, idx, np.zeros(g.size, np.int8), {"n": n, "side": side})


def annulus_domain(n: int, s: float, side: float = 1.0, octant=False) -> Domain:
    """Cube of the given side minus the concentric cube of side s.

    The inner cube must be grid aligned. octant may be a bool or a triple
    of per-axis flags; each flagged axis keeps only the lower half
    [0, side/2], the mirror plane carries natural boundary conditions and
    energies must be multiplied by 2 per flagged axis (see `symmetry_factor`).
    """
    h = side / n
    k_in = (side - s) / 2 / h
    if abs(k_in - round(k_in)) > 1e-9 or n % 2:
        raise ValueError("grid spacing must divide the annulus geometry")
    k_in = int(round(k_in))
    mirror = (bool(octant),) * 3 if np.isscalar(octant) else tuple(bool(v) for v in octant)
    shape = tuple(n // 2 if f else n for f in mirror)
    g = box_graph(shape, h)
    idx = np.rint(g.coords / h).astype(np.int64)
    far = np.where(mirror, -1, n)
    outer = np.any((idx == 0) | (idx == far), axis=1)
    inner = np.all((idx >= k_in) & (idx <= n - k_in), axis=1)
    return Domain("annulus", g, outer | inner, idx, inner.astype(np.int8),
                  {"n": n, "s": s, "side": side, "octant": list(mirror)})


def symmetry_factor(domain: Domain) -> int:
    """Number of mirror images covering the full domain."""
    o = domain.params.get("octant", False)
    if isinstance(o, (list, tuple)):
        return 2 ** sum(bool(v) for v in o)
    return 8 if o else 1


def shell_domain(n: int, r_in: float, r_out: float, octant: bool = True,
                 cut_cells: bool = True) -> Domain:
    """Spherical shell r_in < |x| < r_out on the grid of [-r_out, r_out]^3.

    Nodes outside the shell are Dirichlet: copy tag 1 inside, 0 outside.
    With cut_cells=True each edge crossing a sphere is shortened to the
    crossing point (its conductance divided by the crossing fraction) and
    the Dirichlet node takes the boundary value there.
    """
    h = 2 * r_out / n
    if n % 2:
        raise ValueError("n must be even")
    m = n // 2 if octant else n
    origin = np.zeros(3) if octant else -r_out * np.ones(3)
    g = box_graph(m, h, origin)
    rad = np.linalg.norm(g.coords, axis=1)
    inner = rad <= r_in
    outer = rad >= r_out
    if cut_cells:
        i, j = g.edges[:, 0], g.edges[:, 1]
        cond = g.conductance.copy()
        for a, b in ((i, j), (j, i)):
            free = ~(inner[a] | outer[a])
            for mask, radius in ((inner[b], r_in), (outer[b], r_out)):
                sel = free & mask
                if not np.any(sel):
                    continue
                pa, pb = g.coords[a[sel]], g.coords[b[sel]]
                theta = _sphere_crossing(pa, pb, radius)
                cond[sel] = cond[sel] / np.maximum(theta, 1e-3)
        g = WeightedGraph(g.coords, g.edges, cond, h)
    idx = np.rint((g.coords - origin) / h).astype(np.int64)
    return Domain("shell", g, inner | outer, idx, inner.astype(np.int8),
                  {"n": n, "r_in": r_in, "r_out": r_out, "octant": octant,
                   "cut_cells": cut_cells})


def _sphere_crossing(pa, pb, radius):
    """Fraction t in (0, 1] with |pa + t (pb - pa)| = radius."""
    d = pb - pa
    a = np.sum(d * d, axis=1)
    b = 2 * np.sum(pa * d, axis=1)
    c = np.sum(pa * pa, axis=1) - radius**2
    disc = np.sqrt(np.maximum(b * b - 4 * a * c, 0))
    t1 = (-b - disc) / (2 * a)
    t2 = (-b + disc) / (2 * a)
    t = np.where((t1 > 0) & (t1 <= 1 + 1e-12), t1, t2)
    return np.clip(t, 1e-12, 1.0)


def doubled_cell_domain(m: int, M: int, side: float = 1.0, origin=(0.0, 0.0, 0.0)) -> Domain:
    """A cube whose middle third is doubled, resolved with M intervals per
    subcell of side side/m.

    Copy tags: 0 outside the open K, 1 green copy, 2 red copy. Nodes on the
    boundary of K are shared. Each K copy carries voxel weight 1/2.
    """
    n = m * M
    h = side / n
    lo_k, hi_k = n // 3, 2 * n // 3
    shape = (n + 1,) * 3
    base_ids = np.arange(np.prod(shape)).reshape(shape)
    vox = np.ones((n, n, n))
    vox[lo_k:hi_k, lo_k:hi_k, lo_k:hi_k] = 0.5
    e1, c1 = _box_edges(shape, base_ids, vox, h)

    k_shape = (hi_k - lo_k + 1,) * 3
    sub = base_ids[lo_k : hi_k + 1, lo_k : hi_k + 1, lo_k : hi_k + 1]
    interior = np.zeros(k_shape, bool)
    interior[1:-1, 1:-1, 1:-1] = True
    n_red = int(interior.sum())
    red_ids = sub.copy()
    red_ids[interior] = base_ids.size + np.arange(n_red)
    e2, c2 = _box_edges(k_shape, red_ids, 0.5, h)

    grid = np.stack(np.meshgrid(*[np.arange(s) for s in shape], indexing="ij"), -1).reshape(-1, 3)
    red_grid = np.stack(np.meshgrid(*[np.arange(s) for s in k_shape], indexing="ij"),
                        -1)[interior] + lo_k
    index = np.vstack([grid, red_grid])
    coords = np.asarray(origin, float) + h * index
    copy = np.zeros(len(index), np.int8)
    base_in_k = np.all((grid > lo_k) & (grid < hi_k), axis=1)
    copy[: base_ids.size][base_in_k] = 1
    copy[base_ids.size :] = 2
    g = WeightedGraph(coords, np.vstack([e1, e2]), np.concatenate([c1, c2]), h)
    bd = np.any((index == 0) | (index == n), axis=1)
    return Domain("doubled", g, bd, index, copy, {"m": m, "M": M, "side": side})


def subdivided_cell_domain(m: int, M: int, side: float = 1.0, origin=(0.0, 0.0, 0.0)) -> Domain:
    d = cube_domain(m * M, side, origin)
    d.kind = "subdivided"
    d.params.update({"m": m, "M": M})
    return d


def skeleton_mask(domain: Domain, M: int) -> np.ndarray:
    """Nodes on faces of the subcells (side M grid steps)."""
    return np.any(domain.index % M == 0, axis=1)


def gate_boundary_mask(domain: Domain, m: int, M: int) -> np.ndarray:
    """Nodes on the boundary of the central subcell, in both copies."""
    c = (m - 1) // 2
    lo, hi = c * M, (c + 1) * M
    idx = domain.index
    in_closed = np.all((idx >= lo) & (idx <= hi), axis=1)
    on_face = np.any((idx == lo) | (idx == hi), axis=1)
    return in_closed & on_face


@dataclass
class GridField:
    domain: Domain
    values: np.ndarray
    dirichlet: np.ndarray
    residual: float = 0.0
    iterations: int = 0

    @property
    def h(self) -> float:
        return self.domain.graph.h

    @property
    def components(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[1]

    def boundary_values(self) -> np.ndarray:
        return self.values[self.dirichlet]

    def dump(self) -> tuple:
        """(header dict, raw little-endian float64 bytes) for flat binary dumps."""
        header = {**self.domain.descriptor(), "components": self.components,
                  "order": "node"}
        return header, np.ascontiguousarray(self.values, dtype="<f8").tobytes()


class FactorizedDirichlet:
    """A Dirichlet problem on a fixed graph and mask, factorized once."""

    def __init__(self, graph: WeightedGraph, mask: np.ndarray):
        lap = graph.laplacian()
        self.graph = graph
        self.mask = np.asarray(mask, bool)
        self.free = np.flatnonzero(~self.mask)
        self.fixed = np.flatnonzero(self.mask)
        self.l_ff = lap[self.free][:, self.free].tocsc()
        self.l_fd = lap[self.free][:, self.fixed].tocsr()
        self.diag = lap.diagonal()[self.free]
        self._lu = None
        if len(self.free) and len(self.free) <= DIRECT_LIMIT:
            self._lu = spla.splu(self.l_ff)

    def solve(self, data: np.ndarray, tol: float = 1e-8, max_iter: Optional[int] = None):
        """data holds values on the fixed nodes (one column per right-hand side).

        Returns (free values, residual, iterations).
        """
        data = np.asarray(data, float)
        rhs = -(self.l_fd @ data)
        if not len(self.free):
            return np.zeros((0,) + data.shape[1:]), 0.0, 0
        if self._lu is not None:
            x = self._lu.solve(rhs)
            iters = 0
        else:
            cols = rhs if rhs.ndim == 2 else rhs[:, None]
            pre = sp.diags(1.0 / self.diag)
            out, iters = [], 0
            for col in cols.T:
                count = [0]

                def cb(_):
                    count[0] += 1
                scale = max(np.linalg.norm(col), 1e-300)
                x0, info = spla.cg(self.l_ff, col, rtol=min(tol * 1e-2, 1e-10), atol=0.0,
                                   maxiter=max_iter, M=pre, callback=cb)
                if info > 0 and np.linalg.norm(self.l_ff @ x0 - col) > tol * scale:
                    raise SolverError(f"CG did not converge in {count[0]} iterations")
                out.append(x0)
                iters = max(iters, count[0])
            x = np.stack(out, 1)
            if rhs.ndim == 1:
                x = x[:, 0]
        res = self.residual(x, rhs, data)
        return x, res, iters

    def residual(self, x, rhs, data) -> float:
        """sup |(L u)_i| / L_ii over free nodes, relative to the data scale."""
        r = self.l_ff @ x - rhs
        scale = max(float(np.max(np.abs(data))) if data.size else 0.0, 1e-300)
        rr = r / (self.diag if r.ndim == 1 else self.diag[:, None])
        return float(np.max(np.abs(rr))) / scale if rr.size else 0.0


def solve_dirichlet(domain: Domain, boundary: Union[Callable, np.ndarray],
                    tol: float = 1e-8, max_iter: Optional[int] = None,
                    mask: Optional[np.ndarray] = None,
                    solver: Optional[FactorizedDirichlet] = None) -> GridField:
    """Harmonic extension of boundary data into the free nodes of a domain.

    boundary is either a callable on node coordinates (returning (N,) or
    (N, m) values) or an array of values for all nodes (only the masked
    entries are used). Vector data are solved componentwise.
    """
    mask = domain.dirichlet if mask is None else np.asarray(mask, bool)
    if callable(boundary):
        full = np.asarray(boundary(domain.graph.coords), float)
    else:
        full = np.asarray(boundary, float)
    if full.shape[0] != domain.graph.size:
        raise ValueError("boundary data must cover every node")
    solver = solver or FactorizedDirichlet(domain.graph, mask)
    x, res, iters = solver.solve(full[mask], tol, max_iter)
    values = full.copy()
    values[~mask] = x
    if res > tol:
        raise SolverError(f"residual {res:.3e} above tolerance {tol:.1e}")
    return GridField(domain, values, mask, res, iters)


def dirichlet_energy(field_or_graph, values: Optional[np.ndarray] = None) -> float:
    """Discrete Dirichlet energy (voxel-weighted, halved on doubled copies)."""
    if isinstance(field_or_graph, GridField):
        return field_or_graph.domain.graph.energy(field_or_graph.values)
    return field_or_graph.energy(values)

"""Piecewise harmonic approximations g_j f, h_j f and their energies.

Each cell Q of X_{j-1} is resolved on its own graph: doubled cells on the
branched graph (outer part plus two half-weight K copies), subdivided
gates on a plain cube. Three Dirichlet masks on the same graph give
  g_j     : f on the faces of every cell of X_j,
  h_j     : f on the boundary of Q and of both gate cells,
  g_{j-1} : f on the boundary of Q only (the lift of g_{j-1} f).
Because the graphs coincide, the energy identities hold exactly up to
solver tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..complex import GREEN, RED, WILD, Complex, PointSet, classify
from ..functions import LipschitzFunction
from ..report import ExperimentReport
from .grid import (FactorizedDirichlet, doubled_cell_domain, gate_boundary_mask,
                   skeleton_mask, subdivided_cell_domain)

KINDS = ("g", "h", "gprev")


@dataclass
class EnergyLedger:
    level: int
    M: int
    E_g: float
    E_h: float
    E_gprev: float
    cross_p1: float
    cross_p9: float
    diff_gh: float
    diff_hgprev: float
    glip: float
    residual: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)

    @property
    def p1_normalized(self) -> float:
        return self.cross_p1 / self.E_h if self.E_h > 0 else abs(self.cross_p1)

    @property
    def p9_normalized(self) -> float:
        return self.cross_p9 / self.E_h if self.E_h > 0 else abs(self.cross_p9)

    def identity_gap(self) -> tuple:
        """Normalized gaps of E_g - E_h = |grad(g-h)|^2 and E_h - E_gprev = |grad(h-gprev)|^2."""
        scale = max(self.E_h, 1e-300)
        return ((self.E_g - self.E_h - self.diff_gh) / scale,
                (self.E_h - self.E_gprev - self.diff_hgprev) / scale)


@dataclass
class CellFields:
    """Node values of the three approximations over one cell type."""
    domain: object
    origins: np.ndarray
    weights: np.ndarray
    values: dict = field(default_factory=dict)


@dataclass
class PiecewiseResult:
    level: int
    M: int
    doubled: Optional[CellFields]
    subdivided: Optional[CellFields]
    ledger: EnergyLedger


_SOLVER_CACHE: dict = {}


def _solver(kind, m, M, side, mask_name, domain, mask):
    key = (kind, m, M, float(side), mask_name)
    s = _SOLVER_CACHE.get(key)
    if s is None:
        if len(_SOLVER_CACHE) > 24:
            _SOLVER_CACHE.clear()
        s = FactorizedDirichlet(domain.graph, mask)
        _SOLVER_CACHE[key] = s
    return s


def _node_words(space: Complex, bases: np.ndarray, cell_word: np.ndarray, copy: np.ndarray,
                j: int, doubled: bool) -> np.ndarray:
    cls = classify(bases, space.schedule, j)
    words = np.zeros((len(bases), j), np.int8)
    for t in range(j - 1):
        c = cell_word[t] if cell_word[t] != WILD else GREEN
        words[:, t] = np.where(cls.colorable[:, t], c, WILD)
    if doubled:
        words[:, j - 1] = np.where(copy == 1, GREEN, np.where(copy == 2, RED, WILD))
        words[:, j - 1] = np.where(cls.colorable[:, j - 1], words[:, j - 1], WILD)
    return words


def piecewise_harmonic(space: Complex, f: LipschitzFunction, j: int, M: int = 4,
                       tol: float = 1e-8) -> PiecewiseResult:
    """Solve g_j f, h_j f and the lift of g_{j-1} f on every cell of X_{j-1}."""
    if j < 1:
        raise ValueError("piecewise approximations need j >= 1")
    if j > space.level:
        raise ValueError("level above the built complex")
    sched = space.schedule
    e = sched.entry(j)
    m = e.m
    side = float(sched.slen(j - 1))
    cells = space.cells(j - 1)
    doubled = np.ones(len(cells), bool) if e.block_start else ~cells.gate
    mass = cells.mass(sched.slen(j - 1))
    vol = side**3

    totals = dict(E_g=0.0, E_h=0.0, E_gprev=0.0, cross_p1=0.0, cross_p9=0.0,
                  diff_gh=0.0, diff_hgprev=0.0)
    residual = 0.0
    groups = {}
    for is_doubled in (True, False):
        sel = np.flatnonzero(doubled == is_doubled)
        if not len(sel):
            groups[is_doubled] = None
            continue
        if is_doubled:
            dom = doubled_cell_domain(m, M, side)
            gate_bd = gate_boundary_mask(dom, m, M)
        else:
            dom = subdivided_cell_domain(m, M, side)
            gate_bd = np.zeros(dom.graph.size, bool)
        kind = dom.kind
        skel = skeleton_mask(dom, M)
        masks = {"g": skel, "h": dom.dirichlet | gate_bd, "gprev": dom.dirichlet}
        origins = cells.index[sel] * side
        # f is only needed on the skeleton, which contains every mask
        sk_nodes = np.flatnonzero(skel)
        data = []
        for ci, c in enumerate(sel):
            bases = np.clip(origins[ci] + dom.graph.coords[sk_nodes], 0.0, 1.0)
            words = _node_words(space, bases, cells.words[c], dom.copy[sk_nodes], j, is_doubled)
            data.append(f(PointSet(bases, words)))
        data = np.stack(data, -1)  # (skeleton nodes, [m,] cells)
        comps = f.m
        ncell = len(sel)
        full_shape = (dom.graph.size, comps, ncell)
        data = data.reshape(len(sk_nodes), comps, ncell)
        values = {}
        for name, mask in masks.items():
            solver = _solver(kind, m, M, side, name, dom, mask)
            full = np.zeros(full_shape)
            full[sk_nodes] = data
            fixed = full[mask].reshape(int(mask.sum()), comps * ncell)
            x, res, _ = solver.solve(fixed, tol)
            residual = max(residual, res)
            full[~mask] = x.reshape(-1, comps, ncell)
            values[name] = full
        weights = mass[sel] / vol
        g, h, gp = values["g"], values["h"], values["gprev"]
        graph = dom.graph
        i, k = graph.edges[:, 0], graph.edges[:, 1]
        cond = graph.conductance

        def form(u, v):
            du, dv = u[i] - u[k], v[i] - v[k]
            per_cell = np.einsum("e,ecn,ecn->n", cond, du, dv)
            return float(np.dot(per_cell, weights))

        totals["E_g"] += form(g, g)
        totals["E_h"] += form(h, h)
        totals["E_gprev"] += form(gp, gp)
        totals["cross_p1"] += form(h - g, h)
        totals["cross_p9"] += form(gp, h - gp)
        totals["diff_gh"] += form(g - h, g - h)
        totals["diff_hgprev"] += form(h - gp, h - gp)
        groups[is_doubled] = CellFields(dom, origins, weights, values)
    ledger = EnergyLedger(j, M, glip=f.lipschitz, residual=residual, **totals)
    return PiecewiseResult(j, M, groups[True], groups[False], ledger)


def energy_ladder(space: Complex, f: LipschitzFunction, j: int, ladder=(2, 4, 8),
                  tol: float = 1e-8) -> list:
    return [piecewise_harmonic(space, f, j, M, tol).ledger for M in ladder]


# Cross terms of exactly solved fields vanish to rounding, so a residual
# below this floor counts as "not increasing" under refinement.
NOISE_FLOOR = 1e-8


def check_orthogonality(space: Complex, functions: list, levels=(1, 2), ladder=(2, 4, 8),
                        tol: float = 0.05, solver_tol: float = 1e-10,
                        floor: float = NOISE_FLOOR) -> ExperimentReport:
    """Normalized cross terms (h - g, h) and (g_prev, h - g_prev) per level
    across a refinement ladder, plus the energy identities they imply."""
    rep = ExperimentReport("orthogonality", {"levels": list(levels), "ladder": list(ladder),
                                             "functions": [f.spec.label() if f.spec else "custom"
                                                           for f in functions]})
    worst = 0.0
    for fi, f in enumerate(functions):
        for j in levels:
            ledgers = energy_ladder(space, f, j, ladder, solver_tol)
            r1 = [abs(L.p1_normalized) for L in ledgers]
            r9 = [abs(L.p9_normalized) for L in ledgers]
            for L, a, b in zip(ledgers, r1, r9):
                gap = max(abs(v) for v in L.identity_gap())
                rep.add("p1_normalized", a, tol, None, level=j, function=fi, M=L.M)
                rep.add("p9_normalized", b, tol, None, level=j, function=fi, M=L.M)
                rep.add("identity_gap", gap, tol, gap <= tol, level=j, function=fi, M=L.M)
            for name, seq in (("p1", r1), ("p9", r9)):
                dec = all(y <= max(x, floor) for x, y in zip(seq, seq[1:]))
                rep.check(f"{name}_decreasing", float(dec), floor, dec, level=j, function=fi)
                rep.check(f"{name}_finest", seq[-1], tol, seq[-1] <= tol, level=j, function=fi)
                worst = max(worst, seq[-1])
    rep.summary = {"worst_finest": worst, "noise_floor": floor}
    return rep


def check_telescoping(space: Complex, functions: list, levels=(1, 2), M: int = 8,
                      tol: float = 0.05, solver_tol: float = 1e-10) -> ExperimentReport:
    """E[g_{j-1}] <= E[h_j] <= E[g_j] <= (glip f)^2 up to a relative tolerance."""
    rep = ExperimentReport("telescoping", {"levels": list(levels), "M": M})
    for fi, f in enumerate(functions):
        prev_g = None
        for j in levels:
            L = piecewise_harmonic(space, f, j, M, solver_tol).ledger
            scale = max(L.E_g, 1e-300)
            lip2 = L.glip**2
            rep.check("gprev_le_h", (L.E_gprev - L.E_h) / scale, tol,
                      L.E_gprev <= L.E_h + tol * scale, level=j, function=fi)
            rep.check("h_le_g", (L.E_h - L.E_g) / scale, tol, L.E_h <= L.E_g + tol * scale,
                      level=j, function=fi)
            rep.check("g_le_lip2", L.E_g / lip2 if lip2 > 0 else 0.0, 1 + tol,
                      L.E_g <= lip2 * (1 + tol) + 1e-300, level=j, function=fi)
            if prev_g is not None:
                rep.check("gprev_matches_previous_level", abs(L.E_gprev - prev_g) / scale, tol,
                          abs(L.E_gprev - prev_g) <= tol * scale, level=j, function=fi)
            rep.add("E_g", L.E_g, None, None, level=j, function=fi)
            rep.add("E_h", L.E_h, None, None, level=j, function=fi)
            rep.add("E_gprev", L.E_gprev, None, None, level=j, function=fi)
            prev_g = L.E_g
    return rep

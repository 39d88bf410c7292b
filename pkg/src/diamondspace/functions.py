"""Lipschitz test functions on X_L, real or with m components."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .complex import Complex, LabeledPoint, PointSet, classify, lift_set, sample_mu
from .metric import distances_from, pair_distances
from .rng import make_rng

KINDS = ("coordinate", "affine", "distance-to-point", "distance-to-gate-set",
         "random-MacShane", "user-table")


@dataclass(frozen=True)
class LipschitzFunctionSpec:
    kind: str
    m: int = 1
    seed: int = 0
    count: int = 8
    axis: int = 0
    coeffs: tuple = ()
    offset: tuple = ()
    target: Optional[LabeledPoint] = None
    depth: int = 1
    level: Optional[int] = None
    table: tuple = ()
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown function kind {self.kind!r}")
        if self.m < 1:
            raise ValueError("m must be positive")

    def build(self, space: Complex) -> "LipschitzFunction":
        return _BUILDERS[self.kind](self, space)

    def label(self) -> str:
        return f"{self.kind}[m={self.m},seed={self.seed}]"


@dataclass
class LipschitzFunction:
    """f on X_level; points of lower level are lifted with green."""
    space: Complex
    level: int
    lipschitz: float
    m: int
    _eval: Callable = field(repr=False)
    spec: Optional[LipschitzFunctionSpec] = None

    def __call__(self, points: PointSet) -> np.ndarray:
        if points.level < self.level:
            points = lift_set(self.space.schedule, points, self.level)
        elif points.level > self.level:
            points = PointSet(points.bases, points.words[:, : self.level])
        out = np.asarray(self._eval(points), float)
        return out if self.m > 1 else out.reshape(-1)

    def at(self, p: LabeledPoint):
        v = self(PointSet.from_points([p]))
        return v[0]

    def scaled(self, lam: float) -> "LipschitzFunction":
        ev = self._eval
        return LipschitzFunction(self.space, self.level, abs(lam) * self.lipschitz, self.m,
                                 lambda pts: lam * np.asarray(ev(pts), float), self.spec)

    def plus(self, other: "LipschitzFunction") -> "LipschitzFunction":
        if other.m != self.m:
            raise ValueError("component counts differ")
        a, b = self._eval, other._eval
        level = max(self.level, other.level)

        def ev(pts):
            return np.asarray(a(pts), float) + np.asarray(b(pts), float)
        return LipschitzFunction(self.space, level, self.lipschitz + other.lipschitz, self.m, ev)


def _level(spec, space):
    return space.level if spec.level is None else spec.level


def _vec(values, m):
    v = np.asarray(values, float)
    if m == 1:
        return v
    out = np.zeros((len(v), m))
    out[:, 0] = v
    return out


def _coordinate(spec, space):
    s = spec.scale
    return LipschitzFunction(space, _level(spec, space), abs(s), spec.m,
                             lambda pts: _vec(s * pts.bases[:, spec.axis], spec.m), spec)


def _affine(spec, space):
    a = np.asarray(spec.coeffs, float).reshape(spec.m, 3) * spec.scale
    b = np.zeros(spec.m) if not spec.offset else np.asarray(spec.offset, float).reshape(spec.m)
    lip = float(np.linalg.norm(a, 2))

    def ev(pts):
        v = pts.bases @ a.T + b
        return v if spec.m > 1 else v[:, 0]
    return LipschitzFunction(space, _level(spec, space), lip, spec.m, ev, spec)


def _distance_to_point(spec, space):
    level = _level(spec, space)
    target = spec.target
    if target is None:
        target = sample_mu(space.schedule, level, 1, make_rng(spec.seed, 1))[0]
    if target.level != level:
        raise ValueError("target level must equal the function level")
    s = spec.scale
    return LipschitzFunction(space, level, abs(s), spec.m,
                             lambda pts: _vec(s * distances_from(space, target, pts), spec.m),
                             spec)


def gate_distance(space: Complex, bases: np.ndarray, depth: int) -> np.ndarray:
    """Euclidean distance from each base point to the union of gate cells
    of stages 1..depth."""
    sched = space.schedule
    bases = np.atleast_2d(bases)
    best = np.full(len(bases), np.inf)
    offsets = np.array(list(itertools.product((-1, 0, 1), repeat=3)))
    for t in range(1, depth + 1):
        side = float(sched.slen(t - 1))
        half = float(sched.slen(t)) / 2
        e = sched.entry(t)
        cls = classify(bases, sched, t)
        parent = cls.parent[t - 1]
        cells_per_axis = round(1 / side)
        for off in offsets:
            cell = parent + off
            inside = np.all((cell >= 0) & (cell < cells_per_axis), axis=1)
            if not np.any(inside):
                continue
            centers = (cell[inside] + 0.5) * side
            if e.block_start:
                doubled = np.ones(len(centers), bool)
            else:
                doubled = ~classify(centers, sched, t - 1).gate
            gap = np.maximum(np.abs(bases[inside] - centers) - half, 0.0)
            dist = np.where(doubled, np.linalg.norm(gap, axis=1), np.inf)
            sub = best[inside]
            best[inside] = np.minimum(sub, dist)
    return best


def _distance_to_gate_set(spec, space):
    s = spec.scale
    return LipschitzFunction(space, _level(spec, space), abs(s), spec.m,
                             lambda pts: _vec(s * gate_distance(space, pts.bases, spec.depth),
                                              spec.m), spec)


def _mcshane(space, centers: PointSet, values: np.ndarray, lip: float):
    def ev(pts):
        out = np.full(len(pts), np.inf)
        for i in range(len(centers)):
            d = distances_from(space, centers[i], pts)
            out = np.minimum(out, values[i] + lip * d)
        return out
    return ev


def _random_mcshane(spec, space):
    level = _level(spec, space)
    comps = []
    for c in range(spec.m):
        rng = make_rng(spec.seed, 2, c)
        centers = sample_mu(space.schedule, level, spec.count, rng)
        values = rng.uniform(0.0, 0.5, spec.count)
        comps.append(_mcshane(space, centers, values, 1.0))
    w = spec.scale / np.sqrt(spec.m)

    def ev(pts):
        cols = [comp(pts) for comp in comps]
        return w * (np.stack(cols, 1) if spec.m > 1 else cols[0])
    return LipschitzFunction(space, level, abs(spec.scale), spec.m, ev, spec)


def _user_table(spec, space):
    pts = [p for p, _ in spec.table]
    vals = np.array([np.atleast_1d(np.asarray(v, float)) for _, v in spec.table])
    if vals.shape[1] != spec.m:
        raise ValueError("table values must have m components")
    level = pts[0].level
    table = PointSet.from_points(pts)
    n = len(pts)
    ii, jj = np.triu_indices(n, 1)
    d = pair_distances(space, table.subset(ii), table.subset(jj)) if n > 1 else np.zeros(0)
    comps, lips = [], []
    for c in range(spec.m):
        diff = np.abs(vals[ii, c] - vals[jj, c])
        lip = float(np.max(diff / np.maximum(d, 1e-300))) if n > 1 else 0.0
        lips.append(lip)
        comps.append(_mcshane(space, table, vals[:, c], lip))

    def ev(p):
        cols = [spec.scale * comp(p) for comp in comps]
        return np.stack(cols, 1) if spec.m > 1 else cols[0]
    return LipschitzFunction(space, level, abs(spec.scale) * float(np.linalg.norm(lips)),
                             spec.m, ev, spec)


_BUILDERS = {
    "coordinate": _coordinate,
    "affine": _affine,
    "distance-to-point": _distance_to_point,
    "distance-to-gate-set": _distance_to_gate_set,
    "random-MacShane": _random_mcshane,
    "user-table": _user_table,
}


def verify_lipschitz(f: LipschitzFunction, pairs: int = 2000, seed: int = 0,
                     radius: float = 0.1) -> float:
    """Largest |f(x) - f(y)| / d(x, y) over nearby random pairs."""
    space = f.space
    rng = make_rng(seed, 3)
    x = sample_mu(space.schedule, f.level, pairs, rng)
    lo = np.clip(x.bases - radius, 0, 1)
    hi = np.clip(x.bases + radius, 0, 1)
    yb = lo + (hi - lo) * rng.random((pairs, 3))
    colors = rng.integers(1, 3, size=(pairs, f.level))
    y = PointSet(yb, np.where(classify(yb, space.schedule, f.level).colorable, colors, 0))
    d = pair_distances(space, x, y)
    fx, fy = f(x), f(y)
    diff = np.abs(fx - fy) if f.m == 1 else np.linalg.norm(fx - fy, axis=1)
    ok = d > 1e-12
    return float(np.max(diff[ok] / d[ok])) if np.any(ok) else 0.0

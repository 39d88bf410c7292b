"""Chain-metric distances on X_l.

Two points conflict at stage t when they sit in the same stage-t record's
open K with different colors. Only the outermost conflict matters: below
it the words agree, and the cheapest chain either crosses the boundary of
that K (where colors are free) or uses the record's jump pair. Without a
conflict the points share a chromatic sheet and the distance is the
Euclidean distance of the bases.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .complex import (GREEN, WILD, Complex, LabeledPoint, PointSet, classify)
from .schedule import LevelSchedule

SHEET, JUMP, START = "sheet-segment", "jump", "start"
ROUTE_SHEET, ROUTE_BOUNDARY, ROUTE_JUMP = 0, 1, 2


@dataclass(frozen=True)
class DistanceResult:
    lower: float
    upper: float
    witness_chain: tuple
    certified: bool = True
    conflict_stage: int = 0

    @property
    def value(self) -> float:
        return self.upper

    def chain_cost(self, schedule: LevelSchedule) -> float:
        total = 0.0
        for (a, _), (b, kind) in zip(self.witness_chain, self.witness_chain[1:]):
            if kind == JUMP:
                total += float(schedule.jump_cost(self.conflict_stage))
            else:
                total += float(np.linalg.norm(np.subtract(a.base, b.base)))
        return total


def _schedule(space) -> LevelSchedule:
    return space.schedule if isinstance(space, Complex) else space


def conflict_stages(schedule: LevelSchedule, a: PointSet, b: PointSet) -> np.ndarray:
    """Outermost conflict stage per pair (0 when none). Broadcasts a length-1 set."""
    if a.level != b.level:
        raise ValueError(f"level mismatch: {a.level} vs {b.level}")
    ca, cb = a.classification(schedule), b.classification(schedule)
    n = max(len(a), len(b))
    stage = np.zeros(n, dtype=np.int64)
    open_ = np.ones(n, dtype=bool)
    for t in range(1, a.level + 1):
        same = np.all(ca.parent[t - 1] == cb.parent[t - 1], axis=1)
        wa, wb = a.words[:, t - 1], b.words[:, t - 1]
        hit = open_ & same & (wa != WILD) & (wb != WILD) & (wa != wb)
        stage[hit] = t
        open_ &= ~hit
    return stage


def boundary_route(p, q, lo, hi):
    """min over z in the boundary of the box [lo, hi] of |p-z| + |z-q|.

    p and q lie in the closed box. Returns (value, argmin z). Each face is
    handled by reflection; when the reflected segment misses the face the
    minimum is on one of its edges, where the one-dimensional problem is
    solved by unfolding.
    """
    p, q = np.atleast_2d(p).astype(float), np.atleast_2d(q).astype(float)
    lo, hi = np.broadcast_to(lo, p.shape), np.broadcast_to(hi, p.shape)
    n = len(p)
    best = np.full(n, np.inf)
    best_z = np.zeros((n, 3))

    def consider(val, z):
        nonlocal best, best_z
        better = val < best
        best = np.where(better, val, best)
        best_z = np.where(better[:, None], z, best_z)

    for i in range(3):
        j, k = [a for a in range(3) if a != i]
        for plane in (lo[:, i], hi[:, i]):
            dp, dq = np.abs(p[:, i] - plane), np.abs(q[:, i] - plane)
            s = dp + dq
            ratio = np.divide(dp, s, out=np.zeros(n), where=s > 0)
            z = np.empty((n, 3))
            z[:, i] = plane
            z[:, j] = p[:, j] + (q[:, j] - p[:, j]) * ratio
            z[:, k] = p[:, k] + (q[:, k] - p[:, k]) * ratio
            inside = ((z[:, j] >= lo[:, j]) & (z[:, j] <= hi[:, j])
                      & (z[:, k] >= lo[:, k]) & (z[:, k] <= hi[:, k]))
            val = np.sqrt((p[:, j] - q[:, j]) ** 2 + (p[:, k] - q[:, k]) ** 2 + s**2)
            consider(np.where(inside, val, np.inf), z)
            # edges of this face: fix one more coordinate, the third is free
            for fixed, free in ((j, k), (k, j)):
                for w in (lo[:, fixed], hi[:, fixed]):
                    ep = np.hypot(p[:, i] - plane, p[:, fixed] - w)
                    eq = np.hypot(q[:, i] - plane, q[:, fixed] - w)
                    tot = ep + eq
                    frac = np.divide(ep, tot, out=np.zeros(n), where=tot > 0)
                    t = p[:, free] + (q[:, free] - p[:, free]) * frac
                    t = np.clip(t, lo[:, free], hi[:, free])
                    ev = np.hypot(t - p[:, free], ep) + np.hypot(t - q[:, free], eq)
                    ez = np.empty((n, 3))
                    ez[:, i] = plane
                    ez[:, fixed] = w
                    ez[:, free] = t
                    consider(ev, ez)
    return best, best_z


def _record_geometry(schedule: LevelSchedule, parent: np.ndarray, stage: np.ndarray):
    """Float K box, center and jump cost for each (parent cell, stage) pair."""
    n = len(stage)
    side = np.array([float(schedule.slen(t - 1)) for t in stage]) if n else np.zeros(0)
    jump = np.array([float(schedule.jump_cost(t)) for t in stage]) if n else np.zeros(0)
    origin = parent * side[:, None]
    lo = origin + side[:, None] / 3.0
    hi = origin + 2.0 * side[:, None] / 3.0
    center = origin + side[:, None] / 2.0
    return lo, hi, center, jump


def pair_distances(space, a: PointSet, b: PointSet, return_details: bool = False):
    """Distances d(a_i, b_i); a or b may have a single point."""
    schedule = _schedule(space)
    stage = conflict_stages(schedule, a, b)
    pa = np.broadcast_to(a.bases, (len(stage), 3))
    pb = np.broadcast_to(b.bases, (len(stage), 3))
    d = np.linalg.norm(pa - pb, axis=1)
    route = np.zeros(len(stage), dtype=np.int8)
    waypoint = np.full((len(stage), 3), np.nan)
    hit = np.flatnonzero(stage)
    if len(hit):
        ca = a.classification(schedule)
        par = np.broadcast_to(ca.parent, (a.level, len(stage), 3))
        t = stage[hit]
        parent = par[t - 1, hit]
        lo, hi, center, jump = _record_geometry(schedule, parent, t)
        bval, bz = boundary_route(pa[hit], pb[hit], lo, hi)
        jval = (np.linalg.norm(pa[hit] - center, axis=1) + jump
                + np.linalg.norm(center - pb[hit], axis=1))
        use_jump = jval < bval
        d[hit] = np.where(use_jump, jval, bval)
        route[hit] = np.where(use_jump, ROUTE_JUMP, ROUTE_BOUNDARY)
        waypoint[hit] = np.where(use_jump[:, None], center, bz)
    if return_details:
        return d, stage, route, waypoint
    return d


def distances_from(space, p: LabeledPoint, points: PointSet) -> np.ndarray:
    return pair_distances(space, PointSet.from_points([p]), points)


def inherit_word(schedule: LevelSchedule, base, anchor_word, level: Optional[int] = None) -> tuple:
    """Canonical word at `base` copying the anchor's colors where possible."""
    level = len(anchor_word) if level is None else level
    cls = classify(np.array([base], dtype=float), schedule, level)
    word = []
    for t in range(level):
        if not cls.colorable[0, t]:
            word.append(WILD)
        elif t < len(anchor_word) and anchor_word[t] != WILD:
            word.append(int(anchor_word[t]))
        else:
            word.append(GREEN)
    return tuple(word)


def distance(space, p: LabeledPoint, q: LabeledPoint, delta: float = 0.02) -> DistanceResult:
    """Chain distance with a witness chain. The value is exact, so lower = upper."""
    if p.level != q.level:
        raise ValueError(f"level mismatch: {p.level} vs {q.level}")
    schedule = _schedule(space)
    a, b = PointSet.from_points([p]), PointSet.from_points([q])
    d, stage, route, wp = pair_distances(schedule, a, b, return_details=True)
    d, t, r = float(d[0]), int(stage[0]), int(route[0])
    chain = [(p, START)]
    if r == ROUTE_BOUNDARY:
        z = tuple(np.clip(wp[0], 0.0, 1.0))
        chain.append((LabeledPoint(z, inherit_word(schedule, z, p.word)), SHEET))
    elif r == ROUTE_JUMP:
        c = tuple(wp[0])
        chain.append((LabeledPoint(c, inherit_word(schedule, c, p.word)), SHEET))
        chain.append((LabeledPoint(c, inherit_word(schedule, c, q.word)), JUMP))
    chain.append((q, SHEET))
    return DistanceResult(d, d, tuple(chain), True, t)


def jump_distance(schedule: LevelSchedule, stage: int) -> Fraction:
    """Exact distance between the two jump points of a stage record."""
    return schedule.jump_cost(stage)


def discrete_log(r: float, schedule: LevelSchedule, rel_tol: float = 1e-12) -> int:
    """The integer j with slen(X_{j+1}) <= r < slen(X_j).

    Ties within rel_tol count as equality so that float inputs such as 1/3
    behave like the exact side length.
    """
    if not 0 < r <= 0.5:
        raise ValueError("r must lie in (0, 1/2]")
    for j in range(schedule.levels):
        upper = float(schedule.slen(j))
        lower = float(schedule.slen(j + 1))
        below_upper = r < upper and not np.isclose(r, upper, rtol=rel_tol, atol=0)
        if below_upper and (r >= lower or np.isclose(r, lower, rtol=rel_tol, atol=0)):
            return j
    raise ValueError(f"r={r} below the resolution of the schedule (depth {schedule.levels})")


def sheet_reach(space, p: LabeledPoint) -> list:
    """(stage, cost to leave p's color there) for each colored stage of p.

    The cheapest point of a sheet that disagrees with p first at stage s
    is at distance min(dist(p, boundary of K_s), |p - c_s| + jump_s).
    """
    schedule = _schedule(space)
    cls = classify(np.array([p.base]), schedule, p.level)
    base = np.array(p.base)
    out = []
    for t in range(1, p.level + 1):
        if p.word[t - 1] == WILD:
            continue
        lo, hi, center, jump = _record_geometry(schedule, cls.parent[t - 1], np.array([t]))
        to_bdry = float(np.min(np.minimum(base - lo[0], hi[0] - base)))
        via_jump = float(np.linalg.norm(base - center[0]) + jump[0])
        out.append((t, min(to_bdry, via_jump)))
    return out


def sheet_count(space, p: LabeledPoint, r: float) -> int:
    """Number of chromatic sheets of X_k (k = p.level) meeting B(p, r)."""
    reach = sheet_reach(space, p)
    k = p.level
    colored = len(reach)
    count = 2 ** (k - colored)
    for i, (_, cost) in enumerate(reach):
        if cost <= r:
            count += 2 ** (k - (i + 1))
    return count

"""Fundamental configurations and good horizontal paths with jumps."""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .complex import (GREEN, WILD, Complex, DoublingRecord, LabeledPoint, PointSet, classify,
                      project)
from .metric import (ROUTE_BOUNDARY, discrete_log, distances_from, inherit_word,
                     pair_distances, sheet_reach)

AXES = "xyz"


@dataclass(frozen=True)
class HorizontalSegment:
    start: LabeledPoint
    end: LabeledPoint
    axis: int

    @property
    def length(self) -> float:
        return abs(self.end.base[self.axis] - self.start.base[self.axis])

    def to_dict(self) -> dict:
        return {"kind": "segment", "axis": AXES[self.axis], "start": self.start.to_dict(),
                "end": self.end.to_dict(), "length": self.length}


@dataclass(frozen=True)
class JumpHop:
    start: LabeledPoint
    end: LabeledPoint
    record: DoublingRecord

    @property
    def cost(self) -> float:
        return float(self.record.jump_cost)

    @property
    def length(self) -> float:
        return self.cost

    def to_dict(self) -> dict:
        return {"kind": "jump", "stage": self.record.stage, "start": self.start.to_dict(),
                "end": self.end.to_dict(), "length": self.cost}


@dataclass(frozen=True)
class HorizontalPath:
    segments: tuple
    start: LabeledPoint
    end: LabeledPoint

    @property
    def length(self) -> float:
        return float(sum(s.length for s in self.segments))

    @property
    def hops(self) -> tuple:
        return ()

    @property
    def pieces(self) -> tuple:
        return (self,)

    def to_dict(self) -> dict:
        return {"kind": "horizontal", "length": self.length,
                "pieces": [s.to_dict() for s in self.segments]}


@dataclass(frozen=True)
class JumpPath:
    """Alternating horizontal paths and jump hops."""
    pieces: tuple

    @property
    def start(self) -> LabeledPoint:
        return self.pieces[0].start

    @property
    def end(self) -> LabeledPoint:
        return self.pieces[-1].end

    @property
    def segments(self) -> tuple:
        return tuple(s for p in self.pieces if isinstance(p, HorizontalPath) for s in p.segments)

    @property
    def hops(self) -> tuple:
        return tuple(p for p in self.pieces if isinstance(p, JumpHop))

    @property
    def length(self) -> float:
        return float(sum(p.length for p in self.pieces))

    def to_dict(self) -> dict:
        out = []
        for p in self.pieces:
            out.extend([s.to_dict() for s in p.segments] if isinstance(p, HorizontalPath)
                       else [p.to_dict()])
        return {"kind": "jump-path", "length": self.length, "pieces": out}


def _vertex_word(schedule, base, a: LabeledPoint, b: LabeledPoint, ca, cb) -> tuple:
    """Word at an intermediate vertex: copy a's color inside a's records,
    else b's inside b's records, else green."""
    level = a.level
    cv = classify(np.array([base]), schedule, level)
    word = []
    for t in range(level):
        if not cv.colorable[0, t]:
            word.append(WILD)
            continue
        cell = cv.parent[t, 0]
        if a.word[t] != WILD and np.array_equal(cell, ca.parent[t, 0]):
            word.append(a.word[t])
        elif b.word[t] != WILD and np.array_equal(cell, cb.parent[t, 0]):
            word.append(b.word[t])
        else:
            word.append(GREEN)
    return tuple(word)


def l_path(schedule, a: LabeledPoint, b: LabeledPoint) -> HorizontalPath:
    """Axis-ordered (x, then y, then z) path from a to b, degenerate legs dropped."""
    ca = classify(np.array([a.base]), schedule, a.level)
    cb = classify(np.array([b.base]), schedule, b.level)
    target = np.array(b.base)
    cur = np.array(a.base)
    verts, axes = [a], []
    for axis in range(3):
        if cur[axis] == target[axis]:
            continue
        cur = cur.copy()
        cur[axis] = target[axis]
        if np.array_equal(cur, target):
            nxt = b
        else:
            nxt = LabeledPoint(tuple(cur), _vertex_word(schedule, tuple(cur), a, b, ca, cb))
        verts.append(nxt)
        axes.append(axis)
    if len(verts) == 1:
        verts.append(b)
        axes.append(0)
    segs = tuple(HorizontalSegment(s, e, ax) for s, e, ax in zip(verts, verts[1:], axes))
    return HorizontalPath(segs, a, b)


def good_path(space, p: LabeledPoint, q: LabeledPoint):
    """Quasi-geodesic horizontal path with at most one jump from p to q.

    Without a color conflict the axis-ordered path stays on one sheet.
    Otherwise the path follows the cheaper of the two routes the metric
    compares: through the boundary of the conflicting K, or through its
    jump pair.
    """
    schedule = space.schedule if isinstance(space, Complex) else space
    if p.level != q.level:
        raise ValueError("level mismatch")
    a, b = PointSet.from_points([p]), PointSet.from_points([q])
    _, stage, route, waypoint = pair_distances(schedule, a, b, return_details=True)
    t = int(stage[0])
    if t == 0:
        return l_path(schedule, p, q)
    if route[0] == ROUTE_BOUNDARY:
        z = tuple(np.clip(waypoint[0], 0.0, 1.0))
        zp = LabeledPoint(z, inherit_word(schedule, z, p.word))
        first = l_path(schedule, p, zp)
        second = l_path(schedule, zp, q)
        return HorizontalPath(first.segments + second.segments, p, q)
    cls = a.classification(schedule)
    parent = cls.parent[t - 1]
    e = schedule.entry(t)
    record = DoublingRecord(t, tuple(int(v) for v in parent[0]), p.word[: t - 1],
                            schedule.slen(t - 1), e.n, e.m)
    c = tuple(waypoint[0])
    cp = LabeledPoint(c, inherit_word(schedule, c, p.word))
    cq = LabeledPoint(c, inherit_word(schedule, c, q.word))
    return JumpPath((l_path(schedule, p, cp), JumpHop(cp, cq, record), l_path(schedule, cq, q)))


def _words_conflict(schedule, a: LabeledPoint, b: LabeledPoint) -> bool:
    from .metric import conflict_stages
    return bool(conflict_stages(schedule, PointSet.from_points([a]),
                                PointSet.from_points([b]))[0])


def check_good_path(space, path, p: LabeledPoint, q: LabeledPoint, eps: float, r: float,
                    rel_tol: float = 1e-9) -> dict:
    """Structural checks (Gd1)-(Gd5) plus segment and hop validity."""
    schedule = space.schedule if isinstance(space, Complex) else space
    segs = path.segments
    hops = path.hops
    d = float(pair_distances(schedule, PointSet.from_points([p]), PointSet.from_points([q]))[0])
    short = sum(1 for s in segs if s.length < eps**3 * r / 400)
    seg_ok = True
    for s in segs:
        diff = np.subtract(s.end.base, s.start.base)
        off_axis = np.delete(diff, s.axis)
        if np.any(off_axis != 0):
            seg_ok = False
        if _words_conflict(schedule, s.start, s.end):
            seg_ok = False
    hop_ok = True
    for h in hops:
        rec = h.record
        c = tuple(float(v) for v in rec.center)
        t = rec.stage
        if not (np.allclose(h.start.base, c, atol=1e-12) and np.allclose(h.end.base, c, atol=1e-12)):
            hop_ok = False
        if h.start.word[: t - 1] != h.end.word[: t - 1] or {h.start.word[t - 1], h.end.word[t - 1]} != {1, 2}:
            hop_ok = False
    chain_ok = True
    if isinstance(path, JumpPath):
        for x, y in zip(path.pieces, path.pieces[1:]):
            if x.end != y.start:
                chain_ok = False
    for x, y in zip(segs, segs[1:]):
        if x.end != y.start and not hops:
            chain_ok = False
    length = path.length
    return {
        "Gd1": path.start == p and path.end == q and chain_ok,
        "Gd2": len(hops) <= 1,
        "Gd3_ratio": length / d if d > 0 else (0.0 if length == 0 else math.inf),
        "Gd4": short <= 10,
        "Gd5": len(segs) <= 15,
        "segments_geodesic": seg_ok,
        "hops_valid": hop_ok,
        "length_ge_lower": length >= d * (1 - rel_tol),
        "length": length,
        "distance": d,
        "short_segments": short,
        "segment_count": len(segs),
        "jump_count": len(hops),
    }


def project_path(path, l: int):
    """Truncate every word to level l; hops above l collapse to nothing."""
    def pt(x):
        return project(x, l)

    def hp(h: HorizontalPath) -> HorizontalPath:
        segs = tuple(HorizontalSegment(pt(s.start), pt(s.end), s.axis) for s in h.segments)
        return HorizontalPath(segs, pt(h.start), pt(h.end))

    if isinstance(path, HorizontalPath):
        return hp(path)
    pieces = []
    for piece in path.pieces:
        if isinstance(piece, JumpHop) and piece.record.stage > l:
            continue
        piece = hp(piece) if isinstance(piece, HorizontalPath) else JumpHop(
            pt(piece.start), pt(piece.end), piece.record)
        if (pieces and isinstance(piece, HorizontalPath)
                and isinstance(pieces[-1], HorizontalPath)):
            prev = pieces.pop()
            piece = HorizontalPath(prev.segments + piece.segments, prev.start, piece.end)
        pieces.append(piece)
    if len(pieces) == 1:
        return pieces[0]
    return JumpPath(tuple(pieces))


class ConfigurationTooLarge(RuntimeError):
    pass


@dataclass
class FundamentalConfiguration:
    """Grid around p lifted to the color patterns that meet B(p, r).

    The point set is built on demand; `witness` searches the neighboring
    grid nodes of a query point without materializing everything.
    """
    space: Complex
    center: LabeledPoint
    r: float
    eps: float
    j0: int
    axis_values: tuple
    reach: list
    max_points: int = 2_000_000
    _patterns: dict = field(default_factory=dict, repr=False)
    _points: Optional[PointSet] = field(default=None, repr=False)
    _center_parent: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def level(self) -> int:
        return self.center.level

    @property
    def lift_level(self) -> int:
        return min(self.j0, self.level)

    def grid_size(self) -> int:
        return int(np.prod([len(v) for v in self.axis_values]))

    def grid(self) -> np.ndarray:
        g = np.meshgrid(*self.axis_values, indexing="ij")
        return np.stack(g, -1).reshape(-1, 3)

    def _states(self, cls) -> np.ndarray:
        """Per-stage state of each base up to the lift level: 0 not
        colorable, 1 colorable in the center's cell, 2 colorable elsewhere."""
        jl = self.lift_level
        if self._center_parent is None:
            c = classify(np.array([self.center.base]), self.space.schedule, jl)
            self._center_parent = c.parent
        same = np.all(cls.parent[:jl] == self._center_parent, axis=2).T
        col = cls.colorable[:, :jl]
        return np.where(col, np.where(same, 1, 2), 0).astype(np.int8)

    def _allowed(self, mask: tuple) -> np.ndarray:
        """Colorings of the colorable stages in `mask` (up to the lift level)
        that some sheet meeting B(p, r) induces. Only stages sharing the
        center's cell constrain the colors."""
        if mask in self._patterns:
            return self._patterns[mask]
        jl = self.lift_level
        stages = [t for t in range(1, jl + 1) if mask[t - 1]]
        pw = self.center.word
        reach_ok = [t for t, cost in self.reach if t <= jl and cost <= self.r]
        colored_p = [t for t in range(1, jl + 1) if pw[t - 1] != WILD and mask[t - 1] == 1]
        out = []
        for combo in itertools.product((1, 2), repeat=len(stages)):
            w = dict(zip(stages, combo))
            agree = all(w[s] == pw[s - 1] for s in stages if s in colored_p)
            ok = agree
            for s in reach_ok:
                if ok:
                    break
                ok = (s in colored_p and w[s] != pw[s - 1]
                      and all(w[u] == pw[u - 1] for u in colored_p if u < s))
            if ok:
                word = np.zeros(jl, dtype=np.int8)
                for s, c in w.items():
                    word[s - 1] = c
                out.append(word)
        arr = np.array(out, dtype=np.int8).reshape(len(out), jl)
        self._patterns[mask] = arr
        return arr

    def _lift(self, bases: np.ndarray):
        """All configuration points over the given grid bases."""
        schedule = self.space.schedule
        cls = classify(bases, schedule, self.level)
        jl = self.lift_level
        tail = np.where(cls.colorable[:, jl:], GREEN, WILD).astype(np.int8)
        masks = [tuple(row) for row in self._states(cls)]
        out_b, out_w, owner = [], [], []
        for i, mk in enumerate(masks):
            pats = self._allowed(mk)
            k = len(pats)
            out_b.append(np.repeat(bases[i : i + 1], k, axis=0))
            out_w.append(np.hstack([pats, np.repeat(tail[i : i + 1], k, axis=0)]))
            owner.append(np.full(k, i))
        if not out_b:
            return PointSet(np.zeros((0, 3)), np.zeros((0, self.level), np.int8)), np.zeros(0, int)
        return PointSet(np.vstack(out_b), np.vstack(out_w)), np.concatenate(owner)

    def count(self) -> int:
        schedule = self.space.schedule
        jl = self.lift_level
        total = 0
        g = self.grid()
        for start in range(0, len(g), 100_000):
            cls = classify(g[start : start + 100_000], schedule, self.level)
            for row in self._states(cls):
                total += len(self._allowed(tuple(row)))
        return total

    def points(self) -> PointSet:
        if self._points is None:
            if self.grid_size() > self.max_points:
                raise ConfigurationTooLarge(
                    f"grid of {self.grid_size()} nodes exceeds {self.max_points}")
            pts, _ = self._lift(self.grid())
            if len(pts) > self.max_points:
                raise ConfigurationTooLarge(f"{len(pts)} points exceed {self.max_points}")
            self._points = pts
        return self._points

    def __len__(self) -> int:
        return len(self.points())

    def witness(self, q: LabeledPoint):
        """(distance, point) for the best configuration point over the 8
        grid nodes that bracket q's base."""
        cands = []
        for axis, vals in enumerate(self.axis_values):
            i = int(np.searchsorted(vals, q.base[axis]))
            cands.append(sorted({vals[max(i - 1, 0)], vals[min(i, len(vals) - 1)]}))
        bases = np.array(list(itertools.product(*cands)), dtype=float)
        pts, _ = self._lift(bases)
        d = distances_from(self.space, q, pts)
        k = int(np.argmin(d))
        return float(d[k]), pts[k]

    def paths(self):
        pts = self.points()
        for i in range(len(pts)):
            q = pts[i]
            yield q, good_path(self.space, self.center, q)


def build_configuration(space: Complex, p: LabeledPoint, r: float, eps: float,
                        max_points: int = 2_000_000, warn: bool = True) -> FundamentalConfiguration:
    """Fundamental (eps, r)-configuration at p (level p.level)."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if not 0 < r <= 0.5:
        raise ValueError("r must lie in (0, 1/2]")
    if warn and eps >= 1 / 400:
        warnings.warn(f"eps={eps} is outside (0, 1/400); density and path bounds are checked "
                      "empirically", stacklevel=2)
    j0 = discrete_log(eps**2 * r, space.schedule)
    steps = math.ceil(1 / eps**2)
    offs = eps**2 * r * np.arange(1, steps + 1)
    axis_values = []
    for axis in range(3):
        vals = np.concatenate([p.base[axis] - offs[::-1], p.base[axis] + offs])
        axis_values.append(np.unique(np.clip(vals, 0.0, 1.0)))
    jl = min(j0, p.level)
    reach = sheet_reach(space, project(p, jl))
    return FundamentalConfiguration(space, p, r, eps, j0, tuple(axis_values), reach, max_points)

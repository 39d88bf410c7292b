"""Doubling records, color words and the point classifier for X_l.

A point of X_l is a base point of [0,1]^3 plus a color word of length l.
Entry j is GREEN or RED when the base point is strictly inside the K
region of a stage-j record, and WILD otherwise.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .schedule import LevelSchedule, ResolutionError

WILD, GREEN, RED = 0, 1, 2
COLOR_NAMES = {WILD: "wildcard", GREEN: "green", RED: "red"}

# Snapping tolerance for fractional cell positions. Rational grid nodes
# land exactly on faces after snapping, so they classify the same way at
# every depth.
POSITION_TOL = 1e-9

DEFAULT_MAX_CELLS = 2_000_000
CACHE_VERSION = 1


def _frac_pair(x: Fraction) -> list:
    return [x.numerator, x.denominator]


@dataclass(frozen=True)
class LabeledPoint:
    base: tuple
    word: tuple = ()

    def __post_init__(self):
        b = tuple(float(v) for v in self.base)
        if len(b) != 3:
            raise ValueError("base must have three coordinates")
        if any(v < 0.0 or v > 1.0 for v in b):
            raise ValueError(f"base {b} outside the unit cube")
        w = tuple(int(c) for c in self.word)
        if any(c not in (WILD, GREEN, RED) for c in w):
            raise ValueError(f"invalid color word {w}")
        object.__setattr__(self, "base", b)
        object.__setattr__(self, "word", w)

    @property
    def level(self) -> int:
        return len(self.word)

    def to_dict(self) -> dict:
        return {"base": list(self.base), "word": [COLOR_NAMES[c] for c in self.word]}


class PointSet:
    """A batch of labeled points sharing one level."""

    def __init__(self, bases, words):
        bases = np.atleast_2d(np.asarray(bases, dtype=float))
        words = np.asarray(words, dtype=np.int8)
        if words.ndim == 1:
            words = words.reshape(len(bases), -1) if len(bases) else words.reshape(0, 0)
        if bases.shape[1] != 3 or words.shape[0] != bases.shape[0]:
            raise ValueError("bases must be (N, 3) and words (N, l)")
        self.bases = bases
        self.words = words
        self._classification = {}

    @classmethod
    def from_points(cls, points: Sequence[LabeledPoint]) -> "PointSet":
        levels = {p.level for p in points}
        if len(levels) > 1:
            raise ValueError("points have mixed levels")
        level = levels.pop() if levels else 0
        bases = np.array([p.base for p in points], dtype=float).reshape(-1, 3)
        words = np.array([p.word for p in points], dtype=np.int8).reshape(len(points), level)
        return cls(bases, words)

    @property
    def level(self) -> int:
        return self.words.shape[1]

    def __len__(self) -> int:
        return len(self.bases)

    def __getitem__(self, i) -> LabeledPoint:
        return LabeledPoint(tuple(self.bases[i]), tuple(self.words[i]))

    def subset(self, idx) -> "PointSet":
        return PointSet(self.bases[idx], self.words[idx])

    def classification(self, schedule: LevelSchedule) -> "Classification":
        key = schedule
        c = self._classification.get(key)
        if c is None:
            c = classify(self.bases, schedule, self.level)
            self._classification[key] = c
        return c


@dataclass
class Classification:
    """Per-stage geometry of a batch of base points.

    parent[t-1] is the index of the stage-(t-1) cell holding the point, in
    units of slen(X_{t-1}). colorable[:, t-1] marks points strictly inside
    the K region of a stage-t record, boundary[:, t-1] points on the
    boundary of such a K. cell is the index of the level-l cell and gate
    whether that cell is a gate.
    """
    parent: np.ndarray
    colorable: np.ndarray
    boundary: np.ndarray
    cell: np.ndarray
    gate: np.ndarray
    frac: np.ndarray


def classify(bases, schedule: LevelSchedule, level: int,
             tol: float = POSITION_TOL) -> Classification:
    if level > schedule.levels:
        raise ValueError(f"level {level} beyond schedule depth {schedule.levels}")
    bases = np.atleast_2d(np.asarray(bases, dtype=float))
    n = len(bases)
    idx = np.zeros((n, 3), dtype=np.int64)
    w = bases.copy()
    gate = np.zeros(n, dtype=bool)
    parent = np.zeros((level, n, 3), dtype=np.int64)
    colorable = np.zeros((n, level), dtype=bool)
    boundary = np.zeros((n, level), dtype=bool)
    lo, hi = 1.0 / 3.0, 2.0 / 3.0
    for t in range(1, level + 1):
        e = schedule.entry(t)
        m = e.m
        if e.block_start:
            gate[:] = False
        doubled = ~gate
        open_k = np.all((w > lo + tol) & (w < hi - tol), axis=1)
        closed_k = np.all((w >= lo - tol) & (w <= hi + tol), axis=1)
        colorable[:, t - 1] = doubled & open_k
        boundary[:, t - 1] = doubled & closed_k & ~open_k
        parent[t - 1] = idx
        sub = w * m
        digit = np.floor(sub + tol)
        rem = sub - digit
        top = digit >= m
        digit[top] = m - 1
        rem[top] = 1.0
        rem[np.abs(rem) < tol] = 0.0
        np.clip(rem, 0.0, 1.0, out=rem)
        digit = digit.astype(np.int64)
        central = np.all(digit == (m - 1) // 2, axis=1)
        gate = gate | (doubled & central)
        idx = idx * m + digit
        w = rem
    return Classification(parent, colorable, boundary, idx, gate, w)


@dataclass(frozen=True)
class DoublingRecord:
    """One doubled cube of stage `stage`.

    Geometry is exact. `cell` indexes the base cube in units of its side,
    `prefix` is the color word of that cube at stages before `stage`.
    """
    stage: int
    cell: tuple
    prefix: tuple
    side: Fraction
    n: int
    m: int

    @property
    def origin(self) -> tuple:
        return tuple(Fraction(i) * self.side for i in self.cell)

    @property
    def k_origin(self) -> tuple:
        return tuple(o + self.side / 3 for o in self.origin)

    @property
    def k_side(self) -> Fraction:
        return self.side / 3

    @property
    def gate_side(self) -> Fraction:
        return self.side / self.m

    @property
    def gate_origin(self) -> tuple:
        return tuple(c - self.gate_side / 2 for c in self.center)

    @property
    def center(self) -> tuple:
        return tuple(o + self.side / 2 for o in self.origin)

    @property
    def jump_cost(self) -> Fraction:
        return self.side / (4 * self.n)

    @property
    def diameter(self) -> float:
        return float(np.sqrt(3.0) * float(self.side))

    def jump_point(self, color: int, level: Optional[int] = None,
                   schedule: Optional[LevelSchedule] = None) -> LabeledPoint:
        """Center of the given K copy, as a point of X_level.

        Deeper stages are filled canonically with green, which needs the
        schedule.
        """
        level = self.stage if level is None else level
        if level < self.stage:
            raise ValueError("jump points live at or above the record's stage")
        base = tuple(float(c) for c in self.center)
        word = self.prefix + (color,)
        if level > self.stage:
            if schedule is None:
                raise ValueError("lifting a jump point needs the schedule")
            cls = classify(np.array([base]), schedule, level)
            tail = np.where(cls.colorable[0, self.stage:], GREEN, WILD)
            word = word + tuple(int(c) for c in tail)
        return LabeledPoint(base, word)

    @property
    def jump_green(self) -> LabeledPoint:
        return self.jump_point(GREEN)

    @property
    def jump_red(self) -> LabeledPoint:
        return self.jump_point(RED)

    def contains_k(self, bases, words=None, tol: float = POSITION_TOL) -> np.ndarray:
        """Points whose base lies strictly inside K and whose word matches the prefix."""
        bases = np.atleast_2d(np.asarray(bases, dtype=float))
        lo = np.array([float(v) for v in self.k_origin])
        hi = lo + float(self.k_side)
        inside = np.all((bases > lo + tol) & (bases < hi - tol), axis=1)
        if words is not None and self.stage > 1:
            w = np.asarray(words)[:, : self.stage - 1]
            pre = np.array(self.prefix, dtype=np.int8)
            ok = np.all((w == pre) | (w == WILD) | (pre == WILD), axis=1)
            inside &= ok
        return inside

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "cell": list(self.cell),
            "prefix": list(self.prefix),
            "side": _frac_pair(self.side),
            "n": self.n,
            "m": self.m,
            "jump_cost": _frac_pair(self.jump_cost),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DoublingRecord":
        return cls(d["stage"], tuple(d["cell"]), tuple(d["prefix"]),
                   Fraction(*d["side"]), d["n"], d["m"])


@dataclass
class CellTable:
    """All cells of X_j: index in units of slen(X_j), word, gate flag."""
    level: int
    index: np.ndarray
    words: np.ndarray
    gate: np.ndarray

    def __len__(self) -> int:
        return len(self.index)

    def mass(self, side) -> np.ndarray:
        """mu_j mass of each cell given the cell side slen(X_j)."""
        colored = np.count_nonzero(self.words, axis=1)
        return float(side) ** 3 * 0.5 ** colored


@dataclass
class Complex:
    """X_l described implicitly by its schedule; cells and records on demand."""
    schedule: LevelSchedule
    level: int
    max_cells: int = DEFAULT_MAX_CELLS
    _cells: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not 0 <= self.level <= self.schedule.levels:
            raise ValueError(f"level {self.level} outside 0..{self.schedule.levels}")

    def slen(self, j: int) -> Fraction:
        return self.schedule.slen(j)

    def cells(self, j: int) -> CellTable:
        if j in self._cells:
            return self._cells[j]
        if j == 0:
            table = CellTable(0, np.zeros((1, 3), dtype=np.int64),
                              np.zeros((1, 0), dtype=np.int8), np.zeros(1, dtype=bool))
        else:
            prev = self.cells(j - 1)
            table = _refine_cells(prev, self.schedule.entry(j), self.max_cells)
        self._cells[j] = table
        return table

    def records(self, stage: int) -> list:
        if not 1 <= stage <= self.level:
            raise ValueError(f"stage {stage} outside 1..{self.level}")
        e = self.schedule.entry(stage)
        parents = self.cells(stage - 1)
        doubled = ~parents.gate if not e.block_start else np.ones(len(parents), bool)
        side = self.schedule.slen(stage - 1)
        return [
            DoublingRecord(stage, tuple(int(v) for v in parents.index[i]),
                           tuple(int(v) for v in parents.words[i]), side, e.n, e.m)
            for i in np.flatnonzero(doubled)
        ]

    def record_count(self, stage: int) -> int:
        e = self.schedule.entry(stage)
        parents = self.cells(stage - 1)
        return len(parents) if e.block_start else int(np.count_nonzero(~parents.gate))

    def all_records(self) -> list:
        out = []
        for j in range(1, self.level + 1):
            out.extend(self.records(j))
        return out

    def record_at(self, point: LabeledPoint, stage: int) -> Optional[DoublingRecord]:
        """The stage record whose closed K holds the point, if the cell was doubled."""
        cls = classify(np.array([point.base]), self.schedule, max(stage, 1))
        if not (cls.colorable[0, stage - 1] or cls.boundary[0, stage - 1]):
            return None
        e = self.schedule.entry(stage)
        cell = tuple(int(v) for v in cls.parent[stage - 1, 0])
        prefix = point.word[: stage - 1]
        return DoublingRecord(stage, cell, tuple(prefix), self.schedule.slen(stage - 1), e.n, e.m)

    def to_dict(self, max_records: Optional[int] = None) -> dict:
        total = sum(self.record_count(j) for j in range(1, self.level + 1))
        if max_records is not None and total > max_records:
            raise ResolutionError(f"{total} records exceed the serialization cap {max_records}")
        return {
            "version": CACHE_VERSION,
            "schedule": self.schedule.to_dict(),
            "level": self.level,
            "records": [r.to_dict() for r in self.all_records()],
        }

    def dumps(self, max_records: Optional[int] = None) -> str:
        return json.dumps(self.to_dict(max_records), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "Complex":
        if d.get("version") != CACHE_VERSION:
            raise ValueError(f"unsupported complex cache version {d.get('version')}")
        sched = LevelSchedule.from_dict(d["schedule"])
        cx = cls(sched, d["level"])
        stored = [DoublingRecord.from_dict(r) for r in d["records"]]
        if stored != cx.all_records():
            raise ValueError("stored records do not match the schedule")
        return cx


def _refine_cells(prev: CellTable, e, max_cells: int) -> CellTable:
    m = e.m
    doubled = np.ones(len(prev), bool) if e.block_start else ~prev.gate
    nd = int(np.count_nonzero(doubled))
    k3 = (m // 3) ** 3
    count = nd * (m**3 + k3) + (len(prev) - nd) * m**3
    if count > max_cells:
        raise ResolutionError(f"X_{e.stage} has {count} cells, above cap {max_cells}")
    d = np.arange(m)
    digits = np.stack(np.meshgrid(d, d, d, indexing="ij"), -1).reshape(-1, 3)
    in_k = np.all((digits >= m // 3) & (digits < 2 * (m // 3)), axis=1)
    central = np.all(digits == (m - 1) // 2, axis=1)

    idx_parts, word_parts, gate_parts = [], [], []

    def emit(sel_parent, sel_digits, color, gate_flags):
        pi = prev.index[sel_parent]
        child = (pi[:, None, :] * m + sel_digits[None, :, :]).reshape(-1, 3)
        pw = np.repeat(prev.words[sel_parent], len(sel_digits), axis=0)
        col = np.full((len(child), 1), color, dtype=np.int8)
        idx_parts.append(child)
        word_parts.append(np.hstack([pw, col]))
        gate_parts.append(np.tile(gate_flags, len(pi)))

    dp = np.flatnonzero(doubled)
    sp = np.flatnonzero(~doubled)
    if len(dp):
        emit(dp, digits[~in_k], WILD, central[~in_k])
        emit(dp, digits[in_k], GREEN, central[in_k])
        emit(dp, digits[in_k], RED, central[in_k])
    if len(sp):
        emit(sp, digits, WILD, np.ones(len(digits), bool))
    return CellTable(e.stage, np.vstack(idx_parts), np.vstack(word_parts), np.concatenate(gate_parts))


def build_complex(schedule: LevelSchedule, l: int, max_cells: int = DEFAULT_MAX_CELLS) -> Complex:
    return Complex(schedule, l, max_cells)


def canonical_words(cls: Classification, choice=None) -> np.ndarray:
    """Words with wildcards at non-colorable stages and `choice` elsewhere.

    choice may be None (green), one color, a length-l sequence, or a dict
    stage -> color (missing stages green).
    """
    n, level = cls.colorable.shape
    if choice is None:
        fill = np.full(level, GREEN, dtype=np.int8)
    elif isinstance(choice, dict):
        fill = np.array([choice.get(t, GREEN) for t in range(1, level + 1)], dtype=np.int8)
    elif np.ndim(choice) == 0:
        fill = np.full(level, int(choice), dtype=np.int8)
    else:
        fill = np.asarray(choice, dtype=np.int8)
        if fill.shape != (level,):
            raise ValueError("choice sequence length must equal the level")
    if np.any((fill != GREEN) & (fill != RED)):
        raise ValueError("choice colors must be green or red")
    return np.where(cls.colorable, fill[None, :], WILD).astype(np.int8)


def resolve_word(schedule: LevelSchedule, base, l: int, choice=None) -> LabeledPoint:
    cls = classify(np.array([base], dtype=float), schedule, l)
    return LabeledPoint(tuple(base), tuple(canonical_words(cls, choice)[0]))


def resolve_words(schedule: LevelSchedule, bases, l: int, choice=None) -> PointSet:
    bases = np.atleast_2d(np.asarray(bases, dtype=float))
    cls = classify(bases, schedule, l)
    ps = PointSet(bases, canonical_words(cls, choice))
    ps._classification[schedule] = cls
    return ps


def is_canonical(schedule: LevelSchedule, points: PointSet) -> np.ndarray:
    cls = points.classification(schedule)
    return np.all((points.words != WILD) == cls.colorable, axis=1)


def project(p: LabeledPoint, l: int) -> LabeledPoint:
    if l > p.level or l < 0:
        raise ValueError(f"cannot project level {p.level} point to level {l}")
    return LabeledPoint(p.base, p.word[:l])


def project_set(points: PointSet, l: int) -> PointSet:
    if l > points.level:
        raise ValueError("projection level above point level")
    return PointSet(points.bases, points.words[:, :l])


def lift_set(schedule: LevelSchedule, points: PointSet, l: int, fill: int = GREEN) -> PointSet:
    """Extend words to level l, coloring new colorable stages with `fill`."""
    if l < points.level:
        raise ValueError("lift level below point level")
    cls = classify(points.bases, schedule, l)
    extra = np.where(cls.colorable[:, points.level:], fill, WILD).astype(np.int8)
    ps = PointSet(points.bases, np.hstack([points.words, extra]))
    ps._classification[schedule] = cls
    return ps


def sample_mu(schedule: LevelSchedule, level: int, count: int, rng: np.random.Generator,
              lo=None, hi=None) -> PointSet:
    """Sample mu_level: Lebesgue base (optionally in a box) with fair colors."""
    lo = np.zeros(3) if lo is None else np.clip(np.asarray(lo, float), 0, 1)
    hi = np.ones(3) if hi is None else np.clip(np.asarray(hi, float), 0, 1)
    bases = lo + (hi - lo) * rng.random((count, 3))
    cls = classify(bases, schedule, level)
    colors = rng.integers(GREEN, RED + 1, size=(count, level), dtype=np.int8)
    ps = PointSet(bases, np.where(cls.colorable, colors, WILD).astype(np.int8))
    ps._classification[schedule] = cls
    return ps

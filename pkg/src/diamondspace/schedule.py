"""Level schedule: block parameters, subdivision factors and side lengths."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

# 1/slen(X_l) above this is refused. Cell indices are int64 and float
# coordinates lose meaning well before 1e18.
DEFAULT_RESOLUTION_CAP = 10**18


class ResolutionError(ValueError):
    """Raised when a requested depth exceeds the configured resolution cap."""


@dataclass(frozen=True)
class StageEntry:
    stage: int
    block: int
    n: int
    m: int
    block_start: bool
    slen: Fraction


@dataclass(frozen=True)
class LevelSchedule:
    n0: int
    levels: int
    toy_mode: bool
    stages: tuple
    subdivision: Optional[int] = None

    def slen(self, j: int) -> Fraction:
        if j == 0:
            return Fraction(1)
        return self.stages[j - 1].slen

    def entry(self, j: int) -> StageEntry:
        if not 1 <= j <= self.levels:
            raise IndexError(f"stage {j} outside 1..{self.levels}")
        return self.stages[j - 1]

    def block_param(self, k: int) -> int:
        """n for block k (1-indexed)."""
        return block_param(self.n0, k, self.toy_mode)

    def n_bar(self, k: int) -> int:
        """Last stage of block k; n_bar(0) = 0."""
        return sum(self.block_param(i) ** 3 for i in range(1, k + 1))

    def block_of(self, j: int) -> int:
        k, end = 0, 0
        while end < j:
            k += 1
            end += self.block_param(k) ** 3
        return k

    def block_stages(self, k: int) -> range:
        return range(self.n_bar(k - 1) + 1, self.n_bar(k) + 1)

    def jump_cost(self, j: int) -> Fraction:
        """Jump cost of a stage-j record: slen(X_{j-1}) / (4 n)."""
        e = self.entry(j)
        return self.slen(j - 1) / (4 * e.n)

    def to_dict(self) -> dict:
        return {
            "n0": self.n0,
            "levels": self.levels,
            "toy_mode": self.toy_mode,
            "subdivision": self.subdivision,
            "stages": [
                {
                    "stage": e.stage,
                    "block": e.block,
                    "n": e.n,
                    "m": e.m,
                    "block_start": e.block_start,
                    "slen": [e.slen.numerator, e.slen.denominator],
                }
                for e in self.stages
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LevelSchedule":
        sched = build_schedule(
            d["n0"], d["levels"], d["toy_mode"], subdivision=d.get("subdivision"),
            resolution_cap=None, warn=False,
        )
        stored = tuple(
            StageEntry(s["stage"], s["block"], s["n"], s["m"], s["block_start"],
                       Fraction(*s["slen"]))
            for s in d["stages"]
        )
        if stored != sched.stages:
            raise ValueError("stored schedule does not match its parameters")
        return sched


def block_param(n0: int, k: int, toy_mode: bool) -> int:
    # Standard indexing uses n_k = n0 + k. In toy mode block 1 runs with n0
    # itself so that small examples (n0 = 2) stay small.
    return n0 + k - 1 if toy_mode else n0 + k


def standard_subdivision(n: int) -> int:
    """Smallest odd multiple of 3 with 1/m in [1/(128 n), 1/(32 n)]."""
    m = 32 * n
    while m % 6 != 3:
        m += 1
    assert m <= 128 * n
    return m


def check_subdivision(m: int, n: int, toy_mode: bool) -> None:
    if m < 3 or m % 2 == 0 or m % 3 != 0:
        raise ValueError(f"subdivision factor {m} must be odd and divisible by 3")
    if not toy_mode and not 32 * n <= m <= 128 * n:
        raise ValueError(f"subdivision factor {m} outside [32n, 128n] for n={n}")


def build_schedule(n0: int, levels: int, toy_mode: bool = True, *,
                   subdivision: Optional[int] = None,
                   resolution_cap: Optional[int] = DEFAULT_RESOLUTION_CAP,
                   warn: bool = True) -> LevelSchedule:
    """Build the stage table for X_0, ..., X_levels.

    Args:
        n0: base block parameter, at least 2.
        levels: number of doubling stages.
        toy_mode: use m = 3 (or the override) instead of m ~ 32n.
        subdivision: optional fixed factor for every stage.
        resolution_cap: refuse schedules with 1/slen(X_levels) above this.
    """
    if n0 < 2:
        raise ValueError("n0 must be at least 2")
    if levels < 0:
        raise ValueError("levels must be non-negative")
    if warn and not toy_mode and n0 < 100:
        warnings.warn(f"n0={n0} is below the recommended 100 outside toy mode",
                      stacklevel=2)

    stages = []
    slen = Fraction(1)
    k, block_end = 0, 0
    for j in range(1, levels + 1):
        block_start = j > block_end
        if block_start:
            k += 1
            block_end += block_param(n0, k, toy_mode) ** 3
        n = block_param(n0, k, toy_mode)
        if subdivision is not None:
            m = subdivision
        else:
            m = 3 if toy_mode else standard_subdivision(n)
        check_subdivision(m, n, toy_mode)
        slen = slen / m
        if resolution_cap is not None and slen.denominator > resolution_cap:
            raise ResolutionError(
                f"stage {j} has resolution 1/{slen.denominator}, above cap {resolution_cap}")
        stages.append(StageEntry(j, k, n, m, block_start, slen))
    return LevelSchedule(n0, levels, toy_mode, tuple(stages), subdivision)

"""Monte-Carlo measures of metric balls, doubling and ball-shape checks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .complex import Complex, LabeledPoint, PointSet, project, project_set, sample_mu
from .metric import discrete_log, distances_from, sheet_count
from .report import ExperimentReport
from .rng import make_rng


@dataclass(frozen=True)
class MeasureEstimate:
    value: float
    stderr: float
    samples: int
    seed: int


def _box(center, r):
    c = np.asarray(center, dtype=float)
    lo, hi = np.clip(c - r, 0.0, 1.0), np.clip(c + r, 0.0, 1.0)
    return lo, hi, float(np.prod(hi - lo))


def ball_measure(space: Complex, center: LabeledPoint, r: float, samples: int,
                 seed: int) -> MeasureEstimate:
    """mu_l(B(center, r)) by sampling the box that contains the ball.

    Distances dominate Euclidean distances of the bases, so the ball sits
    inside the Euclidean box of half-side r around the center; the hit
    fraction is rescaled by the box volume.
    """
    if samples <= 0:
        raise ValueError("ball_measure needs a positive sample count")
    if r <= 0:
        return MeasureEstimate(0.0, 0.0, samples, seed)
    lo, hi, vol = _box(center.base, r)
    rng = make_rng(seed)
    pts = sample_mu(space.schedule, center.level, samples, rng, lo, hi)
    d = distances_from(space, center, pts)
    f = float(np.mean(d <= r))
    return MeasureEstimate(vol * f, vol * float(np.sqrt(f * (1 - f) / samples)), samples, seed)


def doubling_ratio(space: Complex, p: LabeledPoint, r: float, samples: int,
                   rng: np.random.Generator):
    """(ratio, hits in B(p,r), hits in B(p,r/2)) from one shared sample."""
    lo, hi, _ = _box(p.base, r)
    pts = sample_mu(space.schedule, p.level, samples, rng, lo, hi)
    d = distances_from(space, p, pts)
    big, small = int(np.count_nonzero(d <= r)), int(np.count_nonzero(d <= r / 2))
    ratio = big / small if small else np.inf
    return ratio, big, small


def _ratio_stderr(big: int, small: int) -> float:
    # delta method for big/small where small counts a subset of big
    if small == 0:
        return np.inf
    ratio = big / small
    return ratio * np.sqrt(max(1.0 / small - 1.0 / big, 0.0))


def verify_doubling(space: Complex, level: Optional[int] = None, trials: int = 200,
                    seed: int = 0, samples: int = 4000, r_range=(0.02, 0.4),
                    bound: Optional[float] = None, min_hits: int = 30) -> ExperimentReport:
    """Ratios mu(B(p,r)) / mu(B(p,r/2)) over random centers and radii."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    level = space.level if level is None else level
    rep = ExperimentReport("doubling", {"level": level, "trials": trials, "samples": samples,
                                        "r_min": r_range[0], "r_max": r_range[1]}, seed=seed)
    ratios, inconclusive = [], 0
    for i in range(trials):
        rng = make_rng(seed, i)
        p = sample_mu(space.schedule, level, 1, rng)[0]
        r = float(np.exp(rng.uniform(np.log(r_range[0]), np.log(r_range[1]))))
        ratio, big, small = doubling_ratio(space, p, r, samples, rng)
        ok = small >= min_hits
        inconclusive += not ok
        if ok:
            ratios.append(ratio)
        rep.add("ratio", ratio, None, (ratio >= 1.0) if ok else None, level=level,
                trial=i, r=r, hits=big, half_hits=small)
    ratios = np.array(ratios)
    worst = float(ratios.max()) if len(ratios) else np.inf
    rep.summary = {"max_ratio": worst, "min_ratio": float(ratios.min()) if len(ratios) else np.nan,
                   "median_ratio": float(np.median(ratios)) if len(ratios) else np.nan,
                   "inconclusive": inconclusive, "fitted_constant": worst}
    rep.check("max_ratio", worst, bound, np.isfinite(worst) and (bound is None or worst <= bound),
              level=level)
    rep.check("min_ratio_at_least_1", rep.summary["min_ratio"], 1.0,
              len(ratios) > 0 and ratios.min() >= 1.0, level=level)
    rep.check("inconclusive_fraction", inconclusive / trials, 0.5, inconclusive / trials <= 0.5,
              level=level)
    return rep


def verify_lebesgue_doubling(space: Complex, trials: int = 20, seed: int = 0,
                             samples: int = 20000) -> ExperimentReport:
    """Level-0 interior balls: the doubling ratio is 8 up to MC error."""
    rep = ExperimentReport("doubling-level0", {"trials": trials, "samples": samples}, seed=seed)
    for i in range(trials):
        rng = make_rng(seed, 10_000 + i)
        r = float(rng.uniform(0.05, 0.25))
        c = rng.uniform(r, 1 - r, size=3)
        p = LabeledPoint(tuple(c), ())
        ratio, big, small = doubling_ratio(space, p, r, samples, rng)
        err = _ratio_stderr(big, small)
        rep.check("ratio", ratio, 4 * err, abs(ratio - 8.0) <= 4 * err, level=0, trial=i, r=r)
    return rep


def verify_ball_shape(space: Complex, p: LabeledPoint, l: int, r: float,
                      samples: int = 1000, seed: int = 0) -> ExperimentReport:
    """Compare B(p_j, r) with the preimage of B(p_l, r) under projection.

    Points of the preimage must lie in B(p_j, r + 4 slen(X_l)) and points of
    B(p_j, r) must lie in the preimage.
    """
    j = p.level
    if not 0 <= l <= j:
        raise ValueError("need 0 <= l <= p.level")
    slack = 4 * float(space.slen(l))
    lo, hi, _ = _box(p.base, r + slack)
    rng = make_rng(seed)
    pts = sample_mu(space.schedule, j, samples, rng, lo, hi)
    dj = distances_from(space, p, pts)
    dl = distances_from(space, project(p, l), project_set(pts, l))
    eps = 1e-12
    outer = int(np.count_nonzero((dl <= r) & (dj > r + slack + eps)))
    inner = int(np.count_nonzero((dj <= r) & (dl > r + eps)))
    rep = ExperimentReport("ball-shape", {"j": j, "l": l, "r": r, "samples": samples}, seed=seed)
    rep.check("preimage_outside_enlarged_ball", outer, 0, outer == 0, level=j)
    rep.check("ball_outside_preimage", inner, 0, inner == 0, level=j)
    rep.summary = {"violations": outer + inner, "in_preimage": int(np.count_nonzero(dl <= r)),
                   "in_ball": int(np.count_nonzero(dj <= r)),
                   "equal_when_same_level": bool(l == j and np.array_equal(dl <= r, dj <= r))}
    return rep


def verify_sheet_count(space: Complex, trials: int = 200, seed: int = 0,
                       r_range=(0.01, 0.4)) -> ExperimentReport:
    """Sheets of X_k met by B(p, r) against 2^(k - lg r)."""
    k = space.level
    rep = ExperimentReport("sheet-count", {"level": k, "trials": trials}, seed=seed)
    ratios = []
    for i in range(trials):
        rng = make_rng(seed, i)
        p = sample_mu(space.schedule, k, 1, rng)[0]
        r = float(np.exp(rng.uniform(np.log(r_range[0]), np.log(r_range[1]))))
        count = sheet_count(space, p, r)
        scale = 2.0 ** (k - discrete_log(r, space.schedule))
        ratios.append(count / scale)
        rep.add("sheets", count, scale, None, level=k, trial=i, r=r)
    c = float(max(ratios))
    rep.summary = {"fitted_constant": c}
    rep.check("fitted_constant", c, None, np.isfinite(c), level=k)
    return rep


def sample_ball(space: Complex, center: LabeledPoint, r: float, count: int,
                rng: np.random.Generator, batch: int = 4096, max_batches: int = 1000) -> PointSet:
    """Rejection-sample mu restricted to B(center, r)."""
    lo, hi, _ = _box(center.base, r)
    kept_b, kept_w, total = [], [], 0
    for _ in range(max_batches):
        pts = sample_mu(space.schedule, center.level, batch, rng, lo, hi)
        ok = distances_from(space, center, pts) <= r
        kept_b.append(pts.bases[ok])
        kept_w.append(pts.words[ok])
        total += int(ok.sum())
        if total >= count:
            break
    else:
        raise RuntimeError("ball sampling did not collect enough points")
    return PointSet(np.vstack(kept_b)[:count], np.vstack(kept_w)[:count])

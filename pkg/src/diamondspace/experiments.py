"""End-to-end experiment drivers: gate collapse, differentiability decay,
disconnected tangents, gate hitting, and the metric and path checks."""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .complex import (GREEN, RED, WILD, Complex, LabeledPoint, PointSet, build_complex, classify,
                      project_set, sample_mu)
from .functions import LipschitzFunction
from .harmonic.energy import horizontal_gradient
from .measure import sample_ball
from .metric import distances_from, pair_distances
from .paths import build_configuration, check_good_path, good_path
from .report import ExperimentReport
from .rng import make_rng
from .schedule import build_schedule


# ---------------------------------------------------------------- gate collapse

@dataclass
class BadCubeRecord:
    block: int
    stage: int
    cell: tuple
    prefix: tuple
    statistic: float
    threshold: float
    mass: float
    n: int

    @property
    def is_bad(self) -> bool:
        return self.statistic >= self.threshold


def _gate_face_nodes(k: int) -> np.ndarray:
    """Face midpoints of a k x k grid on each face of the unit cube, so equal
    weights are area weights."""
    t = (np.arange(k) + 0.5) / k
    a, b = np.meshgrid(t, t, indexing="ij")
    a, b = a.ravel(), b.ravel()
    out = []
    for axis in range(3):
        others = [i for i in range(3) if i != axis]
        for side in (0.0, 1.0):
            pts = np.zeros((k * k, 3))
            pts[:, axis] = side
            pts[:, others[0]] = a
            pts[:, others[1]] = b
            out.append(pts)
    return np.vstack(out)


def gate_statistics(space: Complex, f: LipschitzFunction, L: int, mode: str = "real",
                    face_nodes: int = 4) -> list:
    """One record per doubled cube of stages 1..L with its gate statistic.

    real: |mean over the green gate boundary - mean over the red one|;
    l2: max over paired nodes of |f(y_green) - f(y_red)|. Threshold uses
    eps = 1 and is rescaled by `bad_cubes`.
    """
    if mode not in ("real", "l2"):
        raise ValueError("mode must be 'real' or 'l2'")
    sched = space.schedule
    unit = _gate_face_nodes(face_nodes)
    out = []
    for t in range(1, L + 1):
        e = sched.entry(t)
        side = float(sched.slen(t - 1))
        gside = float(sched.slen(t))
        parents = space.cells(t - 1)
        doubled = np.ones(len(parents), bool) if e.block_start else ~parents.gate
        idx = np.flatnonzero(doubled)
        if not len(idx):
            continue
        masses = parents.mass(sched.slen(t - 1))
        c = (e.m - 1) // 2
        per = len(unit)
        gate_origin = parents.index[idx] * side + c * gside
        bases = (gate_origin[:, None, :] + gside * unit[None]).reshape(-1, 3)
        prefix = np.repeat(parents.words[idx], per, axis=0)
        cls = classify(bases, sched, t)
        pre = np.where(cls.colorable[:, : t - 1], np.where(prefix == WILD, GREEN, prefix), WILD)
        vals = []
        for color in (GREEN, RED):
            last = np.where(cls.colorable[:, t - 1], color, WILD)[:, None]
            pts = PointSet(bases, np.hstack([pre, last]).astype(np.int8))
            v = f(pts)
            vals.append(v.reshape(len(idx), per, -1))
        g, r = vals
        if mode == "real":
            stat = np.linalg.norm(g.mean(axis=1) - r.mean(axis=1), axis=1)
        else:
            stat = np.max(np.linalg.norm(g - r, axis=2), axis=1)
        thr = math.sqrt(3) * side / (256 * e.n)
        for i, pi in enumerate(idx):
            out.append(BadCubeRecord(e.block, t, tuple(int(v) for v in parents.index[pi]),
                                     tuple(int(v) for v in parents.words[pi]), float(stat[i]),
                                     thr, float(masses[pi]), e.n))
    return out


def bad_cubes(records: list, eps: float) -> list:
    return [r for r in records if r.statistic >= eps * r.threshold]


def weighted_sums(records: list, eps: float, L: int, mode: str = "real") -> list:
    """Partial sums over bad cubes of eps^w / n^3 * mu(Q), for stages 1..L."""
    w = 2 if mode == "real" else 4
    per_stage = np.zeros(L + 1)
    for r in bad_cubes(records, eps):
        per_stage[r.stage] += eps**w / r.n**3 * r.mass
    return list(np.cumsum(per_stage)[1:])


def gate_collapse_sweep(space: Complex, functions: list, eps: float = 0.5, L: Optional[int] = None,
                        mode: str = "real", bound: float = 1.0,
                        face_nodes: int = 4) -> ExperimentReport:
    """Bad-cube counts and weighted partial sums per level for each function."""
    L = space.level if L is None else L
    rep = ExperimentReport("collapse" if mode == "real" else "collapse-l2",
                           {"eps": eps, "L": L, "mode": mode, "bound": bound,
                            "face_nodes": face_nodes,
                            "functions": [f.spec.label() if f.spec else "custom"
                                          for f in functions]})
    fitted = 0.0
    for fi, f in enumerate(functions):
        recs = gate_statistics(space, f, L, mode, face_nodes)
        bad = bad_cubes(recs, eps)
        sums = weighted_sums(recs, eps, L, mode)
        lip2 = f.lipschitz**2
        for l in range(1, L + 1):
            n_bad = sum(1 for r in bad if r.stage == l)
            rep.add("bad_cubes", n_bad, None, None, level=l, function=fi)
            rep.add("partial_sum", sums[l - 1], None, None, level=l, function=fi)
        mono = all(b >= a for a, b in zip(sums, sums[1:]))
        finite = all(np.isfinite(sums))
        c = sums[-1] / lip2 if lip2 > 0 else (0.0 if sums[-1] == 0 else math.inf)
        fitted = max(fitted, c)
        rep.check("non_decreasing", float(mono), 1, mono, function=fi)
        rep.check("bounded", c, bound, finite and c <= bound, function=fi)
    rep.summary = {"fitted_constant": fitted}
    return rep


def collapse_schedule(n0: int = 2, L: int = 2, subdivision: int = 9):
    """Toy schedule for the collapse sweep. With m = 3 the gate is all of K,
    whose boundary is shared by both copies, so m = 9 is used."""
    return build_schedule(n0, L, True, subdivision=subdivision)


# -------------------------------------------------------- differentiability decay

@dataclass
class RemainderSample:
    point: LabeledPoint
    r: float
    remainder: float
    flagged: bool


def remainder(f: LipschitzFunction, p: LabeledPoint, r: float, eps: float,
              step: float = 1e-6, max_points: int = 200_000) -> RemainderSample:
    """sup over the (eps, r)-configuration of |f(q) - f(p) - grad f(p).(x(q) - x(p))| / r."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        conf = build_configuration(f.space, p, r, eps, max_points=max_points, warn=False)
    pts = conf.points()
    grad = horizontal_gradient(f, p, step)
    fp = np.asarray(f.at(p), float)
    fq = f(pts)
    dx = pts.bases - np.asarray(p.base)
    lin = dx @ grad.value.T if f.m > 1 else dx @ grad.value
    diff = fq - fp - lin
    res = np.abs(diff) if f.m == 1 else np.linalg.norm(diff, axis=1)
    return RemainderSample(p, r, float(np.max(res)) / r if len(res) else 0.0, grad.flagged)


def differentiability_decay(space: Complex, functions: list, samples: int = 200,
                            radii=(3**-1, 3**-2, 3**-3, 3**-4), eps: float = 0.5,
                            seed: int = 0, good_const: float = 1.0,
                            zero_tol: float = 1e-8) -> ExperimentReport:
    """Median and 90th percentile remainders along a shrinking radii ladder."""
    radii = sorted(radii, reverse=True)
    rep = ExperimentReport("diff-decay", {"samples": samples, "radii": list(radii), "eps": eps,
                                          "good_const": good_const,
                                          "functions": [f.spec.label() if f.spec else "custom"
                                                        for f in functions]}, seed=seed)
    for fi, f in enumerate(functions):
        rng = make_rng(seed, 21)
        pts = sample_mu(space.schedule, f.level, samples, rng)
        med, p90, frac = [], [], []
        for r in radii:
            rem = np.array([remainder(f, pts[i], r, eps).remainder for i in range(samples)])
            med.append(float(np.median(rem)))
            p90.append(float(np.percentile(rem, 90)))
            frac.append(float(np.mean(rem <= good_const * eps)))
            rep.add("median_remainder", med[-1], None, None, function=fi, r=r)
            rep.add("p90_remainder", p90[-1], None, None, function=fi, r=r)
            rep.add("good_fraction", frac[-1], None, None, function=fi, r=r)
            rep.add("max_remainder", float(rem.max()), None, None, function=fi, r=r)
        if f.spec is not None and f.spec.kind in ("coordinate", "affine"):
            worst = max(p90 + [0.0])
            rep.check("linear_zero_remainder", worst, zero_tol, worst <= zero_tol, function=fi)
            continue
        for name, seq in (("median", med), ("p90", p90)):
            ok = all(b <= a * (1 + 1e-9) for a, b in zip(seq, seq[1:]))
            rep.check(f"{name}_non_increasing", float(ok), 1, ok, function=fi)
        ok = all(b >= a for a, b in zip(frac, frac[1:]))
        rep.check("good_fraction_non_decreasing", float(ok), 1, ok, function=fi)
    return rep


# ---------------------------------------------------------- tangent disconnection

def tangent_disconnection(k: int = 1, samples: int = 200_000, seed: int = 0, n0: int = 100,
                          toy_mode: bool = False, subdivision: Optional[int] = None,
                          near: int = 500, tol: float = 0.05,
                          diameter_factor: float = 3.0) -> ExperimentReport:
    """Blow up X_t at the green center of a block-start gate by 1/slen(X_t).

    Samples of the rescaled ball of radius sqrt(n) are split by their
    color at stage t. The separation ratio is the smallest cross-color
    distance over slen(X_t); each part's sample diameter is compared with
    diameter_factor times that scale.
    """
    if k != 1:
        raise ValueError("only the first block is reachable: later blocks start after "
                         "(n0 + 1)^3 stages")
    sched = build_schedule(n0, 1, toy_mode, subdivision=subdivision, warn=False)
    t = 1
    space = build_complex(sched, t)
    e = sched.entry(t)
    scale = float(sched.slen(t))
    rec = space.records(t)[0]
    c = tuple(float(v) for v in rec.center)
    p = LabeledPoint(c, (GREEN,))
    R = math.sqrt(e.n) * scale
    rng = make_rng(seed, 31)
    lo = np.clip(np.array(c) - R, 0, 1)
    hi = np.clip(np.array(c) + R, 0, 1)
    parts = {}
    for color in (GREEN, RED):
        bases = lo + (hi - lo) * rng.random((samples, 3))
        cls = classify(bases, sched, t)
        words = np.where(cls.colorable[:, :1], color, WILD).astype(np.int8)
        pts = PointSet(bases, words)
        d = distances_from(space, p, pts)
        keep = (d <= R) & cls.colorable[:, 0]
        parts[color] = (pts.subset(np.flatnonzero(keep)), d[keep])
    rep = ExperimentReport("tangent", {"k": k, "n0": n0, "toy_mode": toy_mode, "samples": samples,
                                       "m": e.m, "n": e.n, "stage": t}, seed=seed)
    green, red = parts[GREEN][0], parts[RED][0]
    if len(green) < 2 or len(red) < 2:
        rep.check("components_sampled", min(len(green), len(red)), 2, False)
        return rep
    # the closest cross pairs involve points nearest the jump center
    cg = np.argsort(np.linalg.norm(green.bases - c, axis=1))[:near]
    cr = np.argsort(np.linalg.norm(red.bases - c, axis=1))[:near]
    ii, jj = np.meshgrid(cg, cr, indexing="ij")
    cross = pair_distances(space, green.subset(ii.ravel()), red.subset(jj.ravel()))
    ratio = float(cross.min()) / scale
    diam = {}
    for name, part in (("green", green), ("red", red)):
        b = part.bases
        # a diameter over the sheet: all pairs share the color, so distances are Euclidean
        far = b[np.argmax(np.linalg.norm(b - b.mean(0), axis=1))]
        i = int(np.argmax(np.linalg.norm(b - far, axis=1)))
        j = int(np.argmax(np.linalg.norm(b - b[i], axis=1)))
        pair = pair_distances(space, part.subset([i]), part.subset([j]))
        diam[name] = float(pair[0]) / scale
    same = []
    for part in (green, red):
        sel = np.arange(min(len(part), 2000))
        sub = part.subset(sel)
        order = np.lexsort(sub.bases.T[::-1])
        a, b = sub.subset(order[:-1]), sub.subset(order[1:])
        same.append(float(pair_distances(space, a, b).min()) / scale)
    rep.add("green_samples", len(green))
    rep.add("red_samples", len(red))
    rep.add("same_color_min_ratio", min(same))
    rep.add("jump_over_scale", float(sched.jump_cost(t)) / scale)
    rep.check("separation_ratio", ratio, 1 - tol, ratio >= 1 - tol)
    for name, v in diam.items():
        rep.check(f"{name}_diameter", v, diameter_factor, v >= diameter_factor)
    rep.summary = {"separation_ratio": ratio, "green_diameter": diam["green"],
                   "red_diameter": diam["red"], "rescaled_radius": math.sqrt(e.n),
                   "same_color_min_ratio": min(same)}
    return rep


# --------------------------------------------------------------- gate hitting

def gate_hit_probability(m: int, stages: int) -> float:
    """P(a mu-random point enters a gate during a block of doubled stages)."""
    return 1.0 - (1.0 - 1.0 / m**3) ** stages


def gate_hitting_frequency(trials: int = 20_000, blocks: int = 3, seed: int = 0, n0: int = 2,
                           toy_mode: bool = True, subdivision: Optional[int] = None,
                           floor: float = 0.05) -> ExperimentReport:
    """Per-block frequency of E_k = {the point's cell is a gate at some stage
    of block k}, and correlations between consecutive blocks.

    Base digits of a mu-random point are independent and uniform across
    stages, so each stage is simulated by drawing its three base-m digits;
    the child cell is the gate iff all three equal (m - 1)/2. A block
    starts with every cell doubled, so only the block's own stages matter.
    """
    from .schedule import block_param, standard_subdivision
    rep = ExperimentReport("gate-frequency", {"trials": trials, "blocks": blocks, "n0": n0,
                                              "toy_mode": toy_mode}, seed=seed)
    hits = np.zeros((trials, blocks), bool)
    expected = []
    for k in range(1, blocks + 1):
        n = block_param(n0, k, toy_mode)
        m = subdivision or (3 if toy_mode else standard_subdivision(n))
        stages = n**3
        rng = make_rng(seed, 41, k)
        central = (m - 1) // 2
        hit = np.zeros(trials, bool)
        chunk = max(1, 2_000_000 // max(trials, 1))
        for s0 in range(0, stages, chunk):
            cnt = min(chunk, stages - s0)
            digits = rng.integers(0, m, size=(trials, cnt, 3))
            hit |= np.any(np.all(digits == central, axis=2), axis=1)
        hits[:, k - 1] = hit
        p = gate_hit_probability(m, stages)
        expected.append(p)
        freq = float(hit.mean())
        se = math.sqrt(max(p * (1 - p), 1e-12) / trials)
        rep.add("frequency", freq, None, None, block=k, m=m, stages=stages)
        rep.check("frequency_matches_exact", abs(freq - p), 5 * se, abs(freq - p) <= 5 * se,
                  block=k, expected=p)
    freqs = hits.mean(axis=0)
    lower = float(freqs.min())
    rep.check("uniform_lower_bound", lower, floor, lower >= floor)
    corr_tol = 4 / math.sqrt(trials)
    for k in range(1, blocks):
        a, b = hits[:, k - 1].astype(float), hits[:, k].astype(float)
        if a.std() == 0 or b.std() == 0:
            corr = 0.0
        else:
            corr = float(np.corrcoef(a, b)[0, 1])
        rep.check("block_correlation", corr, corr_tol, abs(corr) <= corr_tol, block=k)
    rep.summary = {"frequencies": [float(v) for v in freqs], "expected": expected,
                   "lower_bound": lower}
    return rep


def exact_gate_fraction(space: Complex, level: int) -> float:
    """mu-measure of gate cells of X_level, by exact cell counting."""
    cells = space.cells(level)
    mass = cells.mass(space.schedule.slen(level))
    return float(mass[cells.gate].sum() / mass.sum())


# ------------------------------------------------------------ metric and paths

def _near(space, x: PointSet, radius: float, rng) -> PointSet:
    """Random points whose bases lie within a box of the given half-side
    around x, with random colors."""
    sched = space.schedule
    lo = np.clip(x.bases - radius, 0, 1)
    hi = np.clip(x.bases + radius, 0, 1)
    b = lo + (hi - lo) * rng.random(x.bases.shape)
    cls = classify(b, sched, x.level)
    colors = rng.integers(1, 3, size=x.words.shape)
    return PointSet(b, np.where(cls.colorable, colors, WILD).astype(np.int8))


def metric_axioms(space: Complex, triples: int = 1000, seed: int = 0, delta: float = 0.02,
                  radius: float = 0.2) -> ExperimentReport:
    """Symmetry, triangle inequality and identity on seeded triples, then
    sheet isometry and 1-Lipschitz projection on seeded pairs."""
    rng = make_rng(seed, 51)
    l = space.level
    # half of the anchors are conditioned on the first K so that color
    # conflicts are common
    half = triples // 2
    x = sample_mu(space.schedule, l, triples - half, rng)
    xk = sample_mu(space.schedule, l, half, rng, np.full(3, 1 / 3), np.full(3, 2 / 3))
    x = PointSet(np.vstack([x.bases, xk.bases]), np.vstack([x.words, xk.words]))
    y = _near(space, x, radius, rng)
    z = _near(space, y, radius, rng)
    dxy = pair_distances(space, x, y)
    dyx = pair_distances(space, y, x)
    dyz = pair_distances(space, y, z)
    dxz = pair_distances(space, x, z)
    dxx = pair_distances(space, x, x)
    rep = ExperimentReport("metric-axioms", {"level": l, "triples": triples, "delta": delta,
                                             "radius": radius}, seed=seed)
    sym = np.abs(dxy - dyx) > delta * np.maximum(dxy, dyx)
    tri = dxz > (dxy + dyz) * (1 + 2 * delta)
    hard_tri = dxz > (dxy + dyz) * (1 + 1e-12)
    ident = dxx != 0
    rep.check("symmetry_violations", int(sym.sum()), 0, not sym.any(), level=l)
    rep.check("triangle_violations", int(tri.sum()), 0, not tri.any(), level=l)
    rep.check("triangle_hard_violations", int(hard_tri.sum()), 0, not hard_tri.any(), level=l)
    rep.check("identity_violations", int(ident.sum()), 0, not ident.any(), level=l)
    rep.check("nonnegative", float(min(dxy.min(), dxz.min())), 0.0,
              dxy.min() >= 0 and dxz.min() >= 0, level=l)
    slack = dxy + dyz - dxz
    rep.summary = {"min_triangle_slack": float(slack.min()),
                   "conflicting_pairs": int(np.count_nonzero(
                       np.abs(dxy - np.linalg.norm(x.bases - y.bases, axis=1)) > 0))}
    iso = sheet_isometry(space, triples, seed, radius)
    proj = projection_lipschitz(space, triples, seed, radius)
    for r in iso.rows + proj.rows:
        rep.rows.append(r)
        if r["pass"] is False:
            rep.passed = False
    rep.summary.update(iso.summary)
    rep.summary.update(proj.summary)
    return rep


def sheet_isometry(space: Complex, pairs: int = 1000, seed: int = 0,
                   radius: float = 0.2) -> ExperimentReport:
    """Pairs with equal words (same wildcard pattern and colors) are at
    exactly their Euclidean base distance."""
    rng = make_rng(seed, 52)
    l = space.level
    x = sample_mu(space.schedule, l, pairs * 4, rng)
    y = _near(space, x, radius, rng)
    same = np.all((x.words == WILD) == (y.words == WILD), axis=1)
    idx = np.flatnonzero(same)[:pairs]
    a = x.subset(idx)
    b = PointSet(y.bases[idx], a.words.copy())
    d = pair_distances(space, a, b)
    e = np.linalg.norm(a.bases - b.bases, axis=1)
    bad = int(np.count_nonzero(d != e))
    rep = ExperimentReport("sheet-isometry", {"level": l, "pairs": len(idx)}, seed=seed)
    rep.check("sheet_isometry_violations", bad, 0, bad == 0, level=l)
    rep.summary = {"isometry_pairs": len(idx)}
    return rep


def projection_lipschitz(space: Complex, pairs: int = 1000, seed: int = 0,
                         radius: float = 0.2) -> ExperimentReport:
    rng = make_rng(seed, 53)
    l = space.level
    x = sample_mu(space.schedule, l, pairs, rng)
    y = _near(space, x, radius, rng)
    d = pair_distances(space, x, y)
    rep = ExperimentReport("projection", {"level": l, "pairs": pairs}, seed=seed)
    worst = 0
    for lp in range(l):
        dp = pair_distances(space, project_set(x, lp), project_set(y, lp))
        bad = int(np.count_nonzero(dp > d * (1 + 1e-12)))
        worst += bad
        rep.check("projection_increases", bad, 0, bad == 0, level=lp)
    rep.summary = {"projection_violations": worst}
    return rep


def path_checks(space: Complex, centers: int = 10, r: float = 0.1, eps: float = 0.5,
                seed: int = 0, max_points: int = 20_000) -> ExperimentReport:
    """(Gd1)-(Gd5) and len >= distance over full configurations."""
    rng = make_rng(seed, 61)
    rep = ExperimentReport("paths", {"centers": centers, "r": r, "eps": eps,
                                     "level": space.level}, seed=seed)
    worst_ratio = 0.0
    total = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for ci in range(centers):
            p = sample_mu(space.schedule, space.level, 1, rng)[0]
            conf = build_configuration(space, p, r, eps, max_points=max_points, warn=False)
            fails = {k: 0 for k in ("Gd1", "Gd2", "Gd4", "Gd5", "segments_geodesic", "hops_valid",
                                    "length_ge_lower")}
            jumps = 0
            for q, path in conf.paths():
                c = check_good_path(space, path, p, q, eps, r)
                for k in fails:
                    fails[k] += not c[k]
                jumps += c["jump_count"]
                if np.isfinite(c["Gd3_ratio"]):
                    worst_ratio = max(worst_ratio, c["Gd3_ratio"])
                total += 1
            for k, v in fails.items():
                rep.check(k, v, 0, v == 0, center=ci)
            rep.add("configuration_size", len(conf), None, None, center=ci)
            rep.add("jump_paths", jumps, None, None, center=ci)
    rep.summary = {"paths": total, "Gd3_fitted_constant": worst_ratio}
    rep.check("Gd3_fitted_constant", worst_ratio, None, np.isfinite(worst_ratio))
    return rep


def density_check(space: Complex, r: float = 0.1, eps: float = 0.1, points: int = 1000,
                  centers: int = 1, seed: int = 0) -> ExperimentReport:
    """Random points of B(p, r) lie within 5 eps r of the configuration."""
    rep = ExperimentReport("density", {"r": r, "eps": eps, "points": points,
                                       "centers": centers}, seed=seed)
    worst = 0.0
    for ci in range(centers):
        rng = make_rng(seed, 71, ci)
        p = sample_mu(space.schedule, space.level, 1, rng)[0]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            conf = build_configuration(space, p, r, eps, warn=False)
        qs = sample_ball(space, p, r, points, rng)
        dist = np.array([conf.witness(qs[i])[0] for i in range(len(qs))])
        far = int(np.count_nonzero(dist > 5 * eps * r))
        worst = max(worst, float(dist.max()) / (eps * r))
        rep.check("points_beyond_5_eps_r", far, 0, far == 0, center=ci)
    rep.summary = {"max_witness_over_eps_r": worst}
    return rep

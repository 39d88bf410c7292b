"""Acceptance suite: one recorded pass/fail line per criterion.

Each test runs at the stated tolerances and budget, records its line via the
`acceptance` fixture and then asserts, so a failing criterion shows up both
in the summary and as a failed test.
"""
import time
from pathlib import Path

import numpy as np
import pytest

from diamondspace import cli
from diamondspace.complex import Complex
from diamondspace.experiments import (collapse_schedule, density_check,
                                      differentiability_decay, gate_collapse_sweep,
                                      metric_axioms, path_checks, projection_lipschitz,
                                      sheet_isometry, tangent_disconnection)
from diamondspace.functions import LipschitzFunctionSpec
from diamondspace.harmonic.energy import (check_energy_lower_bound,
                                          check_l2_energy_lower_bound, radial_benchmark)
from diamondspace.harmonic.piecewise import check_orthogonality, check_telescoping
from diamondspace.measure import verify_doubling, verify_lebesgue_doubling
from diamondspace.metric import distance
from diamondspace.schedule import build_schedule

DELTA = 0.02


@pytest.fixture(scope="module")
def level3():
    return Complex(build_schedule(2, 8, toy_mode=True), 3)


@pytest.fixture(scope="module")
def level2():
    return Complex(build_schedule(2, 8, toy_mode=True), 2)


def _macshane(space, count=8, m=1, k=5):
    return [LipschitzFunctionSpec("random-MacShane", m=m, seed=i, count=count).build(space)
            for i in range(k)]


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


def test_c01_jump_distance(acceptance):
    with Timer() as t:
        cx = Complex(build_schedule(26, 1, toy_mode=True), 1)
        rec = cx.records(1)[0]
        r = distance(cx, rec.jump_green, rec.jump_red)
    ok = r.lower == r.upper == 1 / 104 and t.seconds < 1
    acceptance(1, "jump distance n=26", ok,
               f"lower={r.lower!r} upper={r.upper!r} target={1 / 104!r} ({t.seconds:.2f}s)")
    assert ok


def test_c02_metric_axioms(acceptance, level3):
    with Timer() as t:
        rep = metric_axioms(level3, triples=1000, seed=0, delta=DELTA)
    hard = {r["statistic"]: r["value"] for r in rep.rows if r["statistic"].endswith("violations")}
    ok = rep.passed and t.seconds < 120
    acceptance(2, "metric axioms, 1000 triples at level 3", ok,
               f"{hard}, min slack {rep.summary['min_triangle_slack']:.3g} ({t.seconds:.1f}s)")
    assert ok


def test_c03_isometry_and_projection(acceptance, level3):
    with Timer() as t:
        iso = sheet_isometry(level3, pairs=1000, seed=0)
        proj = projection_lipschitz(level3, pairs=1000, seed=0)
    ok = iso.passed and proj.passed and iso.summary["isometry_pairs"] == 1000 and t.seconds < 60
    acceptance(3, "sheet isometry and 1-Lipschitz projection", ok,
               f"isometry pairs {iso.summary['isometry_pairs']}, projection violations "
               f"{proj.summary['projection_violations']} ({t.seconds:.1f}s)")
    assert ok


def test_c04_radial_energy(acceptance):
    with Timer() as t:
        rep = radial_benchmark(ladder=(32, 64, 128))
    s = rep.summary
    ok = (s["finest_error_stated"] <= 0.05 and s["monotone_stated"] and t.seconds < 300)
    # the stated closed form is half the energy of the exact radial solution,
    # so this criterion is expected to fail; the exact-form error is reported
    acceptance(4, "radial energy vs stated closed form", ok,
               f"finest error {s['finest_error_stated']:.3f} vs stated (ratio "
               f"{s['ratio_to_stated']:.3f}), {s['finest_error_exact']:.4f} vs exact radial "
               f"energy, monotone exact={s['monotone_exact']} ({t.seconds:.0f}s)")
    assert ok


def test_c05_energy_lower_bounds(acceptance):
    s_values = (1 / 6, 1 / 12)
    with Timer() as t:
        real = check_energy_lower_bound(1.0, s_values, (0.25, 0.5, 1.0), (48, 96, 192))
        l2 = check_l2_energy_lower_bound(1.0, s_values, 1.0, 0.5, 8, (48, 96, 192), 0)
    ok = (real.passed and l2.passed and real.summary["stable"] and l2.summary["stable"]
          and t.seconds < 900)
    acceptance(5, "energy lower bounds", ok,
               f"c_Har={real.summary['c_har']:.4g} stable={real.summary['stable']}, "
               f"c'_Har={l2.summary['c_har_l2']:.4g} stable={l2.summary['stable']} "
               f"({t.seconds:.0f}s)")
    assert ok


def test_c06_orthogonality_and_telescoping(acceptance, level2):
    fs = _macshane(level2)
    with Timer() as t:
        orth = check_orthogonality(level2, fs, levels=(1, 2), ladder=(2, 4, 8), tol=0.05)
        tele = check_telescoping(level2, fs, levels=(1, 2), M=8, tol=0.05)
    ok = orth.passed and tele.passed and t.seconds < 1200
    acceptance(6, "orthogonality and telescoping", ok,
               f"worst finest residual {orth.summary['worst_finest']:.2e}, "
               f"chain failures {len(tele.failures())} ({t.seconds:.0f}s)")
    assert ok


def test_c07_good_paths(acceptance, level3):
    with Timer() as t:
        rep = path_checks(level3, centers=10, r=0.1, eps=0.5, seed=0)
    ok = rep.passed and t.seconds < 300
    acceptance(7, "good paths (Gd1-Gd5, length >= distance)", ok,
               f"{rep.summary['paths']} paths, {len(rep.failures())} failing checks, "
               f"Gd3 constant {rep.summary['Gd3_fitted_constant']:.3f} ({t.seconds:.0f}s)")
    assert ok


def test_c08_configuration_density(acceptance, level3):
    with Timer() as t:
        rep = density_check(level3, r=0.1, eps=0.1, points=1000, seed=0)
    ok = rep.passed and t.seconds < 120
    acceptance(8, "configuration density", ok,
               f"max witness distance {rep.summary['max_witness_over_eps_r']:.3f} eps r "
               f"(bound 5) ({t.seconds:.1f}s)")
    assert ok


def test_c09_doubling(acceptance, level3):
    with Timer() as t:
        rep = verify_doubling(level3, trials=200, seed=0, samples=4000)
        flat = verify_lebesgue_doubling(level3, seed=0)
    ok = rep.passed and flat.passed and t.seconds < 600
    acceptance(9, "doubling", ok,
               f"max ratio {rep.summary['max_ratio']:.2f}, median "
               f"{rep.summary['median_ratio']:.2f}, inconclusive "
               f"{rep.summary['inconclusive']}, level-0 within 4 stderr of 8: {flat.passed} "
               f"({t.seconds:.0f}s)")
    assert ok


def test_c10_tangent(acceptance):
    with Timer() as t:
        rep = tangent_disconnection(samples=200_000, seed=0)
    s = rep.summary
    ok = rep.passed and t.seconds < 300
    acceptance(10, "tangent disconnection (block 1)", ok,
               f"separation {s['separation_ratio']:.3f}, diameters "
               f"{s['green_diameter']:.2f}/{s['red_diameter']:.2f} ({t.seconds:.0f}s)")
    assert ok


def test_c11_collapse(acceptance):
    with Timer() as t:
        cx = Complex(collapse_schedule(2, 2, 9), 2)
        aff = LipschitzFunctionSpec("affine", coeffs=(1.0, 2.0, 3.0)).build(cx)
        fs = [aff] + _macshane(cx, count=64)
        rep = gate_collapse_sweep(cx, fs, eps=0.5, L=2)
    affine_bad = sum(r["value"] for r in rep.rows
                     if r["statistic"] == "bad_cubes" and r["params"]["function"] == 0)
    sums = [r["value"] for r in rep.rows if r["statistic"] == "partial_sum"]
    ok = rep.passed and affine_bad == 0 and all(np.isfinite(sums)) and t.seconds < 900
    acceptance(11, "collapse sweep", ok,
               f"affine bad cubes {affine_bad}, fitted constant "
               f"{rep.summary['fitted_constant']:.3g} ({t.seconds:.0f}s)")
    assert ok


def test_c12_differentiability_decay(acceptance):
    with Timer() as t:
        cx = Complex(build_schedule(2, 8, toy_mode=True), 4)
        fs = [LipschitzFunctionSpec("coordinate").build(cx),
              LipschitzFunctionSpec("distance-to-point", seed=0).build(cx),
              LipschitzFunctionSpec("distance-to-gate-set", depth=1).build(cx)]
        rep = differentiability_decay(cx, fs, samples=200, radii=(3**-1, 3**-2, 3**-3, 3**-4))
    med = {}
    for r in rep.rows:
        if r["statistic"] == "median_remainder":
            med.setdefault(r["params"]["function"], []).append(r["value"])
    ok = rep.passed and t.seconds < 1200
    acceptance(12, "differentiability decay", ok,
               "medians " + "; ".join(f"f{k}: " + ",".join(f"{v:.3g}" for v in vs)
                                      for k, vs in sorted(med.items()))
               + f" ({t.seconds:.0f}s)")
    assert ok


LIGHT = {
    "levels": 2, "trials": 10, "samples": 800, "triples": 100, "ball_samples": 200,
    "centers": 2, "density_points": 100, "ladder": "8,16", "radial_ladder": "8,16",
    "functions": 1, "macshane_count": 4, "collapse_count": 16, "cell_ladder": "2",
    "harmonic_levels": "1", "diff_levels": 2, "diff_samples": 10, "radii": "1/3,1/9",
    "tangent_n0": 10, "tangent_samples": 2000, "gate_trials": 500, "blocks": 1,
    "components": 2,
}


def test_c13_determinism(acceptance, tmp_path):
    cfg = tmp_path / "light.cfg"
    cfg.write_text("".join(f"{k} = {v}\n" for k, v in LIGHT.items()))
    runs = []
    with Timer() as t:
        for name in ("a", "b"):
            out = tmp_path / name
            code = cli.main(["run", "all", "--auto-build", "--config", str(cfg),
                             "--out", str(out), "--cache", str(tmp_path / "cache")])
            assert code in (cli.EXIT_OK, cli.EXIT_FAIL)
            runs.append(out)
    files = sorted(p.name for p in runs[0].iterdir()
                   if p.suffix in (".csv", ".json") and not p.name.endswith(".meta.json"))
    differ = [f for f in files if (runs[0] / f).read_bytes() != (runs[1] / f).read_bytes()]
    expected = {f"{n}.{s}" for n in cli.EXPERIMENTS for s in ("csv", "json")}
    ok = not differ and expected <= set(files)
    acceptance(13, "determinism of CSV/JSON reports", ok,
               f"{len(files)} files compared, {len(differ)} differ {differ} ({t.seconds:.0f}s)")
    assert ok

import math

import numpy as np
import pytest

from diamondspace.complex import GREEN, Complex, resolve_word
from diamondspace.experiments import (bad_cubes, collapse_schedule, differentiability_decay,
                                      exact_gate_fraction, gate_collapse_sweep,
                                      gate_hit_probability, gate_hitting_frequency,
                                      gate_statistics, metric_axioms, remainder,
                                      tangent_disconnection, weighted_sums)
from diamondspace.functions import LipschitzFunctionSpec
from diamondspace.schedule import build_schedule


@pytest.fixture(scope="module")
def collapse_space():
    return Complex(collapse_schedule(2, 2, 9), 2)


@pytest.fixture(scope="module")
def macshane(collapse_space):
    return LipschitzFunctionSpec("random-MacShane", seed=0, count=64).build(collapse_space)


@pytest.fixture(scope="module")
def records(collapse_space, macshane):
    return gate_statistics(collapse_space, macshane, 2)


def test_record_count_matches_doubled_cells(collapse_space, records):
    assert len(records) == sum(collapse_space.record_count(t) for t in (1, 2))
    # threshold sqrt(3) slen / (256 n) at eps = 1
    r0 = [r for r in records if r.stage == 1][0]
    assert r0.threshold == pytest.approx(math.sqrt(3) / (256 * 2))


def test_bad_cubes_shrink_as_eps_grows(records):
    counts = [len(bad_cubes(records, eps)) for eps in (1e-3, 1e-2, 0.1, 0.5, 1.0, 10.0)]
    assert counts == sorted(counts, reverse=True)
    assert counts[0] > 0


@pytest.mark.parametrize("lam", [2.0, 4.0, 0.5])
def test_statistics_scale_with_the_function(collapse_space, macshane, records, lam):
    scaled = gate_statistics(collapse_space, macshane.scaled(lam), 2)
    assert [s.statistic for s in scaled] == [lam * r.statistic for r in records]
    for eps in (0.01, 0.1, 0.5):
        a = {(r.stage, r.cell, r.prefix) for r in bad_cubes(records, eps)}
        b = {(r.stage, r.cell, r.prefix) for r in bad_cubes(scaled, lam * eps)}
        assert a == b


def test_color_blind_functions_have_no_bad_cubes(collapse_space):
    for spec in (LipschitzFunctionSpec("coordinate"),
                 LipschitzFunctionSpec("affine", coeffs=(1.0, 2.0, -1.0))):
        recs = gate_statistics(collapse_space, spec.build(collapse_space), 2)
        assert max(r.statistic for r in recs) == 0.0
        assert weighted_sums(recs, 1e-6, 2) == [0.0, 0.0]


def test_distance_to_jump_endpoint_marks_its_cube_bad(collapse_space):
    rec = collapse_space.records(1)[0]
    target = rec.jump_point(GREEN, 2, collapse_space.schedule)
    f = LipschitzFunctionSpec("distance-to-point", target=target).build(collapse_space)
    recs = gate_statistics(collapse_space, f, 2)
    first = [r for r in recs if r.stage == 1][0]
    assert first.statistic > 0
    assert first in bad_cubes(recs, 0.01)
    sums = weighted_sums(recs, 0.01, 2)
    assert all(np.isfinite(sums)) and sums[0] <= sums[1]


def test_l2_statistic_dominates_real(collapse_space):
    f = LipschitzFunctionSpec("random-MacShane", m=2, seed=5, count=64).build(collapse_space)
    real = gate_statistics(collapse_space, f, 1, "real")
    l2 = gate_statistics(collapse_space, f, 1, "l2")
    # a max of pointwise differences bounds the difference of means
    assert all(b.statistic >= a.statistic - 1e-15 for a, b in zip(real, l2))
    with pytest.raises(ValueError):
        gate_statistics(collapse_space, f, 1, "sup")


def test_collapse_sweep_report(collapse_space, macshane):
    rep = gate_collapse_sweep(collapse_space, [macshane], eps=0.5)
    assert rep.passed
    sums = [r["value"] for r in rep.rows if r["statistic"] == "partial_sum"]
    assert sums == sorted(sums)


def test_gate_fraction_closed_form():
    toy = Complex(build_schedule(2, 3, toy_mode=True), 3)
    for level in (1, 2, 3):
        assert exact_gate_fraction(toy, level) == pytest.approx(gate_hit_probability(3, level),
                                                                rel=1e-12)
    nine = Complex(build_schedule(2, 1, toy_mode=True, subdivision=9), 1)
    assert exact_gate_fraction(nine, 1) == pytest.approx(1 / 729)


def test_gate_frequency_experiment():
    rep = gate_hitting_frequency(trials=4000, blocks=2, seed=1)
    assert rep.passed
    exp = rep.summary["expected"]
    assert exp[0] == pytest.approx(1 - (26 / 27) ** 8)
    assert exp[1] == pytest.approx(1 - (26 / 27) ** 27)


def test_remainder_ignores_affine_terms():
    space = Complex(build_schedule(2, 8, toy_mode=True), 2)
    f = LipschitzFunctionSpec("distance-to-point", seed=3).build(space)
    aff = LipschitzFunctionSpec("affine", coeffs=(0.5, -1.0, 2.0), offset=(0.3,)).build(space)
    g = f.plus(aff)
    p = resolve_word(space.schedule, (0.21, 0.62, 0.13), 2)
    a = remainder(f, p, 1 / 9, 0.5).remainder
    b = remainder(g, p, 1 / 9, 0.5).remainder
    assert b == pytest.approx(a, abs=1e-6)
    assert remainder(aff, p, 1 / 9, 0.5).remainder < 1e-8


def test_decay_report_on_linear_function():
    space = Complex(build_schedule(2, 8, toy_mode=True), 2)
    f = LipschitzFunctionSpec("coordinate").build(space)
    rep = differentiability_decay(space, [f], samples=5, radii=(1 / 3, 1 / 9))
    assert rep.passed


def test_tangent_rejects_later_blocks():
    with pytest.raises(ValueError):
        tangent_disconnection(k=2)


def test_tangent_separates_colors():
    rep = tangent_disconnection(samples=20_000, seed=0)
    assert rep.summary["separation_ratio"] >= 0.95
    assert rep.summary["green_diameter"] >= 3 and rep.summary["red_diameter"] >= 3


def test_metric_axioms_small():
    space = Complex(build_schedule(2, 2, toy_mode=True), 2)
    rep = metric_axioms(space, triples=200)
    assert rep.passed
    assert rep.summary["conflicting_pairs"] > 0

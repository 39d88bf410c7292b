from fractions import Fraction

import numpy as np
import pytest

from diamondspace.complex import (GREEN, RED, Complex, LabeledPoint, PointSet,
                                  project_set, resolve_word, sample_mu)
from diamondspace.measure import ball_measure, verify_ball_shape, verify_lebesgue_doubling
from diamondspace.metric import (JUMP, boundary_route, conflict_stages, discrete_log, distance,
                                 pair_distances, sheet_count)
from diamondspace.rng import make_rng
from diamondspace.schedule import build_schedule
from oracles import ball_volume, chain_distance_oracle, discrete_log_oracle


@pytest.fixture(scope="module")
def toy2():
    return Complex(build_schedule(2, 2, toy_mode=True), 2)


def test_identical_points_have_zero_distance(toy2):
    p = resolve_word(toy2.schedule, (0.5, 0.5, 0.5), 2, choice=RED)
    r = distance(toy2, p, p)
    assert r.lower == r.upper == 0.0


def test_jump_pair_n26():
    s = build_schedule(26, 1, toy_mode=True)
    cx = Complex(s, 1)
    rec = cx.records(1)[0]
    assert rec.jump_cost == Fraction(1, 104)
    r = distance(cx, rec.jump_green, rec.jump_red)
    assert r.lower == r.upper == pytest.approx(1 / 104, abs=1e-15)
    assert r.witness_chain[-2][1] == JUMP


def test_jump_pair_toy(toy2):
    rec = toy2.records(1)[0]
    g = rec.jump_point(GREEN, 2, toy2.schedule)
    red = rec.jump_point(RED, 2, toy2.schedule)
    r = distance(toy2, g, red)
    assert r.upper == pytest.approx(1 / 8)
    assert r.chain_cost(toy2.schedule) == pytest.approx(r.upper)
    # the boundary route alone would cost the distance to the K boundary and back
    val, _ = boundary_route(np.array(g.base), np.array(red.base),
                            np.full(3, 1 / 3), np.full(3, 2 / 3))
    assert val[0] >= 1 / 3 - 1e-12


def test_level_mismatch(toy2):
    p = resolve_word(toy2.schedule, (0.5, 0.5, 0.5), 2)
    q = resolve_word(toy2.schedule, (0.5, 0.5, 0.5), 1)
    with pytest.raises(ValueError):
        distance(toy2, p, q)


def test_sheet_isometry(toy2):
    pts = sample_mu(toy2.schedule, 2, 500, make_rng(2))
    same = PointSet(pts.bases[::-1], pts.words[::-1])
    # force equal words where both colorable so no conflict can arise
    w = np.where((pts.words != 0) & (same.words != 0), pts.words, same.words)
    a = PointSet(pts.bases, np.where(pts.words != 0, w, 0))
    b = PointSet(same.bases, np.where(same.words != 0, w, 0))
    assert not conflict_stages(toy2.schedule, a, b).any()
    d = pair_distances(toy2, a, b)
    assert np.array_equal(d, np.linalg.norm(a.bases - b.bases, axis=1))


def _conflict_pairs(schedule, count, seed):
    rng = make_rng(seed)
    out = []
    while len(out) < count:
        # both bases inside the first K, opposite colors at stage 1
        a = 1 / 3 + rng.random(3) / 3
        b = 1 / 3 + rng.random(3) / 3
        p = resolve_word(schedule, tuple(a), 2, {1: GREEN, 2: int(rng.integers(1, 3))})
        q = resolve_word(schedule, tuple(b), 2, {1: RED, 2: int(rng.integers(1, 3))})
        out.append((p, q))
    return out


def test_bracketing_against_chain_oracle(toy2):
    """The closed form never exceeds a mesh-restricted chain search and
    stays within a few mesh spacings of it."""
    for p, q in _conflict_pairs(toy2.schedule, 20, seed=7):
        exact = distance(toy2, p, q)
        assert exact.lower <= exact.upper
        oracle, spacing = chain_distance_oracle(toy2.schedule, p, q, mesh=8)
        assert exact.upper <= oracle + 1e-12
        assert oracle - exact.upper <= spacing


def test_boundary_route_reflection():
    # on the z axis through the center the z faces cost dp + dq = 1/3, the
    # side faces sqrt(1/3^2 + 0.1^2)
    p = np.array([0.5, 0.5, 0.45])
    q = np.array([0.5, 0.5, 0.55])
    val, z = boundary_route(p, q, np.full(3, 1 / 3), np.full(3, 2 / 3))
    assert val[0] == pytest.approx(1 / 3, rel=1e-12)
    assert z[0, 2] in (pytest.approx(1 / 3), pytest.approx(2 / 3))
    # off-axis pair against a brute-force scan of the faces
    p = np.array([0.4, 0.55, 0.6])
    q = np.array([0.6, 0.4, 0.5])
    val, _ = boundary_route(p, q, np.full(3, 1 / 3), np.full(3, 2 / 3))
    g = np.linspace(1 / 3, 2 / 3, 301)
    a, b = np.meshgrid(g, g, indexing="ij")
    best = np.inf
    for axis in range(3):
        for plane in (1 / 3, 2 / 3):
            z = np.empty(a.shape + (3,))
            others = [i for i in range(3) if i != axis]
            z[..., axis] = plane
            z[..., others[0]] = a
            z[..., others[1]] = b
            cost = np.linalg.norm(z - p, axis=-1) + np.linalg.norm(z - q, axis=-1)
            best = min(best, cost.min())
    assert val[0] <= best + 1e-12
    assert best - val[0] < 1e-4


@pytest.mark.parametrize("r,expected", [(0.2, 1), (1 / 3, 0), (1 / 9, 1), (0.11, 2), (0.5, 0)])
def test_discrete_log(r, expected):
    s = build_schedule(2, 4, toy_mode=True)
    assert discrete_log(r, s) == expected
    slens = [Fraction(1, 3**j) for j in range(5)]
    exact = Fraction(r).limit_denominator(1000)
    assert discrete_log_oracle(exact, slens) == expected


def test_discrete_log_range():
    s = build_schedule(2, 2, toy_mode=True)
    with pytest.raises(ValueError):
        discrete_log(0.6, s)
    with pytest.raises(ValueError):
        discrete_log(1e-4, s)


def test_level_zero_ball_volume():
    cx = Complex(build_schedule(2, 1), 0)
    est = ball_measure(cx, LabeledPoint((0.5, 0.5, 0.5), ()), 0.25, 40_000, seed=3)
    assert abs(est.value - ball_volume(0.25)) <= 3 * est.stderr
    assert 0 <= est.value <= 1


def test_whole_space_ball(toy2):
    p = resolve_word(toy2.schedule, (0.5, 0.5, 0.5), 2)
    est = ball_measure(toy2, p, 3.0, 2000, seed=1)
    assert est.value == pytest.approx(1.0)
    assert ball_measure(toy2, p, 0.0, 10, seed=1).value == 0.0
    with pytest.raises(ValueError):
        ball_measure(toy2, p, 0.1, 0, seed=1)


def test_level_zero_doubling_ratio_is_eight():
    cx = Complex(build_schedule(2, 1), 0)
    rep = verify_lebesgue_doubling(cx, trials=5, samples=20000)
    assert rep.passed and not rep.failures()


def test_ball_shape(toy2):
    p = sample_mu(toy2.schedule, 2, 1, make_rng(4))[0]
    rep = verify_ball_shape(toy2, p, 1, 0.2, samples=1000)
    assert rep.summary["violations"] == 0
    same = verify_ball_shape(toy2, p, 2, 0.2, samples=500)
    assert same.summary["equal_when_same_level"]


def test_projection_never_increases_distance(toy2):
    rng = make_rng(9)
    a = sample_mu(toy2.schedule, 2, 1000, rng)
    b = sample_mu(toy2.schedule, 2, 1000, rng)
    d2 = pair_distances(toy2, a, b)
    for l in (1, 0):
        dl = pair_distances(toy2, project_set(a, l), project_set(b, l))
        assert np.all(dl <= d2 + 1e-12)


def test_sheet_count_grows_with_radius(toy2):
    p = resolve_word(toy2.schedule, (0.5, 0.5, 0.5), 2)
    counts = [sheet_count(toy2, p, r) for r in (0.01, 0.1, 0.2, 0.5)]
    assert counts == sorted(counts)
    assert counts[-1] == 4

import math

import gmpy2
import numpy as np
import pytest

import oracles
from nonhyp.dynsys import (Cycle, FiberMapFamily, Point, Word, circle_dist, metric_dist,
                           min_pairwise_distance, model_a, orbit_at, periodic_orbit_from_word,
                           run_word, solve_periodic, step, trajectory)

ALPHA = (math.sqrt(5.0) - 1.0) / 2.0


@pytest.fixture(scope="module")
def sys_a():
    return model_a()


def test_word_rejects_empty_and_out_of_range():
    with pytest.raises(ValueError):
        Word(())
    with pytest.raises(ValueError):
        Word((0, 3))


def test_word_power_flag():
    assert Word.parse("0101").is_power
    assert Word.parse("0101").root() == Word.parse("01")
    assert Word.parse("011").primitive


def test_point_fiber_reduced():
    assert Point((), (0,), 1.25).fiber == 0.25
    with pytest.raises(ValueError):
        Point((), (), 0.1)


def test_point_keeps_mpfr_precision():
    y = gmpy2.mpfr("0.1234567890123456789012345678901234567", 200)
    p = Point((), (0,), y)
    assert p.fiber.precision == 200
    assert p.fiber == y


def test_model_a_derivatives_at_zero(sys_a):
    fam = sys_a.family
    assert fam.dg(0, 0.0) == pytest.approx(0.5)
    assert fam.dg(1, 0.0) == pytest.approx(1.5)
    assert fam.dg(2, 0.3) == 1.0


def test_family_rejects_non_diffeomorphism():
    with pytest.raises(ValueError):
        FiberMapFamily(beta=1.5)


def test_step_rotation(sys_a):
    # oracle: (0.25 + alpha) mod 1
    q = step(sys_a, Point((), (2,), 0.25))
    assert q.fiber == pytest.approx(0.8680339887498949, abs=1e-15)
    assert q.cycle == (2,)


@pytest.mark.parametrize("y", [0.0, 0.5])
def test_step_fixed_points_of_g0(sys_a, y):
    assert step(sys_a, Point((), (0,), y)).fiber == pytest.approx(y, abs=1e-15)


def test_step_shifts_prefix(sys_a):
    q = step(sys_a, Point((1, 2), (0,), 0.0))
    assert q.prefix == (2,) and q.cycle == (0,)


def test_metric_examples():
    p = Point((), (0, 1), 0.3)
    q = Point((), (1, 0), 0.3)
    assert metric_dist(p, p) == 0
    assert metric_dist(p, q) == 1.0
    a, b = Point((), (0,), 0.1), Point((), (0,), 0.95)
    assert metric_dist(a, b) == pytest.approx(0.15)


def test_metric_truncation_depth():
    p = Point((0,) * 70, (1,), 0.2)
    q = Point((0,) * 70, (2,), 0.2)
    assert metric_dist(p, q) == 0.0
    assert metric_dist(p, q, depth=80) == 2.0 ** -70


def test_circle_dist_mpfr_and_float_agree():
    a, b = 0.95, 0.1
    assert float(circle_dist(gmpy2.mpfr(a), gmpy2.mpfr(b))) == pytest.approx(circle_dist(a, b))


@pytest.mark.parametrize("word, expected", [
    ("0", [0.0, 0.5]),
    # oracle: mpmath sign scan on 10^4 grid + bisection
    ("01", [0.0, 0.28862287498724476, 0.5, 0.7113771250127553]),
    ("0001", [0.0, 0.5]),
    ("02", []),
    ("012", []),
])
def test_periodic_orbit_fibers(sys_a, word, expected):
    got = [float(o.fiber0) for o in periodic_orbit_from_word(sys_a, word)]
    assert got == pytest.approx(expected, abs=1e-10)


def test_periodic_orbit_invariants(sys_a):
    for o in periodic_orbit_from_word(sys_a, "0011"):
        assert len(o.points) == o.period == 4
        assert o.residual < 1e-12
        p = o.points[0]
        for _ in range(o.period):
            p = step(sys_a, p)
        assert p.base(8) == o.points[0].base(8)
        assert float(circle_dist(p.fiber, o.points[0].fiber)) < 1e-10


def test_chi_matches_oracle(sys_a):
    for o in periodic_orbit_from_word(sys_a, "01"):
        assert o.chi == pytest.approx(oracles.center_exponent([0, 1], float(o.fiber0)), abs=1e-12)


def test_min_pairwise_distance_examples(sys_a):
    assert min_pairwise_distance(orbit_at(sys_a, Word.parse("01"), 0.0)) == 1.0
    assert min_pairwise_distance(orbit_at(sys_a, Word.parse("0"), 0.0)) == 1.0
    # rotations 0011 and 0110 first differ at index 1, so the minimum is 1/2
    o = orbit_at(sys_a, Word.parse("0011"), 0.0)
    brute = min(oracles.metric(lambda t, i=i: o.word[(i + t) % 4], 0.0,
                               lambda t, j=j: o.word[(j + t) % 4], 0.0)
                for i in range(4) for j in range(i + 1, 4))
    assert brute == 0.5
    assert min_pairwise_distance(o) == brute


def test_min_pairwise_distance_brute_force(sys_a):
    o = periodic_orbit_from_word(sys_a, "0001011")[0]
    pts = o.points
    brute = min(metric_dist(p, q) for i, p in enumerate(pts) for q in pts[i + 1:])
    assert float(min_pairwise_distance(o)) == pytest.approx(float(brute), rel=1e-12)


def test_trajectory(sys_a):
    p = Point((), (2,), 0.0)
    fibers = [float(q.fiber) for q in trajectory(sys_a, p, 3)]
    assert fibers == pytest.approx([0.0, ALPHA, (2 * ALPHA) % 1.0], abs=1e-15)
    o = periodic_orbit_from_word(sys_a, "01")[1]
    tr = trajectory(sys_a, o.points[0], 4)
    assert float(circle_dist(tr[2].fiber, tr[0].fiber)) < 1e-10
    with pytest.raises(ValueError):
        trajectory(sys_a, p, 0)


def test_run_word_matches_oracle(sys_a):
    w = [0, 1, 2, 1, 0, 0, 2]
    run = run_word(sys_a, w, gmpy2.mpfr("0.3", 200), 200, want_derivs=True)
    ref = float(oracles.lift_word(w, oracles.mp.mpf("0.3")) % 1)
    assert float(run.end) == pytest.approx(ref, abs=1e-14)


def test_solve_periodic_polishes_long_word(sys_a):
    w = Word.parse("0" * 30 + "1" * 5 + "2")
    o = solve_periodic(sys_a, w, 0.0, 256)
    assert o.residual < 1e-60
    assert o.chi < 0


def test_derivative_matches_finite_difference(sys_a):
    fam = sys_a.family
    ys = np.linspace(0, 1, 1000, endpoint=False)
    h = 1e-7
    for s in range(3):
        fd = [(fam.lift(s, y + h) - fam.lift(s, y - h)) / (2 * h) for y in ys]
        exact = [fam.dg(s, y) for y in ys]
        assert np.max(np.abs(np.array(fd) - np.array(exact, dtype=float))) < 1e-6


def test_newton_polish_repelling_point():
    # g_1 has a repelling fixed point at 0 (derivative 1 + beta)
    o = solve_periodic(model_a(), Word.parse("1"), 0.01, 128)
    assert float(o.fiber0) < 1e-30 or float(o.fiber0) > 1 - 1e-30
    assert o.chi == pytest.approx(math.log(1.5), abs=1e-12)


def test_orbit_points_share_the_word():
    o = periodic_orbit_from_word(model_a(), "0011")[1]
    p = o.points[1]
    assert isinstance(p.cycle, Cycle) and p.cycle == (0, 1, 1, 0)
    assert p == Point((), (0, 1, 1, 0), p.fiber) and hash(p) == hash(Point((), (0, 1, 1, 0), p.fiber))

"""Property tests for the invariants listed per module."""
import math
from fractions import Fraction

import gmpy2
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from nonhyp.analysis import GridPartition, occupied_cells, topological_limit_estimate
from nonhyp.approximation import best_certificate, verify_certificate
from nonhyp.dynsys import (Point, Word, metric_dist, model_a, orbit_at,
                           periodic_orbit_from_word, run_word, solve_periodic, step)
from nonhyp.measures import (AtomicMeasure, TestFamily, TestFunction, center_exponent_orbit,
                             discrepancy, integrate, orbit_measure)

SYS = model_a()
BETA = SYS.family.beta
FAST = settings(max_examples=60, deadline=None,
                suppress_health_check=[HealthCheck.too_slow])

cycles = st.lists(st.integers(0, 2), min_size=1, max_size=4).map(tuple)
prefixes = st.lists(st.integers(0, 2), max_size=3).map(tuple)
fibers = st.floats(0.0, 1.0, exclude_max=True)
points = st.builds(Point, prefixes, cycles, fibers)
binary_words = st.lists(st.integers(0, 1), min_size=1, max_size=40)


@FAST
@given(points, points, points)
def test_metric_axioms(p, q, r):
    assert metric_dist(p, p) == 0
    assert metric_dist(p, q) == metric_dist(q, p)
    assert 0 <= metric_dist(p, q) <= 1
    assert metric_dist(p, r) <= metric_dist(p, q) + metric_dist(q, r) + 1e-15


@FAST
@given(binary_words)
def test_exponent_closed_form(w):
    o = orbit_at(SYS, Word(tuple(w)), 0.0)
    c1 = sum(w)
    c0 = len(w) - c1
    ref = (c0 * math.log(1 - BETA) + c1 * math.log(1 + BETA)) / len(w)
    assert center_exponent_orbit(SYS, o) == pytest.approx(ref, abs=1e-12)


@FAST
@given(st.lists(st.integers(0, 2), min_size=1, max_size=6), st.integers(2, 5), st.data())
def test_exponent_of_power(w, m, data):
    sols = periodic_orbit_from_word(SYS, "".join(map(str, w)))
    assume(sols)
    seed = data.draw(st.sampled_from(sols))
    # polish at 256 bits: repelling points drift in double precision over m periods
    one = solve_periodic(SYS, Word(tuple(w)), seed.fiber0, 256)
    many = solve_periodic(SYS, Word(tuple(w) * m), one.fiber0, 256)
    assert many.log_multiplier == pytest.approx(m * one.log_multiplier, abs=1e-9)
    assert center_exponent_orbit(SYS, many) == pytest.approx(center_exponent_orbit(SYS, one),
                                                             abs=1e-12)


@FAST
@given(st.lists(st.integers(0, 1), min_size=1, max_size=12), st.integers(0, 2),
       st.lists(st.integers(0, 2), max_size=2), st.sampled_from(["cos", "sin"]))
def test_push_forward_invariance(w, k, cyl, kind):
    # fiber 0 is fixed by both contracting and expanding maps, so the orbit is exact
    o = orbit_at(SYS, Word(tuple(w)), 0.0)
    mu = orbit_measure(o)
    phi = TestFunction(tuple(cyl), k, kind)
    pushed = integrate(mu, lambda p: phi(step(SYS, p)))
    assert pushed == pytest.approx(integrate(mu, phi), abs=1e-12)


@FAST
@given(st.lists(points, min_size=1, max_size=5), st.lists(points, min_size=1, max_size=5))
def test_discrepancy_symmetric_and_bounded(xs, ys):
    mu, nu = AtomicMeasure.from_points(xs), AtomicMeasure.from_points(ys)
    fam = TestFamily(2, 2)
    d = discrepancy(mu, nu, fam)
    assert d == discrepancy(nu, mu, fam)
    assert 0 <= d <= 2
    assert discrepancy(mu, mu, fam) == 0


_WORDS = st.lists(st.integers(0, 2), min_size=1, max_size=3)


@st.composite
def orbit_pair(draw):
    xw = draw(_WORDS)
    m = draw(st.integers(1, 3))
    tail = draw(st.lists(st.integers(0, 2), max_size=4))
    yw = xw * m + tail
    y0x, y0y = draw(fibers), draw(fibers)
    return orbit_at(SYS, Word(tuple(xw)), y0x), orbit_at(SYS, Word(tuple(yw)), y0y)


@FAST
@given(orbit_pair(), st.floats(1e-3, 1.2), st.floats(1e-3, 1.2))
def test_kappa_monotone_in_gamma(pair, g1, g2):
    X, Y = pair
    lo, hi = sorted((g1, g2))
    assert best_certificate(SYS, X, Y, lo).kappa_exact <= best_certificate(SYS, X, Y, hi).kappa_exact


@FAST
@given(orbit_pair(), st.floats(1e-3, 1.2))
def test_best_certificate_is_sound(pair, gamma):
    X, Y = pair
    c = best_certificate(SYS, X, Y, gamma)
    ok, worst = verify_certificate(SYS, X, Y, c)
    assert ok
    assert c.kappa_exact == Fraction(len(c.windows) * X.period, Y.period)
    assert c.empty or worst < gamma


@FAST
@given(st.lists(st.integers(0, 2), min_size=1, max_size=10), fibers)
def test_derivative_matches_difference_quotient(w, y0):
    prec = 200
    with gmpy2.context(precision=prec):
        y = gmpy2.mpfr(y0)
        h = gmpy2.mpfr(2) ** -80
        run = run_word(SYS, w, y, prec, want_derivs=True)
        up = run_word(SYS, w, y + h, prec).end
        dn = run_word(SYS, w, y - h, prec).end
        diff = up - dn
        diff = diff - gmpy2.rint(diff)  # undo a wrap of the reduction mod 1
        quotient = diff / (2 * h)
    assume(float(run.dprod) > 1e-6)
    assert float(quotient / run.dprod) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.lists(st.integers(0, 1), min_size=1, max_size=6), min_size=2, max_size=4),
       st.integers(1, 2), st.integers(1, 4))
def test_estimate_nesting(words, L, G):
    stages = [orbit_at(SYS, Word(tuple(w)), 0.0) for w in words]
    grid = GridPartition(L, G)
    ests = [topological_limit_estimate(stages, grid, k).cells for k in range(1, len(stages) + 1)]
    for a, b in zip(ests, ests[1:]):
        assert a <= b
    assert ests[-1] == occupied_cells(stages[-1], grid)

import math
from fractions import Fraction

import pytest

from nonhyp.analysis import BallCounter
from nonhyp.approximation import gamma_bound, verify_certificate
from nonhyp.builder import (CorrectionLibrary, NoProgress, PeriodCapExceeded, PreconditionError,
                            SearchExhausted, StageParameters, default_C, density_tour,
                            plan_concatenation, rotation_sweep, run_construction, seed_orbit,
                            tour_depth, tour_hits)
from nonhyp.dynsys import Word, circle_dist, model_a, orbit_at
from nonhyp.measures import center_exponent_orbit


@pytest.fixture(scope="module")
def sys_a():
    return model_a()


@pytest.fixture(scope="module")
def run3(sys_a):
    return run_construction(sys_a, seed_orbit(sys_a, "0"), StageParameters(), 3)


def test_default_C():
    assert default_C(math.log(2)) == 47
    assert default_C(0.5) == 65  # 32/0.5 = 64 exactly, so strictly above
    assert StageParameters().resolved_C(math.log(2)) == 47
    with pytest.raises(ValueError):
        StageParameters(C=40).resolved_C(math.log(2))


def test_parameter_validation():
    with pytest.raises(ValueError):
        StageParameters(xi=1.0)
    with pytest.raises(ValueError):
        StageParameters(kappa_floor=0)
    assert StageParameters().epsilon(3) == 0.125


def test_plan_examples(sys_a):
    plan, w = plan_concatenation(Word.parse("01"), "12", 3)
    assert str(w) == "01010112" and plan.period == 8
    plan, w = plan_concatenation(Word.parse("0"), "1", 5)
    assert str(w) == "000001" and plan.period == 6
    with pytest.raises(NoProgress):
        plan_concatenation(Word.parse("01"), "", 1)
    with pytest.raises(PeriodCapExceeded):
        plan_concatenation(Word.parse("01"), "12", 3, period_cap=7)
    with pytest.raises(ValueError):
        plan_concatenation(Word.parse("01"), "12", 0)


def test_density_tour_examples(sys_a):
    assert density_tour(sys_a, 1.0) is None
    assert rotation_sweep(sys_a.family.alpha, 0.5) == 2
    t = density_tour(sys_a, 0.25)
    syms = t.symbols
    seen = {syms[i:i + 2] for i in range(len(syms) - 1)}
    assert len(seen) == 9
    with pytest.raises(ValueError):
        density_tour(sys_a, 0)


def test_tour_depth():
    assert [tour_depth(e) for e in (1, 0.5, 0.25, 0.2, 2 ** -8)] == [0, 1, 2, 3, 8]


def test_tour_hits_detects_missing_cylinder(sys_a):
    w = Word.parse("0011")
    assert not tour_hits(w, 0.25, [0.0] * 4)


def test_library_closed_form(sys_a):
    lib = CorrectionLibrary(sys_a)
    b = sys_a.family.beta
    for e in (lib.expansion(4), lib.homing(3)):
        o = orbit_at(sys_a, e.word, 0.0)
        assert e.log_multiplier_at_zero == pytest.approx(o.period * center_exponent_orbit(sys_a, o),
                                                         abs=1e-12)
    assert lib.rotation(5).log_multiplier_at_zero == 0.0
    assert lib.closed_form(Word.parse("0110")) == pytest.approx(2 * math.log(1 - b) + 2 * math.log(1 + b))
    assert lib.closed_form(Word.parse("012")) is None


def test_seed_orbit(sys_a):
    s = seed_orbit(sys_a, "0")
    assert s.chi == pytest.approx(math.log(0.5)) and float(s.fiber0) == 0.0


def test_positive_seed_rejected(sys_a):
    seed = seed_orbit(sys_a, "0")
    expanding = orbit_at(sys_a, Word.parse("1"), 0.0)
    assert expanding.chi > 0
    with pytest.raises(PreconditionError):
        run_construction(sys_a, expanding, StageParameters(), 2)
    with pytest.raises(ValueError):
        run_construction(sys_a, seed, StageParameters(), 0)


def test_single_stage(sys_a):
    res = run_construction(sys_a, seed_orbit(sys_a, "0"), StageParameters(), 1)
    assert len(res.stages) == 1 and res.complete
    assert res.report.all_ok
    assert res.stages[0].kappa is None


def test_exhausted_keeps_partial(sys_a):
    with pytest.raises(SearchExhausted) as exc:
        run_construction(sys_a, seed_orbit(sys_a, "0"), StageParameters(period_cap=20), 3)
    part = exc.value.partial
    assert part is not None and not part.complete and len(part.stages) == 1


def test_run_exponent_schedule(run3):
    st = run3.stages
    for a, b in zip(st, st[1:]):
        assert b.chi < 0 and abs(b.chi) < 0.5 * abs(a.chi)
        assert b.period > a.period


def test_run_records_recomputable(sys_a, run3):
    for r in run3.stages:
        assert center_exponent_orbit(sys_a, r.orbit) == pytest.approx(r.chi, abs=1e-12)
        if r.plan is not None:
            assert r.plan.period == r.period


def test_run_certificates(sys_a, run3):
    st = run3.stages
    C = run3.C
    for prev, cur in zip(st, st[1:]):
        ok, worst = verify_certificate(sys_a, prev.orbit, cur.orbit, cur.certificate)
        assert ok and worst < prev.gamma
        assert prev.kappa_exact == cur.certificate.kappa_exact
        assert prev.kappa_exact >= Fraction(1, 2)
        assert prev.kappa_exact >= 1 - C * Fraction(abs(prev.chi))
    for i, r in enumerate(st, start=1):
        assert r.gamma < gamma_bound([s.d for s in st], i)


def test_run_shadows_parent_points(sys_a, run3):
    st = run3.stages
    for prev, cur in zip(st, st[1:]):
        counter = BallCounter(cur.orbit)
        for x in prev.orbit.points:
            assert counter.mass(x, prev.gamma) >= prev.kappa_exact / prev.period


def test_run_multiplier_bound(run3):
    for r in run3.stages:
        assert abs(r.log_multiplier) <= StageParameters().log_theta


def test_run_density(sys_a, run3):
    for r in run3.stages[1:]:
        assert tour_hits(r.orbit.word, r.epsilon, r.orbit.fibers)


def test_fiber_points_are_periodic(sys_a, run3):
    from nonhyp.dynsys import run_word
    for r in run3.stages:
        o = r.orbit
        run = run_word(sys_a, o.word.symbols, o.fiber0, o.prec)
        assert float(circle_dist(run.end, o.fiber0)) < 1e-12

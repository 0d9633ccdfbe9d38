"""Stage-by-stage construction of periodic orbits with shrinking exponents.

Each stage X_{n+1} repeats the parent word m times and appends a correction
block. Corrections are assembled from a small library of blocks:

* the seed stage uses "dives": runs of 0s pull the fiber towards the
  attracting point 0 of g_0, a run of 1s partly undoes this and a rotation
  symbol throws the fiber far from 0;
* later stages use: an extension of the parent word (so that the shadowing
  window is followed by enough matching symbols), a density tour, a greedy
  expanding block that gives back the contraction spent so far, rotation
  padding and a homing run of 0s that returns the fiber close to 0.

Candidates are screened with a cheap prediction of their exponent and
constants, sorted by period and then lexicographically, and the first one that
passes the exact checks is accepted.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Sequence

import gmpy2
import numpy as np
from gmpy2 import mpfr

from .approximation import (ApproximationCertificate, SequenceHypothesisReport,
                            best_certificate, check_sequence_conditions, gamma_bound,
                            verify_certificate)
from .dynsys import (PeriodicOrbit, SkewProductSystem, Word, circle_dist,
                     min_pairwise_distance, periodic_orbit_from_word, run_word,
                     solve_periodic)
from .measures import AtomicMeasure, TestFamily, discrepancy, orbit_measure

LN2 = math.log(2.0)


class PeriodCapExceeded(Exception):
    pass


class NoProgress(Exception):
    pass


class SearchExhausted(Exception):
    """No plan passed the checks; `partial` holds the stages built so far."""

    def __init__(self, msg: str, partial: "ConstructionResult | None" = None):
        super().__init__(msg)
        self.partial = partial


class PreconditionError(ValueError):
    pass


def default_C(nu: float) -> int:
    """Smallest integer strictly above 32/nu."""
    c = math.ceil(32.0 / nu)
    return c + 1 if c == 32.0 / nu else c


@dataclass(frozen=True)
class StageParameters:
    C: float | None = None
    xi: float = 0.5
    epsilon_base: float = 0.5
    kappa_floor: float = 0.5
    gamma_budget: float = 1.0
    product_floor: float = 1e-3
    test_L: int = 4
    test_K: int = 4
    period_cap: int = 200_000
    log_theta: float = 2000.0
    # builder choices beyond the contract
    gamma_fraction: float = 0.9
    ratio_floor: float = 0.47
    sensitivity_margin: float = 8.0
    max_exact: int = 40

    def __post_init__(self):
        if not 0 < self.xi < 1:
            raise ValueError("xi must lie in (0, 1)")
        if not 0 < self.epsilon_base < 1:
            raise ValueError("epsilon_base must lie in (0, 1)")
        if not 0 < self.kappa_floor <= 1:
            raise ValueError("kappa_floor must lie in (0, 1]")
        if not 0 < self.gamma_fraction < 1:
            raise ValueError("gamma_fraction must lie in (0, 1)")
        if self.period_cap < 2:
            raise ValueError("period_cap must be at least 2")

    def epsilon(self, n: int) -> float:
        return self.epsilon_base ** n

    def resolved_C(self, nu: float) -> float:
        C = default_C(nu) if self.C is None else self.C
        if not C > 32.0 / nu:
            raise ValueError(f"C = {C} must exceed 32/nu = {32.0 / nu:.6g}")
        return C

    @property
    def test_family(self) -> TestFamily:
        return TestFamily(self.test_L, self.test_K)


@dataclass(frozen=True)
class ConcatenationPlan:
    m: int
    correction: Word | None
    parent_period: int

    @property
    def period(self) -> int:
        return self.m * self.parent_period + (len(self.correction) if self.correction else 0)

    def word(self, parent: Word) -> Word:
        extra = self.correction.symbols if self.correction else ()
        return Word(parent.symbols * self.m + extra, parent.alphabet)


def plan_concatenation(X: PeriodicOrbit | Word, correction: Word | str | Sequence[int] | None,
                       m: int, period_cap: int | None = None):
    """(plan, candidate word) for X^m followed by the correction block."""
    parent = X.word if isinstance(X, PeriodicOrbit) else X
    if m < 1:
        raise ValueError("m must be at least 1")
    if isinstance(correction, str):
        correction = Word.parse(correction, parent.alphabet) if correction else None
    elif correction is not None and not isinstance(correction, Word):
        correction = Word(tuple(correction), parent.alphabet) if len(correction) else None
    if m == 1 and correction is None:
        raise NoProgress("one copy of the parent with no correction repeats the parent")
    plan = ConcatenationPlan(m, correction, len(parent))
    if period_cap is not None and plan.period > period_cap:
        raise PeriodCapExceeded(f"period {plan.period} exceeds cap {period_cap}")
    return plan, plan.word(parent)


# ---------------------------------------------------------------- blocks

def de_bruijn(k: int, n: int) -> list[int]:
    a = [0] * (k * n)
    seq: list[int] = []

    def db(t, p):
        if t > n:
            if n % p == 0:
                seq.extend(a[1:p + 1])
        else:
            a[t] = a[t - p]
            db(t + 1, p)
            for j in range(a[t - p] + 1, k):
                a[t] = j
                db(t + 1, t)

    db(1, 1)
    return seq


def rotation_sweep(alpha: float, epsilon: float) -> int:
    """Fewest rotation steps s with all gaps of {0, alpha, ..., s*alpha} below epsilon."""
    if epsilon >= 1:
        return 0
    pts = [0.0]
    s = 0
    while True:
        s += 1
        pts.append((s * alpha) % 1.0)
        q = sorted(pts)
        gaps = [b - a for a, b in zip(q, q[1:])] + [1.0 - q[-1] + q[0]]
        if max(gaps) < epsilon:
            return s


def tour_depth(epsilon: float) -> int:
    return max(0, math.ceil(math.log2(1.0 / epsilon) - 1e-12))


def density_tour(system: SkewProductSystem, epsilon: float,
                 anchor: PeriodicOrbit | None = None) -> Word | None:
    """Block visiting every cylinder of depth ceil(log2 1/eps), then a rotation sweep.

    The cylinder part is a cyclic de Bruijn sequence unrolled so that every
    word of the required depth appears; the sweep applies the rotation until
    its orbit has all circle gaps below epsilon. Returns None for the empty
    tour (epsilon >= 1). `anchor` is accepted for interface symmetry; the block
    does not depend on it.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if epsilon >= 1:
        return None
    D = tour_depth(epsilon)
    A = system.alphabet
    cyl: list[int] = []
    if D >= 1:
        db = de_bruijn(A, D)
        cyl = db + db[: D - 1]
    sweep = [A - 1] * rotation_sweep(system.family.alpha, epsilon)
    syms = cyl + sweep
    return Word(tuple(syms), A) if syms else None


def tour_hits(word: Word, epsilon: float, fibers: Sequence, alphabet: int = 3) -> bool:
    """Every depth-D cylinder occurs in the cyclic word and the fibers are epsilon-dense."""
    D = tour_depth(epsilon)
    syms = word.symbols
    n = len(syms)
    if D:
        seen = {tuple(syms[(i + t) % n] for t in range(D)) for i in range(n)}
        if len(seen) < alphabet ** D:
            return False
    ys = sorted(float(y) for y in fibers)
    gaps = [b - a for a, b in zip(ys, ys[1:])] + [1.0 - ys[-1] + ys[0]]
    return max(gaps) < epsilon


_PATHS3 = list(itertools.product(range(3), repeat=3))


def _lookahead_symbol(fam, y: float, paths=_PATHS3) -> int:
    best_score, best = -math.inf, 0
    for path in paths:
        z, sc = y, 0.0
        for s in path:
            sc += math.log(fam.dg(s, z))
            z = fam.g(s, z)
        if sc > best_score + 1e-15:
            best_score, best = sc, path[0]
    return best


def greedy_expansion(system: SkewProductSystem, y0, length: int, prec: int):
    """Block that keeps the fiber expanding, about 0.3 in log per symbol.

    Each symbol starts the three-symbol path with the largest log derivative
    from the current fiber (decided in floats, applied exactly). Returns
    (symbols, fibers after each symbol, ln g' per symbol).
    """
    fam = system.family
    syms, fibs, logs = [], [], []
    with gmpy2.context(precision=prec):
        y = mpfr(y0)
        for _ in range(length):
            s = _lookahead_symbol(fam, float(y))
            logs.append(math.log(float(fam.dg(s, y))))
            y = fam.g(s, y)
            syms.append(s)
            fibs.append(y)
    return syms, fibs, np.array(logs)


@dataclass(frozen=True)
class LibraryEntry:
    name: str
    word: Word
    log_multiplier_at_zero: float | None


class CorrectionLibrary:
    """Catalogue of correction blocks and their exponent effect.

    Rotation blocks "2...2" are isometries (exponent 0). Blocks over {0, 1}
    evaluated at the common fixed point 0 have the closed-form log multiplier
    c_0 ln(1 - beta) + c_1 ln(1 + beta).
    """

    def __init__(self, system: SkewProductSystem):
        self.system = system

    def closed_form(self, word: Word) -> float | None:
        if 2 in word.symbols:
            if set(word.symbols) == {2}:
                return 0.0
            return None
        b = self.system.family.beta
        c0 = word.symbols.count(0)
        return c0 * math.log(1 - b) + (len(word) - c0) * math.log(1 + b)

    def rotation(self, n: int) -> LibraryEntry:
        w = Word((2,) * n)
        return LibraryEntry(f"rot{n}", w, 0.0)

    def expansion(self, n: int) -> LibraryEntry:
        w = Word((1,) * n)
        return LibraryEntry(f"exp{n}", w, self.closed_form(w))

    def homing(self, n: int) -> LibraryEntry:
        w = Word((0,) * n)
        return LibraryEntry(f"home{n}", w, self.closed_form(w))

    def dive(self, a: int, b: int) -> LibraryEntry:
        w = Word((1,) * b + (2,) + (0,) * a)
        return LibraryEntry(f"dive{a}.{b}", w, None)

    def tour(self, epsilon: float) -> LibraryEntry | None:
        w = density_tour(self.system, epsilon)
        return None if w is None else LibraryEntry(f"tour{epsilon:g}", w, None)


# ---------------------------------------------------------------- records

@dataclass
class StageRecord:
    """One stage X_n of the construction.

    gamma is gamma_n (the closeness used when X_{n+1} shadows X_n) and kappa
    is kappa_n, the coverage of X_n by X_{n+1}; kappa stays None until the next
    stage exists. `certificate` links X_{n-1} to X_n.
    """

    n: int
    orbit: PeriodicOrbit
    plan: ConcatenationPlan | None
    chi: float
    d: float
    gamma: float
    epsilon: float
    certificate: ApproximationCertificate | None
    discrepancy_prev: float | None
    log_multiplier: float
    multiplier: str
    sensitivity: float
    kappa: float | None = None
    kappa_exact: Fraction | None = None
    seconds: float = 0.0

    @property
    def period(self) -> int:
        return self.orbit.period


@dataclass
class ConstructionResult:
    stages: list[StageRecord]
    report: SequenceHypothesisReport | None
    final_measure: AtomicMeasure | None
    discrepancies: list[float]
    C: float
    complete: bool = True
    failure: str | None = None


# ---------------------------------------------------------------- helpers

def orbit_logs(system: SkewProductSystem, orbit: PeriodicOrbit) -> tuple[np.ndarray, list]:
    """ln g' per orbit point (float) and the exact derivative values."""
    run = run_word(system, orbit.word.symbols, orbit.fiber0, max(orbit.prec, 64),
                   want_derivs=True)
    return np.array([math.log(float(d)) for d in run.derivs]), run.derivs


def start_sensitivity(orbit: PeriodicOrbit, logs: np.ndarray) -> float:
    """max_t y_0 * prod_{i<t} g'(y_i): response to a relative change of the start fiber."""
    y0 = abs(signed_fiber(orbit.fiber0))
    if y0 == 0.0:
        return 0.0
    cum = np.concatenate([[0.0], np.cumsum(logs)])
    return float(math.exp(math.log(y0) + cum.max()))


def signed_fiber(y) -> float:
    """Fiber as a float in [-1/2, 1/2), exact near 0 on both sides."""
    if isinstance(y, float):
        return y - 1.0 if y >= 0.5 else y
    return float(y - 1 if y >= 0.5 else y)


def _wrap(y):
    """Signed representative in [-1/2, 1/2); values in range are left untouched."""
    if isinstance(y, np.ndarray):
        y = np.where(y >= 0.5, y - 1.0, y)
        return np.where(y < -0.5, y + 1.0, y)
    return y - 1.0 if y >= 0.5 else (y + 1.0 if y < -0.5 else y)


def max_drawup(logs: np.ndarray) -> float:
    """Largest total of ln g' over a cyclic segment (expansion to be resolved)."""
    x = np.concatenate([logs, logs])
    cum = np.concatenate([[0.0], np.cumsum(x)])
    run_min = np.minimum.accumulate(cum)
    return float(np.max(cum - run_min))


def precision_for(logs: np.ndarray, log_inv_gamma: float) -> int:
    bits = (max_drawup(logs) + max(log_inv_gamma, 0.0) + 60.0) / LN2
    return int(64 * math.ceil((bits + 64) / 64))


def fmt_multiplier(orbit: PeriodicOrbit) -> str:
    with gmpy2.context(precision=max(orbit.prec, 64)):
        v = gmpy2.exp(mpfr(orbit.log_multiplier))
    # the multiplier can underflow a double, so format the mpfr digits directly
    mant, exp, _ = gmpy2.digits(v, 10, 13)
    sign = "-" if mant.startswith("-") else ""
    mant = mant.lstrip("-")
    return f"{sign}{mant[0]}.{mant[1:]}e{exp - 1:+03d}"


@dataclass
class _Parent:
    """Cached data of the current last stage used by the search."""

    orbit: PeriodicOrbit
    logs: np.ndarray
    ds: list[float]
    gamma: float
    n: int
    sensitivity: float


@dataclass
class _Candidate:
    P: int
    m: int
    correction: tuple[int, ...]
    guess: float
    logs: np.ndarray
    info: dict = field(default_factory=dict)


@dataclass
class _Outcome:
    orbit: PeriodicOrbit
    cert: ApproximationCertificate
    d: float
    gamma: float
    sensitivity: float
    logs: np.ndarray
    reason: str | None = None


def _depth_budget(n_next: int, N: int, params: StageParameters) -> float:
    """Extra homing depth, in ln(1/fiber0), that stages n_next + 1 .. N will add.

    Stage k homes its start to c * fiber0 with c * sens below gamma / margin,
    and its tail pairs put d_k near sqrt(gamma * c * fiber0); together the
    depth grows by about ln(margin) + 2 ln(3 * 2^k / fraction) per stage.
    The payback of each homing run has to stay below the contraction of the
    parent word, so the contraction must exceed the final depth.
    """
    tot = 0.0
    # the last stage needs no sensitivity margin, so it can home shallowly
    for k in range(n_next + 1, N):
        tot += (math.log(params.sensitivity_margin)
                + 2 * math.log(3.0 * 2.0 ** k / params.gamma_fraction) + 1.0)
    return tot


# ---------------------------------------------------------------- search

@dataclass(frozen=True)
class _Room:
    """Predicted length of the correction that the stage after next will need.

    That stage homes its start to c * fiber0. Its tail pairs (end of the
    copy against end of the word, both running into the extension) sit at
    distance about sqrt(gamma * c * fiber0), and its start sensitivity is
    about c * sens, so the sensitivity margin needs
    c < k1^2 * gamma * fiber0 / (margin * sens)^2 with k1 = fraction / (3 * 2^(n+2)).
    The homing, extension and tour contraction is then paid back by the
    greedy block. Zero for the last stage.
    """

    tour_len: int
    active: bool
    k1: float
    margin: float

    @classmethod
    def for_stage(cls, system, n_next: int, N: int, params: StageParameters) -> "_Room":
        T = density_tour(system, params.epsilon(n_next + 1))
        k1 = params.gamma_fraction / (3 * 2.0 ** (n_next + 1))
        return cls((len(T) if T else 0) + 1, n_next < N, k1, params.sensitivity_margin)

    def __call__(self, fiber0, gamma, sens, prefix_cum: np.ndarray):
        """`prefix_cum[k]` is the log sum over the first k symbols of the new word."""
        if not self.active:
            return np.zeros(np.shape(fiber0))
        fiber0 = np.maximum(np.abs(np.asarray(fiber0, dtype=float)), 1e-300)
        sens = np.maximum(np.asarray(sens, dtype=float), 1e-300)
        gamma = np.asarray(gamma, dtype=float)
        c = np.minimum(np.maximum(1.0, gamma / (2 * sens)),
                       self.k1 ** 2 * gamma * fiber0 / (self.margin * sens) ** 2)
        target = np.clip(fiber0 * c, 1e-300, 0.25)
        h = np.maximum(8.0, np.log2(0.25 / target))
        ext = np.clip(np.ceil(-np.log2(gamma)), 0, 63)
        pre = prefix_cum[np.minimum(ext.astype(int), len(prefix_cum) - 1)]
        gain = h * LN2 + 0.06 * self.tour_len + np.maximum(0.0, -pre) + 3.0
        return ext + self.tour_len + h + gain / E_RATE


E_RATE = 0.28  # log gain per symbol of the greedy expanding block
PERIOD_GROWTH = 1.9  # a stage with one copy at most doubles the period
LAMBDA_KEEP = 0.95  # share of the contraction a later stage must keep


def _future_min_period(system, n_next: int, N: int, params: StageParameters) -> float:
    """Smallest period of X_{n_next} that leaves room for every later tour.

    Stage k needs about ext + tour + homing + payback symbols; periods grow
    by at most PERIOD_GROWTH per stage and the last stage may use two copies.
    """
    need = 0.0
    for k in range(n_next + 2, N + 1):
        T = density_tour(system, params.epsilon(k))
        t = len(T) if T else 0
        room = 64 + t + 90 + (0.06 * t + 90 * LN2 + 20) / E_RATE
        reach = PERIOD_GROWTH ** (k - 1 - n_next) * (2 if k == N else 1)
        need = max(need, room / reach)
    return need  # conservative growth rate of the lookahead greedy block


def _seed_candidates(system, parent: _Parent, params: StageParameters, N: int,
                     stats: dict | None = None):
    """Dive-family candidates for the stage built on a period-1 seed, lazily in (P, word) order."""
    T = density_tour(system, params.epsilon(parent.n + 1))
    tour = list(T.symbols) if T else []
    chi_n = parent.orbit.chi
    fam = system.family
    words = set()
    for q in range(3, 11):
        for a in range(24, 41, 4):
            for b in range(6, 17):
                for h in range(20, 56):
                    corr = []
                    for i in range(q - 1):
                        corr += [1] * (b + i) + [2] + [0] * a
                    corr += [1] * (b + q - 1) + tour + [0] * h
                    words.add((len(corr) + 3, tuple(corr)))
    depth_next = _depth_budget(parent.n + 1, N, params)
    keep = LAMBDA_KEEP ** max(0, N - 2 - parent.n)
    room = _Room.for_stage(system, parent.n + 1, N, params)
    min_period = _future_min_period(system, parent.n + 1, N, params)
    stats = stats if stats is not None else {}
    for P, corr in sorted(words):
        m = 3
        if P > params.period_cap:
            break
        if P < min_period:
            continue
        word = (0,) * m + corr
        pred = _float_orbit(fam, word)
        if pred is None:
            continue
        fibers, logs = pred
        chi = logs.sum() / P
        ratio = chi / chi_n
        if not (params.ratio_floor <= ratio < params.xi * 0.999):
            continue
        stats["ratio"] = stats.get("ratio", 0) + 1
        if parent.n + 1 < N:
            orb = PeriodicOrbit(Word(word), fibers[0], tuple(fibers), float(logs.sum()), 0.0)
            d = float(min_pairwise_distance(orb, system.depth))
            g = params.gamma_fraction * gamma_bound(parent.ds + [d], parent.n + 1)
            sens = start_sensitivity(orb, logs)
            if sens * params.sensitivity_margin >= g:
                continue
            stats["sensitivity"] = stats.get("sensitivity", 0) + 1
            if -logs.sum() * keep < -math.log(abs(fibers[0])) + depth_next:
                continue
            stats["depth"] = stats.get("depth", 0) + 1
            need = room(float(fibers[0]), g, sens, np.concatenate([[0.0], np.cumsum(logs)]))
            if P < float(need):
                continue
            stats["room"] = stats.get("room", 0) + 1
        yield _Candidate(P, m, corr, float(fibers[0]), logs, {"family": "seed"})


def _float_orbit(fam, word, y0: float = 2.0 ** -30, passes: int = 3):
    """Float approximation of the attracting periodic fiber orbit, or None."""
    y = y0
    P = len(word)
    for _ in range(passes):
        fib = np.empty(P)
        logs = np.empty(P)
        y_start = y
        for i, s in enumerate(word):
            fib[i] = y
            logs[i] = math.log(fam.dg(s, y))
            y = fam.g(s, y)
    if logs.sum() >= 0 or circle_dist(y, y_start) > 1e-9:
        return None
    return fib, logs


def _shadow_candidates(system, parent: _Parent, params: StageParameters, N: int,
                       m_values=(1, 2), stats: dict | None = None):
    """Copies + extension + tour + greedy expansion + rotation padding + homing.

    For every homing length h only expansion lengths r whose gain roughly
    pays back the extension, tour and homing are kept, and the padding f
    ranges over a window of PAD_WINDOW lengths starting where the exponent
    ratio first drops below xi. All filters are evaluated on the whole
    (r, f) grid at once; survivors are returned sorted by (period, word).
    """
    X = parent.orbit
    px = X.period
    n = parent.n
    fam = system.family
    gamma_n = parent.gamma
    last = n + 1 == N
    stats = stats if stats is not None else {}
    e = 0
    while 2.0 ** (-(1 + e)) >= gamma_n and e < 63:
        e += 1
    ext = list((X.word.symbols * (e // px + 1))[:e])
    T = density_tour(system, params.epsilon(n + 1))
    tour = list(T.symbols) if T else []
    # the correction must leave the parent word right after the extension,
    # otherwise the copy and the extension agree for longer and d collapses
    nxt = X.word.symbols[e % px]
    if not tour or tour[0] == nxt:
        tour = [0 if nxt else 1] + tour
    Ln = float(parent.logs.sum())
    Lam = -Ln
    ystar = signed_fiber(X.fiber0)
    D = math.log2(0.25 / abs(ystar))
    h_lo, h_hi = max(4, int(D) - 12), int(D) + 48
    lc_max = (0.25 if last else 1.0 - LAMBDA_KEEP) * Lam
    pre_logs = np.array([parent.logs[i % px] for i in range(e)])
    L_pre = float(pre_logs.sum())
    y_e = X.fibers[e % px]
    gain_max = 0.1 * len(tour) - L_pre + h_hi * LN2 + lc_max + 10.0
    prec = int(64 * math.ceil((192 + (gain_max - math.log(gamma_n) + 2 * Lam) / LN2) / 64))
    run_t = run_word(system, tour, y_e, prec, want_derivs=True)
    t_logs = np.array([math.log(float(d)) for d in run_t.derivs])
    L_T = float(t_logs.sum())
    R = int((-(L_pre + L_T) + h_hi * LN2 + lc_max + 10.0) / E_RATE) + 40
    e_syms, e_fibs, e_logs = greedy_expansion(system, run_t.end, R, prec)
    LE = np.concatenate([[0.0], np.cumsum(e_logs)])
    # running maximum of the partial log sum through extension + tour + E
    part = np.concatenate([[0.0], np.cumsum(np.concatenate([pre_logs, t_logs, e_logs]))])
    runmax = np.maximum.accumulate(part)
    base_off = e + len(tour)
    z = np.array([signed_fiber(run_t.end)] + [signed_fiber(v) for v in e_fibs])
    # the parent ends with tz zeros, like every candidate; the two tails then
    # run into the same extension, so they agree on k + e symbols
    tz = 0
    while tz < min(px, 63) and X.word.symbols[px - 1 - tz] == 0:
        tz += 1
    x_tail = np.array([signed_fiber(X.fibers[px - k]) for k in range(1, tz + 1)])
    S_n = parent.sensitivity
    chi_n = X.chi
    depth_next = _depth_budget(n + 1, N, params)
    keep = LAMBDA_KEEP ** max(0, N - 2 - n)
    room = _Room.for_stage(system, n + 1, N, params)
    min_period = _future_min_period(system, n + 1, N, params)
    parent_cum = np.concatenate([[0.0], np.cumsum(parent.logs)])
    alpha = fam.alpha
    hits = []
    for m in m_values:
        base_len = m * px + e + len(tour)
        P_cap = min(params.period_cap, math.floor(m * px / params.kappa_floor))
        for h in range(h_lo, h_hi + 1):
            pay = -(L_pre + L_T) + h * LN2
            rb = np.nonzero((LE >= pay - 6.0) & (LE <= pay + lc_max + 6.0))[0]
            if not len(rb):
                continue
            # smallest period with ratio below xi for the estimated L_C
            lc_est = LE[rb] - pay
            P_lo = px * (m * Lam - lc_est - 3.0) / (params.xi * Lam)
            f0 = np.maximum(0, np.ceil(P_lo - base_len - rb - h)).astype(int)
            fs = f0[:, None] + np.arange(PAD_WINDOW)[None, :]
            P = base_len + rb[:, None] + fs + h
            live = P <= P_cap
            if not live.any():
                continue
            entry = _wrap(z[rb][:, None] + (alpha * fs) % 1.0)
            y = entry
            Lh = np.zeros_like(y)
            ring = []
            for _ in range(h):
                Lh = Lh + np.log(1 - fam.beta * np.cos(2 * np.pi * y))
                ring.append(y)
                if len(ring) > tz:
                    ring.pop(0)
                y = _wrap(y - fam.amplitude * np.sin(2 * np.pi * y))
            yh = y
            dev = np.abs(yh)
            c = yh / ystar
            L = m * Ln + L_pre + L_T + LE[rb][:, None] + Lh
            ratio = (L / P) / chi_n
            kappa = m * px / P
            # start sensitivity of the new orbit: copies scale by c, the
            # correction part peaks at the running maximum of the log sum
            S_next = np.maximum(np.abs(c) * S_n,
                                dev * np.exp(m * Ln + runmax[base_off + rb])[:, None])
            tests = [
                ("period", live),
                ("ratio", (ratio >= params.ratio_floor) & (ratio < params.xi * 0.999)),
                ("kappa", kappa >= params.kappa_floor),
                ("shadow", np.abs(c - 1) * S_n < gamma_n / 2),
                ("homed", dev < 0.25),
                ("theta", np.abs(L) <= params.log_theta),
                ("tail", np.full_like(ratio, h != tz, dtype=bool)),
            ]
            if not last:
                d_est = np.full_like(ratio, min(min(parent.ds), 2.0 ** -(e + 1)))
                for k in range(1, min(h, tz) + 1):
                    gap = np.abs(ring[-k] - x_tail[k - 1])
                    gap = np.minimum(gap, 1 - gap)
                    d_est = np.minimum(d_est, np.maximum(2.0 ** -(e + k), gap))
                g_est = params.gamma_fraction * d_est / (3 * 2.0 ** (n + 1))
                need = room(yh, g_est, S_next, parent_cum)
                tests += [
                    ("sensitivity", S_next * params.sensitivity_margin < g_est),
                    ("retain", -L >= LAMBDA_KEEP * Lam),
                    ("depth", -L * keep >= -np.log(np.maximum(dev, 1e-300)) + depth_next),
                    ("room", (P >= need) & (P >= min_period)),
                ]
            ok = np.ones_like(ratio, dtype=bool)
            for name, t in tests:
                ok &= t
                stats[name] = stats.get(name, 0) + int(ok.sum())
            for i, j in zip(*np.nonzero(ok)):
                hits.append((int(P[i, j]), m, h, int(rb[i]), int(fs[i, j]),
                             float(entry[i, j]), float(yh[i, j]), float(c[i, j]),
                             float(ratio[i, j])))
    # survivors can number in the millions at the last stage; build lazily
    hits.sort(key=lambda t: t[:5])

    def build():
        for P, m, h, r, f, y_in, y_out, c, ratio in hits:
            corr = tuple(ext + tour + e_syms[:r] + [2] * f + [0] * h)
            logs_c = np.concatenate([pre_logs, t_logs, e_logs[:r], np.zeros(f),
                                     _home_logs(fam, y_in, h)])
            logs = np.concatenate([np.tile(parent.logs, m), logs_c])
            yield _Candidate(P, m, corr, y_out, logs,
                             {"family": "shadow", "r": r, "f": f, "h": h, "e": e,
                              "c": c, "ratio": ratio})

    return build()


PAD_WINDOW = 64


def _home_logs(fam, y0: float, h: int) -> np.ndarray:
    out = np.empty(h)
    y = y0
    for i in range(h):
        out[i] = math.log(1 - fam.beta * math.cos(2 * math.pi * y))
        y = _wrap(y - fam.amplitude * math.sin(2 * math.pi * y))
    return out


def _evaluate(system, parent: _Parent, cand: _Candidate, params: StageParameters,
              N: int, C: float) -> _Outcome:
    X = parent.orbit
    word = Word(X.word.symbols * cand.m + cand.correction)
    n = parent.n
    G_est = -math.log(parent.gamma) + math.log(3 * 2.0 ** (n + 1)) + 60
    prec = precision_for(cand.logs, G_est)
    Y = solve_periodic(system, word, cand.guess, prec)
    logs, _ = orbit_logs(system, Y)
    chi = Y.chi
    chi_n = X.chi
    if not (chi < 0 and abs(chi) < params.xi * abs(chi_n)):
        return _Outcome(Y, None, 0, 0, 0, logs, "exponent ratio")
    if abs(chi) < params.ratio_floor * abs(chi_n):
        return _Outcome(Y, None, 0, 0, 0, logs, "ratio floor")
    if abs(float(Y.log_multiplier)) > params.log_theta:
        return _Outcome(Y, None, 0, 0, 0, logs, "multiplier bound")
    cert = best_certificate(system, X, Y, parent.gamma)
    need = max(params.kappa_floor, 1 - C * abs(chi_n))
    if cert.kappa < need:
        return _Outcome(Y, cert, 0, 0, 0, logs, f"kappa {cert.kappa:.4f} < {need:.4f}")
    d = float(min_pairwise_distance(Y, system.depth))
    if d == 0:
        return _Outcome(Y, cert, d, 0, 0, logs, "coincident points")
    ds = parent.ds + [d]
    gamma = params.gamma_fraction * gamma_bound(ds, n + 1)
    sens = start_sensitivity(Y, logs)
    if n + 1 < N:
        if not sens * params.sensitivity_margin < gamma:
            return _Outcome(Y, cert, d, gamma, sens, logs,
                            f"sensitivity lookahead (S {sens:.2e}, gamma {gamma:.2e}, d {d:.2e})")
        depth = -math.log(abs(signed_fiber(Y.fiber0)))
        if -float(Y.log_multiplier) < LAMBDA_KEEP * -float(X.log_multiplier) and n > 1:
            return _Outcome(Y, cert, d, gamma, sens, logs, "contraction retention")
        keep = LAMBDA_KEEP ** max(0, N - 2 - n)
        if -float(Y.log_multiplier) * keep < depth + _depth_budget(n + 1, N, params):
            return _Outcome(Y, cert, d, gamma, sens, logs,
                            f"depth lookahead (Lambda {-float(Y.log_multiplier):.1f}, "
                            f"depth {depth:.1f})")
    eps = params.epsilon(n + 1)
    if not tour_hits(word, eps, Y.fibers, system.alphabet):
        return _Outcome(Y, cert, d, gamma, sens, logs, "density")
    return _Outcome(Y, cert, d, gamma, sens, logs, None)


def correction_block_search(system: SkewProductSystem, parent, params: StageParameters,
                            N: int | None = None, C: float | None = None,
                            log: Callable[[str], None] | None = None):
    """Smallest-period plan whose orbit passes every stage check.

    `parent` is the cached last stage (see `build_stage`). Returns
    (plan, outcome). Raises SearchExhausted when no screened candidate passes.
    """
    N = N if N is not None else parent.n + 1
    if C is None:
        C = params.resolved_C(abs(parent.orbit.chi))
    if parent.orbit.chi >= 0:
        raise PreconditionError("parent exponent must be negative")
    stats: dict[str, int] = {}
    if parent.orbit.period == 1:
        cands = _seed_candidates(system, parent, params, N, stats)
    else:
        m_values = (1, 2) if parent.n + 1 == N else (1,)
        cands = _shadow_candidates(system, parent, params, N, m_values, stats)
    tried = 0
    reasons: dict[str, int] = {}
    for cand in cands:
        if tried >= params.max_exact:
            break
        tried += 1
        out = _evaluate(system, parent, cand, params, N, C)
        if log:
            log(f"  candidate P={cand.P} m={cand.m} {cand.info} -> {out.reason or 'ok'}")
        if out.reason is None:
            plan, _ = plan_concatenation(parent.orbit, cand.correction, cand.m, params.period_cap)
            return plan, out
        key = out.reason.split()[0]
        reasons[key] = reasons.get(key, 0) + 1
    raise SearchExhausted(f"stage {parent.n + 1}: screening survivors {stats}, "
                          f"{tried} checked exactly, failures {reasons}")


# ---------------------------------------------------------------- stages

def _seed_record(system, seed: PeriodicOrbit, params: StageParameters) -> tuple[StageRecord, _Parent]:
    logs, _ = orbit_logs(system, seed)
    d = float(min_pairwise_distance(seed, system.depth))
    gamma = params.gamma_fraction * gamma_bound([d], 1)
    rec = StageRecord(1, seed, None, seed.chi, d, gamma, params.epsilon(1), None, None,
                      float(seed.log_multiplier), fmt_multiplier(seed),
                      start_sensitivity(seed, logs))
    return rec, _Parent(seed, logs, [d], gamma, 1, rec.sensitivity)


def build_stage(system: SkewProductSystem, parent, params: StageParameters, n: int,
                N: int | None = None, C: float | None = None,
                log: Callable[[str], None] | None = None):
    """Build X_{n+1} from X_n; returns (record, parent cache for the next stage).

    `parent` is either the cached last stage or a PeriodicOrbit (then it is
    treated as stage n with gamma from its own minimal distance).
    """
    import time
    t0 = time.perf_counter()
    if isinstance(parent, PeriodicOrbit):
        if parent.chi >= 0:
            raise PreconditionError("parent exponent must be negative")
        _, parent = _seed_record(system, parent, params)
        parent.n = n
    N = N if N is not None else n + 1
    plan, out = correction_block_search(system, parent, params, N, C, log)
    Y = out.orbit
    mu_prev = orbit_measure(parent.orbit, system.depth)
    mu = orbit_measure(Y, system.depth)
    disc = discrepancy(mu_prev, mu, params.test_family)
    ok, _ = verify_certificate(system, parent.orbit, Y, out.cert)
    if not ok:
        raise SearchExhausted(f"stage {n + 1}: certificate failed re-verification")
    rec = StageRecord(n + 1, Y, plan, Y.chi, out.d, out.gamma, params.epsilon(n + 1), out.cert,
                      disc, float(Y.log_multiplier), fmt_multiplier(Y), out.sensitivity,
                      seconds=time.perf_counter() - t0)
    nxt = _Parent(Y, out.logs, parent.ds + [out.d], out.gamma, n + 1, out.sensitivity)
    return rec, nxt


def seed_orbit(system: SkewProductSystem, word: str | Word = "0") -> PeriodicOrbit:
    """The most contracting periodic orbit with the given word."""
    orbits = periodic_orbit_from_word(system, word)
    if not orbits:
        raise PreconditionError(f"word {word} has no periodic orbit")
    return min(orbits, key=lambda o: o.chi)


def run_construction(system: SkewProductSystem, seed: PeriodicOrbit, params: StageParameters,
                     N: int, log: Callable[[str], None] | None = None,
                     on_stage: Callable[[StageRecord], None] | None = None) -> ConstructionResult:
    """Stages X_1 = seed, X_2, ..., X_N plus the hypothesis report.

    On SearchExhausted the exception carries the partial result.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if seed.chi >= 0:
        raise PreconditionError("seed exponent must be negative")
    nu = abs(seed.chi)
    C = params.resolved_C(nu)
    rec, parent = _seed_record(system, seed, params)
    stages = [rec]
    discs: list[float] = []
    failure = None
    for n in range(1, N):
        try:
            rec, parent = build_stage(system, parent, params, n, N, C, log)
        except SearchExhausted as exc:
            failure = str(exc)
            break
        prev = stages[-1]
        prev.kappa = rec.certificate.kappa
        prev.kappa_exact = rec.certificate.kappa_exact
        if on_stage:
            on_stage(prev)
        stages.append(rec)
        discs.append(rec.discrepancy_prev)
        if log:
            log(f"stage {rec.n}: period {rec.period} chi {rec.chi:.6g} kappa_prev "
                f"{prev.kappa:.4f} d {rec.d:.3e} gamma {rec.gamma:.3e} "
                f"disc {rec.discrepancy_prev:.4f} ({rec.seconds:.1f}s)")
    if on_stage:
        on_stage(stages[-1])
    report = check_sequence_conditions(stages, C, params.xi, params.gamma_budget,
                                       params.product_floor)
    final = orbit_measure(stages[-1].orbit, system.depth)
    result = ConstructionResult(stages, report, final, discs, C, failure is None, failure)
    if failure is not None:
        raise SearchExhausted(failure, result)
    return result

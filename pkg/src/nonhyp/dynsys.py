"""Skew products over the full shift with circle fibers.

A point is a pair (omega, y) where omega is a one-sided symbol sequence,
stored as an eventually periodic code, and y lies on the circle [0, 1).
The map sends (omega, y) to (sigma omega, g_{omega_0}(y)).

Long periodic orbits are evaluated with gmpy2 multiprecision floats, since
the orbits built later contract and expand the fiber by far more than double
precision can track.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from collections.abc import Sequence

import gmpy2
import numpy as np
from gmpy2 import mpfr

TRUNCATION_DEPTH = 64
SOLVER_TOL = 1e-12
PERIOD_ONE_CAP = 1.0


class NoPeriodicPoint(Exception):
    """The composed fiber map of a word has no fixed point."""


class DegenerateDerivative(Exception):
    """A fiber derivative is not positive where it should be."""


def _frac(y):
    """y mod 1 in [0, 1); a tiny negative y that rounds up to 1 maps to 0."""
    if isinstance(y, (float, int)):
        z = float(y) % 1.0
        return 0.0 if z >= 1.0 else z
    if 0 <= y < 1:
        return y
    # keep the value's own precision; the ambient context may be coarser
    with gmpy2.context(gmpy2.get_context(), precision=max(y.precision, 53)):
        z = y - gmpy2.floor(y)
        return z - 1 if z >= 1 else z


def _smallest_root(symbols: tuple[int, ...]) -> int:
    n = len(symbols)
    for d in range(1, n):
        if n % d == 0 and symbols == symbols[:d] * (n // d):
            return d
    return n


@dataclass(frozen=True)
class Word:
    """Finite word over {0, ..., alphabet-1}; `is_power` marks proper powers."""

    symbols: tuple[int, ...]
    alphabet: int = 3
    is_power: bool = field(init=False, compare=False)

    def __post_init__(self):
        syms = tuple(int(s) for s in self.symbols)
        if not syms:
            raise ValueError("word must be non-empty")
        if self.alphabet < 2:
            raise ValueError("alphabet size must be at least 2")
        if min(syms) < 0 or max(syms) >= self.alphabet:
            raise ValueError(f"symbols must lie in 0..{self.alphabet - 1}")
        object.__setattr__(self, "symbols", syms)
        object.__setattr__(self, "is_power", _smallest_root(syms) < len(syms))

    @classmethod
    def parse(cls, text: str, alphabet: int = 3) -> "Word":
        return cls(tuple(int(c) for c in text.strip()), alphabet)

    @property
    def primitive(self) -> bool:
        return not self.is_power

    def root(self) -> "Word":
        return Word(self.symbols[: _smallest_root(self.symbols)], self.alphabet)

    def __len__(self) -> int:
        return len(self.symbols)

    def __getitem__(self, i):
        return self.symbols[i]

    def __str__(self) -> str:
        if self.alphabet <= 10:
            return "".join(map(str, self.symbols))
        return ",".join(map(str, self.symbols))


class Cycle(Sequence):
    """A rotation of a shared symbol tuple; equal to and hashed like the rotated tuple.

    Orbit points all refer to the orbit word, so a period-P orbit costs O(P)
    symbols instead of O(P^2).
    """

    __slots__ = ("_syms", "_k", "_hash")

    def __init__(self, syms: tuple[int, ...], k: int = 0):
        self._syms = syms
        self._k = k % len(syms)
        self._hash = None

    def rotate(self, j: int) -> "Cycle":
        return Cycle(self._syms, self._k + j)

    def __len__(self) -> int:
        return len(self._syms)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return tuple(self)[i]
        n = len(self._syms)
        if not -n <= i < n:
            raise IndexError("cycle index out of range")
        return self._syms[(self._k + i) % n]

    def __iter__(self):
        s, k = self._syms, self._k
        yield from s[k:]
        yield from s[:k]

    def __eq__(self, other):
        if isinstance(other, Cycle):
            if other._syms is self._syms and other._k == self._k:
                return True
            return len(other) == len(self) and all(a == b for a, b in zip(self, other))
        if isinstance(other, tuple):
            return len(other) == len(self) and all(a == b for a, b in zip(self, other))
        return NotImplemented

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(tuple(self))
        return self._hash

    def __add__(self, other):
        return tuple(self) + tuple(other)

    def __repr__(self) -> str:
        return f"Cycle({tuple(self)!r})"


@dataclass(frozen=True)
class Point:
    """Base sequence prefix + cycle repeated forever, and a fiber in [0, 1)."""

    prefix: tuple[int, ...]
    cycle: tuple[int, ...]
    fiber: object

    def __post_init__(self):
        if not self.cycle:
            raise ValueError("repeating part of the base code must be non-empty")
        y = _frac(self.fiber)
        if not 0 <= y < 1:
            raise ValueError("fiber must lie in [0, 1)")
        object.__setattr__(self, "prefix", tuple(self.prefix))
        if not isinstance(self.cycle, Cycle):
            object.__setattr__(self, "cycle", tuple(self.cycle))
        object.__setattr__(self, "fiber", y)

    @classmethod
    def periodic(cls, word: Sequence[int] | Word, fiber, offset: int = 0) -> "Point":
        syms = word.symbols if isinstance(word, Word) else tuple(word)
        return cls((), Cycle(syms, offset), fiber)

    def symbol(self, i: int) -> int:
        if i < len(self.prefix):
            return self.prefix[i]
        return self.cycle[(i - len(self.prefix)) % len(self.cycle)]

    def base(self, n: int) -> tuple[int, ...]:
        return tuple(self.symbol(i) for i in range(n))

    def shifted_base(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        if self.prefix:
            return self.prefix[1:], self.cycle
        if isinstance(self.cycle, Cycle):
            return (), self.cycle.rotate(1)
        return (), self.cycle[1:] + self.cycle[:1]


_MP_CONST_CACHE: dict = {}


def _mp_consts(beta, alpha, prec):
    key = (float(beta), float(alpha), prec)
    c = _MP_CONST_CACHE.get(key)
    if c is None:
        with gmpy2.context(precision=prec):
            two_pi = 2 * gmpy2.const_pi()
            b = mpfr(beta)
            c = {
                "two_pi": two_pi,
                "beta": b,
                "amp": b / two_pi,
                "alpha": mpfr(alpha) if not isinstance(alpha, str) else mpfr(alpha),
                "half": mpfr("0.5"),
                "quarter": mpfr("0.25"),
            }
        _MP_CONST_CACHE[key] = c
    return c


def _sin_cos_turns(y, c):
    """sin and cos of 2*pi*y for y in [0, 1), reduced to [0, 1/4] first.

    MPFR spends a lot of working precision on arguments near multiples of
    pi, which is exactly where the orbits of interest accumulate.
    """
    t = y - 1 if y >= c["half"] else y
    neg = t < 0
    if neg:
        t = -t
    if t > c["quarter"]:
        s, co = gmpy2.sin_cos(c["two_pi"] * (c["half"] - t))
        co = -co
    else:
        s, co = gmpy2.sin_cos(c["two_pi"] * t)
    return (-s if neg else s), co


@dataclass(frozen=True)
class FiberMapFamily:
    """Circle maps g_0, g_1 (sine perturbations) and g_2 (rotation by alpha).

    g_0(y) = y - (beta/2pi) sin 2pi y, g_1(y) = y + (beta/2pi) sin 2pi y,
    g_2(y) = y + alpha, all mod 1. The family is checked at construction:
    g' > 0 on a grid and the closed-form derivative against central
    differences on 10^3 points.
    """

    beta: float = 0.5
    alpha: float = (math.sqrt(5.0) - 1.0) / 2.0
    name: str = "MODEL-A"
    alphabet: int = 3

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must lie in [0, 1)")
        if self.alphabet != 3:
            raise ValueError("MODEL-A has exactly three symbols")
        grid = np.linspace(0.0, 1.0, 1000, endpoint=False)
        h = 1e-6
        for s in range(self.alphabet):
            d = self.dg_array(s, grid)
            if np.any(d <= 0):
                raise DegenerateDerivative(f"g_{s}' not positive on grid")
            lift = lambda y: self.lift_array(s, y)
            fd = (lift(grid + h) - lift(grid - h)) / (2 * h)
            if np.max(np.abs(fd - d)) >= 1e-6:
                raise ValueError(f"derivative of g_{s} inconsistent with map")

    @property
    def amplitude(self) -> float:
        return self.beta / (2 * math.pi)

    # lift of g_s to the real line (no reduction mod 1)
    def lift_array(self, s: int, y):
        y = np.asarray(y, dtype=float)
        if s == 2:
            return y + self.alpha
        sgn = -1.0 if s == 0 else 1.0
        return y + sgn * self.amplitude * np.sin(2 * np.pi * y)

    def dg_array(self, s: int, y):
        y = np.asarray(y, dtype=float)
        if s == 2:
            return np.ones_like(y)
        sgn = -1.0 if s == 0 else 1.0
        return 1.0 + sgn * self.beta * np.cos(2 * np.pi * y)

    def lift(self, s: int, y: float) -> float:
        if s == 2:
            return y + self.alpha
        sgn = -1.0 if s == 0 else 1.0
        return y + sgn * self.amplitude * math.sin(2 * math.pi * y)

    def g(self, s: int, y):
        if not isinstance(y, (float, int)):
            return self._g_mp(s, y)
        return _frac(self.lift(s, float(y)))

    def dg(self, s: int, y):
        if not isinstance(y, (float, int)):
            return self._dg_mp(s, y)
        if s == 2:
            return 1.0
        sgn = -1.0 if s == 0 else 1.0
        return 1.0 + sgn * self.beta * math.cos(2 * math.pi * float(y))

    def _g_mp(self, s, y):
        c = _mp_consts(self.beta, self.alpha, gmpy2.get_context().precision)
        if s == 2:
            z = y + c["alpha"]
        else:
            sn, _ = _sin_cos_turns(y - gmpy2.floor(y), c)
            z = y - c["amp"] * sn if s == 0 else y + c["amp"] * sn
        return _frac(z)

    def _dg_mp(self, s, y):
        if s == 2:
            return mpfr(1)
        c = _mp_consts(self.beta, self.alpha, gmpy2.get_context().precision)
        _, co = _sin_cos_turns(y - gmpy2.floor(y), c)
        return 1 - c["beta"] * co if s == 0 else 1 + c["beta"] * co


@dataclass(frozen=True)
class SkewProductSystem:
    family: FiberMapFamily = field(default_factory=FiberMapFamily)
    depth: int = TRUNCATION_DEPTH

    @property
    def alphabet(self) -> int:
        return self.family.alphabet

    @property
    def name(self) -> str:
        return self.family.name

    def fingerprint(self) -> str:
        return f"{self.name}(beta={self.family.beta!r},alpha={self.family.alpha!r},D={self.depth})"


def model_a(beta: float = 0.5, alpha: float | None = None) -> SkewProductSystem:
    if alpha is None:
        alpha = (math.sqrt(5.0) - 1.0) / 2.0
    return SkewProductSystem(FiberMapFamily(beta=beta, alpha=alpha))


@dataclass(frozen=True)
class FiberRun:
    """Fibers visited along a word, the end fiber and the derivative product.

    `derivs[i]` is g'_{w_i}(y_i) when requested, else empty.
    """

    fibers: list
    end: object
    dprod: object
    derivs: list
    prec: int

    @property
    def log_multiplier(self):
        with gmpy2.context(precision=self.prec):
            return gmpy2.log(self.dprod)


def run_word(system: SkewProductSystem, symbols: Sequence[int], y0, prec: int = 256,
             want_derivs: bool = False) -> FiberRun:
    """Iterate the fiber maps along `symbols` from y0 at `prec` bits."""
    fam = system.family
    fibers = [None] * len(symbols)
    derivs = []
    with gmpy2.context(precision=prec):
        c = _mp_consts(fam.beta, fam.alpha, prec)
        amp, beta, alpha = c["amp"], c["beta"], c["alpha"]
        floor = gmpy2.floor
        one = mpfr(1)
        y = mpfr(y0)
        y = y - floor(y)
        if y >= one:  # a tiny negative value rounds up to 1 = 0 on the circle
            y = y - one
        dprod = one
        for i, s in enumerate(symbols):
            fibers[i] = y
            if s == 2:
                y = y + alpha
                if y >= one:
                    y = y - one
                if want_derivs:
                    derivs.append(one)
                continue
            sn, co = _sin_cos_turns(y, c)
            if s == 0:
                y = y - amp * sn
                d = 1 - beta * co
            else:
                y = y + amp * sn
                d = 1 + beta * co
            dprod = dprod * d
            if want_derivs:
                derivs.append(d)
            y = y - floor(y)
            if y >= one:
                y = y - one
    return FiberRun(fibers, y, dprod, derivs, prec)


@dataclass(frozen=True)
class PeriodicOrbit:
    """Periodic orbit with base word `word` through the fiber point `fiber0`.

    `fibers[i]` is the fiber coordinate of the i-th orbit point, whose base
    is the rotation of `word` by i. `log_multiplier` is the log of the
    derivative of the composed fiber map at `fiber0`.
    """

    word: Word
    fiber0: object
    fibers: tuple
    log_multiplier: object
    residual: float
    prec: int = 53

    @property
    def period(self) -> int:
        return len(self.word)

    @property
    def chi(self) -> float:
        return float(self.log_multiplier) / self.period

    @property
    def points(self) -> list[Point]:
        w = self.word.symbols
        return [Point.periodic(w, y, i) for i, y in enumerate(self.fibers)]

    def point(self, i: int) -> Point:
        return Point.periodic(self.word.symbols, self.fibers[i % self.period], i)

    def fibers_float(self) -> np.ndarray:
        return np.array([float(y) for y in self.fibers])


def step(system: SkewProductSystem, p: Point) -> Point:
    s = p.symbol(0)
    prefix, cycle = p.shifted_base()
    return Point(prefix, cycle, system.family.g(s, p.fiber))


def trajectory(system: SkewProductSystem, p: Point, n: int) -> list[Point]:
    if n < 1:
        raise ValueError("n must be at least 1")
    out = [p]
    for _ in range(n - 1):
        out.append(step(system, out[-1]))
    return out


def circle_dist(a, b):
    d = abs(a - b)
    if isinstance(d, float):
        d = d % 1.0
        return min(d, 1.0 - d)
    d = d - gmpy2.floor(d)
    return min(d, 1 - d)


def first_disagreement(p: Point, q: Point, depth: int = TRUNCATION_DEPTH) -> int | None:
    """Index of the first differing base symbol, or None if none below `depth`."""
    for i in range(depth):
        if p.symbol(i) != q.symbol(i):
            return i
    return None


def metric_dist(p: Point, q: Point, depth: int = TRUNCATION_DEPTH):
    """max(2^-m, circle distance); bases agreeing on `depth` symbols count as equal."""
    m = first_disagreement(p, q, depth)
    fd = circle_dist(p.fiber, q.fiber)
    if m is None:
        return fd
    return max(2.0 ** (-m), fd)


def _lift_word(fam: FiberMapFamily, symbols, y: np.ndarray) -> np.ndarray:
    for s in symbols:
        y = fam.lift_array(s, y)
    return y


def _lift_word_scalar(fam: FiberMapFamily, symbols, y: float) -> float:
    for s in symbols:
        y = fam.lift(s, y)
    return y


def fixed_fibers(system: SkewProductSystem, w: Word, grid: int = 10_000,
                 tol: float = SOLVER_TOL) -> list[float]:
    """Fixed points of g_w on the circle by sign scan of the lift displacement.

    For each integer k in the range of G(y) - y over the grid, the sign changes
    of G(y) - y - k are bracketed and bisected until |G(y) - y - k| < tol.
    """
    fam = system.family
    ys = np.arange(grid + 1) / grid
    disp = _lift_word(fam, w.symbols, ys) - ys
    roots: list[float] = []
    kmin, kmax = math.floor(disp.min()), math.ceil(disp.max())
    for k in range(kmin, kmax + 1):
        f = disp - k
        for i in range(grid):
            a, b = f[i], f[i + 1]
            if a == 0.0:
                roots.append(ys[i])
                continue
            if a * b < 0:
                lo, hi, flo = ys[i], ys[i + 1], a
                mid = 0.5 * (lo + hi)
                for _ in range(200):
                    mid = 0.5 * (lo + hi)
                    fm = _lift_word_scalar(fam, w.symbols, mid) - mid - k
                    if abs(fm) < tol or hi - lo < 1e-17:
                        break
                    if (fm < 0) == (flo < 0):
                        lo, flo = mid, fm
                    else:
                        hi = mid
                roots.append(mid)
    out: list[float] = []
    for r in sorted(_frac(y) for y in roots):
        if not out or circle_dist(r, out[-1]) > 1e-9:
            out.append(r)
    if len(out) > 1 and circle_dist(out[0], out[-1]) <= 1e-9:
        out.pop()
    return out


def orbit_at(system: SkewProductSystem, w: Word, y0, prec: int = 53) -> PeriodicOrbit:
    """Package a (numerically) fixed fiber point of g_w as a PeriodicOrbit."""
    if prec <= 53 and isinstance(y0, float):
        fam = system.family
        fibers = []
        L = 0.0
        y = y0
        for s in w.symbols:
            fibers.append(y)
            d = fam.dg(s, y)
            if d <= 0:
                raise DegenerateDerivative(f"g_{s}'({y}) = {d}")
            L += math.log(d)
            y = fam.g(s, y)
        res = float(circle_dist(y, y0))
        return PeriodicOrbit(w, float(y0), tuple(float(v) for v in fibers), L, res, 53)
    run = run_word(system, w.symbols, y0, prec)
    res = float(circle_dist(run.end, run.fibers[0]))
    return PeriodicOrbit(w, run.fibers[0], tuple(run.fibers), run.log_multiplier, res, prec)


def periodic_orbit_from_word(system: SkewProductSystem, w: Word | str) -> list[PeriodicOrbit]:
    """All periodic orbits with base word w, sorted by fiber; [] when none exist."""
    if isinstance(w, str):
        w = Word.parse(w, system.alphabet)
    return [orbit_at(system, w, y) for y in fixed_fibers(system, w)]


def solve_periodic(system: SkewProductSystem, w: Word, guess, prec: int,
                   max_iter: int = 60) -> PeriodicOrbit:
    """Polish a fixed point of g_w near `guess` at `prec` bits by Newton steps.

    Used for long words whose composed map cannot be scanned on a grid. The
    iteration stops once the circle residual is below 2^-(prec-16).
    """
    tol = mpfr(2) ** (-(prec - 16))
    with gmpy2.context(precision=prec):
        y = mpfr(guess)
        for _ in range(max_iter):
            run = run_word(system, w.symbols, y, prec)
            r = run.end - y
            r = r - gmpy2.rint(r)
            if abs(r) < tol:
                break
            dp = run.dprod
            if abs(1 - dp) < mpfr(2) ** -20:
                y = run.end  # near-neutral: the Newton step is ill-conditioned
            else:
                y = _frac(y + r / (1 - dp))
        else:
            raise NoPeriodicPoint(f"Newton polish did not converge for period {len(w)}")
    run = run_word(system, w.symbols, y, prec)
    res = float(circle_dist(run.end, y))
    return PeriodicOrbit(w, y, tuple(run.fibers), run.log_multiplier, res, prec)


def lcp_ranks(symbols: Sequence[int], depth: int = TRUNCATION_DEPTH) -> list[np.ndarray]:
    """ranks[k][i] identifies the length-k base block starting at cyclic index i."""
    s = np.asarray(symbols, dtype=np.int64)
    n = len(s)
    r = np.zeros(n, dtype=np.int64)
    ranks = [r]
    idx = np.arange(n)
    for k in range(depth):
        key = r * 8 + s[(idx + k) % n]
        _, r = np.unique(key, return_inverse=True)
        r = r.astype(np.int64).ravel()
        ranks.append(r)
    return ranks


def min_pairwise_distance(orbit: PeriodicOrbit, depth: int = TRUNCATION_DEPTH):
    """Minimum metric distance over distinct orbit points; 1.0 for period 1.

    Pairs whose bases agree on exactly k < depth symbols are at distance
    max(2^-k, fiber gap). Within an agreement class the smallest fiber gap is
    between neighbours in fiber order or across the wrap of the circle, so
    each class is scanned in sorted order. Levels with 2^-k above the best
    value found so far cannot improve it and are skipped.
    """
    n = orbit.period
    if n == 1:
        return PERIOD_ONE_CAP
    ys = orbit.fibers
    order = np.array(sorted(range(n), key=lambda i: ys[i]))
    ranks = lcp_ranks(orbit.word.symbols, depth)
    best = None
    for k in range(depth, -1, -1):
        if best is not None and k < depth and 2.0 ** (-k) >= best:
            break
        rk = ranks[k][order]
        idx = np.lexsort((np.arange(n), rk))
        o = order[idx]
        g = rk[idx]
        starts = np.r_[0, np.nonzero(g[1:] != g[:-1])[0] + 1]
        ends = np.r_[starts[1:], n]
        big = np.nonzero(ends - starts >= 2)[0]
        fk = None
        for gi in big:
            a, b = starts[gi], ends[gi]
            for t in range(a, b - 1):
                v = circle_dist(ys[o[t]], ys[o[t + 1]])
                if fk is None or v < fk:
                    fk = v
            v = circle_dist(ys[o[a]], ys[o[b - 1]])
            if v < fk:
                fk = v
        if fk is None:
            continue
        val = max(2.0 ** (-k), fk) if k < depth else fk
        if best is None or val < best:
            best = val
    return best

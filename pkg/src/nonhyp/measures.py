"""Atomic measures on the skew product and the center exponent.

Masses are kept as exact fractions so that coverage and mass comparisons
between stages are exact; integration uses float weights.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import gmpy2
import numpy as np

from .dynsys import (TRUNCATION_DEPTH, DegenerateDerivative, PeriodicOrbit, Point,
                     SkewProductSystem, circle_dist, step)

MERGE_TOL = 1e-14


@dataclass(frozen=True)
class AtomicMeasure:
    support: tuple[Point, ...]
    masses: tuple[Fraction, ...]

    def __post_init__(self):
        if len(self.support) != len(self.masses) or not self.support:
            raise ValueError("support and masses must be non-empty and aligned")
        if any(m <= 0 for m in self.masses):
            raise ValueError("masses must be positive")
        if sum(self.masses) != 1:
            raise ValueError("masses must sum to 1")

    @property
    def weights(self) -> np.ndarray:
        return np.array([float(m) for m in self.masses])

    def __len__(self) -> int:
        return len(self.support)

    @classmethod
    def from_points(cls, points: Sequence[Point], masses: Sequence[Fraction] | None = None,
                    depth: int = TRUNCATION_DEPTH, tol: float = MERGE_TOL) -> "AtomicMeasure":
        """Build a measure, merging atoms closer than `tol` in the metric.

        Atoms can only be that close when their bases agree to `depth`
        symbols, so candidates are grouped by base prefix and compared in
        fiber order.
        """
        n = len(points)
        if masses is None:
            masses = [Fraction(1, n)] * n
        groups: dict[tuple, list[int]] = {}
        for i, p in enumerate(points):
            groups.setdefault(p.base(depth), []).append(i)
        keep: list[int] = []
        mass: dict[int, Fraction] = {}
        for idx in groups.values():
            idx.sort(key=lambda i: points[i].fiber)
            heads = [idx[0]]
            mass[idx[0]] = masses[idx[0]]
            for i in idx[1:]:
                if circle_dist(points[i].fiber, points[heads[-1]].fiber) < tol:
                    mass[heads[-1]] += masses[i]
                else:
                    heads.append(i)
                    mass[i] = masses[i]
            # fibers just above 0 and just below 1 are neighbours on the circle
            if len(heads) > 1 and circle_dist(points[heads[0]].fiber,
                                              points[heads[-1]].fiber) < tol:
                mass[heads[0]] += mass.pop(heads[-1])
                heads.pop()
            keep.extend(heads)
        keep.sort()
        return cls(tuple(points[i] for i in keep), tuple(mass[i] for i in keep))


def n_measure(system: SkewProductSystem, x0: Point, n: int) -> AtomicMeasure:
    """Uniform measure on x0, Gx0, ..., G^{n-1}x0 (coincident iterates merged)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    pts = [x0]
    for _ in range(n - 1):
        pts.append(step(system, pts[-1]))
    return AtomicMeasure.from_points(pts, depth=system.depth)


def orbit_measure(orbit: PeriodicOrbit, depth: int = TRUNCATION_DEPTH) -> AtomicMeasure:
    return AtomicMeasure.from_points(orbit.points, depth=depth)


def integrate(mu: AtomicMeasure, phi: Callable[[Point], float]) -> float:
    return math.fsum(float(m) * float(phi(p)) for p, m in zip(mu.support, mu.masses))


@dataclass(frozen=True)
class TestFunction:
    word: tuple[int, ...]
    k: int
    kind: str  # "cos" or "sin"

    __test__ = False  # not a pytest class

    def __call__(self, p: Point) -> float:
        if p.base(len(self.word)) != self.word:
            return 0.0
        y = float(p.fiber)
        f = math.cos if self.kind == "cos" else math.sin
        return f(2 * math.pi * self.k * y)


@dataclass(frozen=True)
class TestFamily:
    """Cylinder indicators times cos/sin(2 pi k y), |w| <= L, 0 <= k <= K."""

    L: int = 4
    K: int = 4
    alphabet: int = 3

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.L < 1 or self.K < 1:
            raise ValueError("L and K must be at least 1")

    def words(self):
        for n in range(self.L + 1):
            yield from itertools.product(range(self.alphabet), repeat=n)

    def members(self) -> list[TestFunction]:
        out = []
        for w in self.words():
            for k in range(self.K + 1):
                out.append(TestFunction(w, k, "cos"))
                out.append(TestFunction(w, k, "sin"))
        return out

    def __len__(self) -> int:
        return sum(self.alphabet ** n for n in range(self.L + 1)) * 2 * (self.K + 1)

    def moments(self, mu: AtomicMeasure) -> np.ndarray:
        """Integrals of every member, shape (#words, 2(K+1)), in `words()` order."""
        A, L, K = self.alphabet, self.L, self.K
        w = mu.weights
        y = np.array([float(p.fiber) for p in mu.support])
        ks = np.arange(K + 1)
        ang = 2 * np.pi * np.outer(y, ks)
        vals = np.concatenate([np.cos(ang), np.sin(ang)], axis=1) * w[:, None]
        codes = np.zeros(len(mu.support), dtype=np.int64)
        for p_i, p in enumerate(mu.support):
            c = 0
            for s in p.base(L):
                c = c * A + s
            codes[p_i] = c
        leaf = np.zeros((A ** L, vals.shape[1]))
        # deterministic accumulation order: stable sort by leaf code
        order = np.argsort(codes, kind="stable")
        np.add.at(leaf, codes[order], vals[order])
        levels = []
        cur = leaf
        for n in range(L, -1, -1):
            levels.append(cur)
            if n:
                cur = cur.reshape(A ** (n - 1), A, -1).sum(axis=1)
        levels.reverse()
        return np.concatenate(levels, axis=0)


def discrepancy(mu: AtomicMeasure, nu: AtomicMeasure, fam: TestFamily) -> float:
    """max over the family of |int phi dmu - int phi dnu| (at most 2)."""
    return float(np.max(np.abs(fam.moments(mu) - fam.moments(nu))))


def _log_derivs(system: SkewProductSystem, symbols, fibers, prec: int):
    fam = system.family
    out = []
    with gmpy2.context(precision=max(prec, 53)):
        for s, y in zip(symbols, fibers):
            d = fam.dg(s, y)
            if d <= 0:
                raise DegenerateDerivative(f"g_{s}'({float(y)}) = {float(d)} <= 0")
            out.append(d)
    return out


def center_exponent_orbit(system: SkewProductSystem, orbit: PeriodicOrbit) -> float:
    """(1/period) * sum of ln g'_{w_i}(y_i) over the orbit."""
    ds = _log_derivs(system, orbit.word.symbols, orbit.fibers, orbit.prec)
    if orbit.prec <= 53:
        return math.fsum(math.log(d) for d in ds) / orbit.period
    with gmpy2.context(precision=orbit.prec):
        tot = gmpy2.fsum([gmpy2.log(d) for d in ds])
        return float(tot / orbit.period)


def birkhoff_center_exponent(system: SkewProductSystem, x0: Point, n: int) -> float:
    if n < 1:
        raise ValueError("n must be at least 1")
    fam = system.family
    p = x0
    acc = []
    for _ in range(n):
        s = p.symbol(0)
        d = fam.dg(s, p.fiber)
        if d <= 0:
            raise DegenerateDerivative(f"g_{s}'({float(p.fiber)}) = {float(d)} <= 0")
        acc.append(math.log(float(d)))
        p = step(system, p)
    return math.fsum(acc) / n

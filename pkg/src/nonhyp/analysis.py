"""Support estimates, density radii and mass lower bounds for a stage sequence.

Everything here works at finite resolution: a grid of base cylinders times
fiber intervals, and the finite list of stages built so far.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import gmpy2
import numpy as np
from gmpy2 import mpfr

from .dynsys import TRUNCATION_DEPTH, PeriodicOrbit, Point, circle_dist, metric_dist


@dataclass(frozen=True)
class GridPartition:
    """Cells (w, j): base starts with the word w of length L, fiber in [j/G, (j+1)/G)."""

    L: int
    G: int
    alphabet: int = 3

    def __post_init__(self):
        if self.L < 1 or self.G < 1:
            raise ValueError("need L >= 1 and G >= 1")

    def __len__(self) -> int:
        return self.alphabet ** self.L * self.G

    @property
    def diameter(self) -> float:
        """Largest metric distance between two points of one cell."""
        return max(2.0 ** -self.L, 1.0 / self.G)

    def fiber_index(self, y) -> int:
        if isinstance(y, float):
            return min(int(math.floor(y * self.G)), self.G - 1)
        with gmpy2.context(precision=max(y.precision, 53) + 8):
            return min(int(gmpy2.floor(y * self.G)), self.G - 1)

    def cell_of(self, p: Point) -> tuple[tuple[int, ...], int]:
        return p.base(self.L), self.fiber_index(p.fiber)

    def cell_id(self, cell) -> int:
        w, j = cell
        c = 0
        for s in w:
            c = c * self.alphabet + s
        return c * self.G + j

    def cells(self):
        for w in itertools.product(range(self.alphabet), repeat=self.L):
            for j in range(self.G):
                yield (w, j)

    def interval(self, cell) -> tuple[float, float]:
        return cell[1] / self.G, (cell[1] + 1) / self.G

    def center(self, cell) -> Point:
        """Cell centre: base w repeated periodically, fiber at the interval midpoint."""
        w, j = cell
        return Point((), tuple(w), (j + 0.5) / self.G)

    def center_distance(self, cell, p: Point, depth: int = TRUNCATION_DEPTH) -> float:
        return float(metric_dist(self.center(cell), p, depth))


@dataclass(frozen=True)
class SupportEstimate:
    grid: GridPartition
    cells: frozenset
    k: int
    first_hit: dict
    last_hit: dict

    def __len__(self) -> int:
        return len(self.cells)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["cell_id", "cylinder", "fiber_lo", "fiber_hi", "first_stage", "last_stage"])
        for cell in sorted(self.cells, key=self.grid.cell_id):
            lo, hi = self.grid.interval(cell)
            wr.writerow([self.grid.cell_id(cell), "".join(map(str, cell[0])), repr(lo), repr(hi),
                         self.first_hit[cell], self.last_hit[cell]])
        return buf.getvalue()


def _orbit_of(stage) -> PeriodicOrbit:
    return stage.orbit if hasattr(stage, "orbit") else stage


def occupied_cells(orbit: PeriodicOrbit, grid: GridPartition) -> set:
    w = orbit.word.symbols
    P = len(w)
    out = set()
    for i, y in enumerate(orbit.fibers):
        base = tuple(w[(i + t) % P] for t in range(grid.L))
        out.add((base, grid.fiber_index(y)))
    return out


def topological_limit_estimate(stages: Sequence, grid: GridPartition, k: int) -> SupportEstimate:
    """Cells hit by X_l for some l >= j, intersected over j = k..horizon.

    Stages are numbered from 1. Because the tail unions shrink as j grows the
    intersection equals the last tail, the cells of the final orbit; the full
    computation is kept so that the nesting in k can be checked.
    """
    H = len(stages)
    if not 1 <= k <= H:
        raise ValueError(f"k must lie in 1..{H}")
    per_stage = [occupied_cells(_orbit_of(s), grid) for s in stages]
    first: dict = {}
    last: dict = {}
    for idx, cs in enumerate(per_stage, start=1):
        for c in cs:
            first.setdefault(c, idx)
            last[c] = idx
    est = None
    tail: set = set()
    tails = {}
    for j in range(H, k - 1, -1):
        tail = tail | per_stage[j - 1]
        tails[j] = tail
    for j in range(k, H + 1):
        est = set(tails[j]) if est is None else est & tails[j]
    cells = frozenset(est)
    return SupportEstimate(grid, cells, k, {c: first[c] for c in cells},
                           {c: last[c] for c in cells})


def _agreement(word: np.ndarray, starts: np.ndarray, w: tuple, depth: int) -> np.ndarray:
    """Length of agreement (capped at depth) of the orbit bases at `starts` with w repeated."""
    P = len(word)
    t = np.arange(depth)
    eq = word[(starts[:, None] + t[None, :]) % P] == np.array(w)[t % len(w)][None, :]
    full = eq.all(axis=1)
    return np.where(full, depth, np.argmin(eq, axis=1))


def density_radius(orbit: PeriodicOrbit, region: SupportEstimate,
                   depth: int = TRUNCATION_DEPTH) -> float:
    """Largest distance from a region cell centre to the nearest orbit point.

    Points outside the centre's cylinder are at least 2^-(L-1) away, so they
    are only scanned when no point of the cylinder is that close.
    """
    if not region.cells:
        raise ValueError("region is empty")
    grid = region.grid
    word = np.asarray(orbit.word.symbols)
    P = len(word)
    fibers = orbit.fibers_float()
    everyone = np.arange(P)
    codes = np.zeros(P, dtype=np.int64)
    for t in range(grid.L):
        codes = codes * grid.alphabet + word[(everyone + t) % P]
    by_cyl: dict = {}
    for cell in region.cells:
        by_cyl.setdefault(cell[0], []).append(cell)
    worst = 0.0
    outside_floor = 2.0 ** -(grid.L - 1)

    def nearest(w, cells, idx):
        m = _agreement(word, idx, w, depth)
        base = np.where(m >= depth, 0.0, 2.0 ** -m.astype(float))
        out = []
        for _, j in cells:
            d = np.abs(fibers[idx] - (j + 0.5) / grid.G) % 1.0
            out.append(float(np.min(np.maximum(base, np.minimum(d, 1.0 - d)))))
        return out

    for w, cells in sorted(by_cyl.items()):
        code = 0
        for s in w:
            code = code * grid.alphabet + s
        idx = everyone[codes == code]
        best = nearest(w, cells, idx) if len(idx) else [math.inf] * len(cells)
        if max(best) > outside_floor:
            best = [min(a, b) for a, b in zip(best, nearest(w, cells, everyone))]
        worst = max(worst, max(best))
    return worst


@dataclass(frozen=True)
class MassBound:
    bound: Fraction
    radius: float
    measured: Fraction

    @property
    def holds(self) -> bool:
        return self.measured >= self.bound


def mass_bound_value(stages: Sequence, n: int) -> tuple[Fraction, float]:
    """(prod_{k=n}^{N-1} kappa_k / period(X_n), sum_{k=n}^{N} gamma_k) for stages 1..N."""
    N = len(stages)
    if not 1 <= n <= N:
        raise ValueError(f"n must lie in 1..{N}")
    prod = Fraction(1)
    for k in range(n, N):
        kap = stages[k - 1].kappa_exact
        prod *= kap if kap is not None else Fraction(stages[k - 1].kappa)
    r = math.fsum(stages[k - 1].gamma for k in range(n, N + 1))
    return prod / stages[n - 1].period, r


class BallCounter:
    """Exact closed-ball masses for the uniform measure on one orbit."""

    def __init__(self, orbit: PeriodicOrbit, depth: int = TRUNCATION_DEPTH):
        self.orbit = orbit
        self.depth = depth
        self._groups: dict[int, dict] = {}

    def _index(self, M: int) -> dict:
        if M not in self._groups:
            w = self.orbit.word.symbols
            P = len(w)
            ext = w * (M // P + 2)
            g: dict = {}
            for i in range(P):
                g.setdefault(ext[i:i + M], []).append(i)
            self._groups[M] = g
        return self._groups[M]

    def mass(self, x: Point, r: float) -> Fraction:
        """mu(closed ball of radius r around x), as a fraction of atoms."""
        P = self.orbit.period
        if r >= 1.0:
            return Fraction(1)
        # base distance 2^-m <= r needs m >= M; full agreement counts as 0
        M = min(self.depth, max(0, math.ceil(-math.log2(r) - 1e-12)))
        while M > 0 and 2.0 ** -(M - 1) <= r:
            M -= 1
        while M < self.depth and 2.0 ** -M > r:
            M += 1
        key = x.base(M)
        idx = self._index(M).get(key, [])
        fibers = self.orbit.fibers
        prec = max(self.orbit.prec, 53)
        rr = mpfr(r, prec) if prec > 53 else r
        count = 0
        with gmpy2.context(precision=prec + 8):
            for i in idx:
                if circle_dist(fibers[i], x.fiber) <= rr:
                    count += 1
        return Fraction(count, P)


def mass_lower_bound(stages: Sequence, n: int, x: Point,
                     counter: BallCounter | None = None) -> MassBound:
    """Lower bound for the final measure of the r_n-ball around x, with its check."""
    bound, r = mass_bound_value(stages, n)
    final = _orbit_of(stages[-1])
    counter = counter or BallCounter(final)
    return MassBound(bound, r, counter.mass(x, r))

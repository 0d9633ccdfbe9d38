"""Independent reference computations used to derive frozen test values.

Nothing here imports the package's solvers: maps and derivatives are
re-typed with mpmath, fixed points come from a plain sign scan plus bisection,
and window certificates from brute-force subset enumeration.
"""
from __future__ import annotations

import itertools
import math
from fractions import Fraction

import mpmath as mp

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def g(s: int, y, beta=0.5, alpha=GOLDEN):
    """MODEL-A fiber map without the reduction mod 1 (a lift)."""
    if s == 0:
        return y - beta / (2 * mp.pi) * mp.sin(2 * mp.pi * y)
    if s == 1:
        return y + beta / (2 * mp.pi) * mp.sin(2 * mp.pi * y)
    return y + alpha


def dg(s: int, y, beta=0.5):
    if s == 0:
        return 1 - beta * mp.cos(2 * mp.pi * y)
    if s == 1:
        return 1 + beta * mp.cos(2 * mp.pi * y)
    return mp.mpf(1)


def lift_word(word, y, beta=0.5, alpha=GOLDEN):
    for s in word:
        y = g(s, y, beta, alpha)
    return y


def fixed_points(word, beta=0.5, alpha=GOLDEN, grid=10_000, dps=30):
    """Fibers y in [0,1) with g_w(y) = y mod 1, by sign scan and bisection."""
    with mp.workdps(dps):
        def disp(y):
            return lift_word(word, mp.mpf(y), beta, alpha) - y
        lo_k = int(mp.floor(min(disp(i / 64) for i in range(65)))) - 1
        hi_k = int(mp.ceil(max(disp(i / 64) for i in range(65)))) + 1
        roots = []
        ys = [mp.mpf(i) / grid for i in range(grid + 1)]
        ds = [disp(y) for y in ys]
        for k in range(lo_k, hi_k + 1):
            for i in range(grid):
                a, b = ds[i] - k, ds[i + 1] - k
                if a == 0:
                    roots.append(ys[i])
                elif a * b < 0:
                    lo, hi = ys[i], ys[i + 1]
                    for _ in range(120):
                        mid = (lo + hi) / 2
                        if (disp(mid) - k) * a > 0:
                            lo = mid
                        else:
                            hi = mid
                    roots.append((lo + hi) / 2)
        out = sorted({float(r % 1) for r in roots})
        return out


def orbit_fibers(word, y0, beta=0.5, alpha=GOLDEN):
    ys = [mp.mpf(y0)]
    for s in word[:-1]:
        ys.append(g(s, ys[-1], beta, alpha) % 1)
    return ys


def center_exponent(word, y0, beta=0.5, alpha=GOLDEN, dps=30):
    with mp.workdps(dps):
        ys = orbit_fibers(word, mp.mpf(y0), beta, alpha)
        return float(mp.fsum(mp.log(dg(s, y, beta)) for s, y in zip(word, ys)) / len(word))


def circle(a: float, b: float) -> float:
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


def metric(base_p, yp, base_q, yq, depth=64) -> float:
    """max(2^-m, circle distance) with m the first base mismatch below depth."""
    m = next((i for i in range(depth) if base_p(i) != base_q(i)), None)
    fd = circle(yp, yq)
    return fd if m is None else max(2.0 ** -m, fd)


def window_ok(xw, xf, yw, yf, j, a, gamma, depth=64) -> bool:
    px, py = len(xw), len(yw)
    for i in range(px):
        bj, ba = (j + i) % py, (a + i) % px
        d = metric(lambda t: yw[(bj + t) % py], float(yf[bj]),
                   lambda t: xw[(ba + t) % px], float(xf[ba]), depth)
        if not d < gamma:
            return False
    return True


def best_kappa(xw, xf, yw, yf, gamma) -> Fraction:
    """Largest number of disjoint valid windows, by trying every subset."""
    px, py = len(xw), len(yw)
    starts = [j for j in range(py)
              if any(window_ok(xw, xf, yw, yf, j, a, gamma) for a in range(px))]
    cells = {j: frozenset((j + i) % py for i in range(px)) for j in starts}
    best = 0
    for r in range(min(len(starts), py // px), 0, -1):
        if r <= best:
            break
        for combo in itertools.combinations(starts, r):
            used: set = set()
            ok = True
            for j in combo:
                if used & cells[j]:
                    ok = False
                    break
                used |= cells[j]
            if ok:
                best = r
                break
    return Fraction(best * px, py)

"""Seeded random orbit pairs (X, Y, gamma) with small periods."""
from __future__ import annotations

import random

from nonhyp.dynsys import periodic_orbit_from_word


def _orbits(system, word, cache):
    key = "".join(map(str, word))
    if key not in cache:
        cache[key] = periodic_orbit_from_word(system, key)
    return cache[key]


def orbit_pairs(system, count: int, seed: int = 2024, max_px: int = 4, max_py: int = 12):
    rng = random.Random(seed)
    cache: dict = {}
    out = []
    while len(out) < count:
        px = rng.randint(1, max_px)
        xw = [rng.choice((0, 0, 1, 1, 2)) for _ in range(px)]
        xs = _orbits(system, xw, cache)
        if not xs:
            continue
        if rng.random() < 0.75:
            # repeats of X plus a short tail, so that windows actually occur
            m = rng.randint(1, max_py // px)
            tail = [rng.randint(0, 2) for _ in range(rng.randint(0, max_py - m * px))]
            yw = (xw * m + tail)[:max_py]
        else:
            yw = [rng.randint(0, 2) for _ in range(rng.randint(px, max_py))]
        if len(yw) < px:
            continue
        ys = _orbits(system, yw, cache)
        if not ys:
            continue
        gamma = 10 ** rng.uniform(-3, 0.1)
        out.append((rng.choice(xs), rng.choice(ys), gamma))
    return out

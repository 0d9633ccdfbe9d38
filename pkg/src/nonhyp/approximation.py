"""Good-approximation certificates between periodic orbits.

Y approximates X with constants (gamma, kappa) when a set of disjoint
windows of Y, each one full period of X long, follows X point by point
within gamma, and the windows cover at least a kappa fraction of Y. Each
window is tied to X by an alignment offset, so every point of X has the
same number of preimages under the projection.
"""
from __future__ import annotations

import bisect
import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .dynsys import (TRUNCATION_DEPTH, PeriodicOrbit, SkewProductSystem,
                     circle_dist)


class MalformedCertificate(Exception):
    pass


@dataclass(frozen=True)
class ApproximationCertificate:
    gamma: float
    kappa: float
    windows: tuple[int, ...]
    alignments: tuple[int, ...]
    x_period: int
    y_period: int
    system_hash: str = ""
    max_distance: float | None = None

    @property
    def empty(self) -> bool:
        """True when no window was valid (the kappa = 0 signal)."""
        return not self.windows

    @property
    def kappa_exact(self) -> Fraction:
        return Fraction(len(self.windows) * self.x_period, self.y_period)

    def to_json(self) -> str:
        return json.dumps(certificate_record(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ApproximationCertificate":
        return certificate_from_record(json.loads(text))


def system_hash(system: SkewProductSystem) -> str:
    return hashlib.sha256(system.fingerprint().encode()).hexdigest()[:16]


def certificate_record(cert: ApproximationCertificate) -> dict:
    return {
        "gamma": cert.gamma,
        "kappa": cert.kappa,
        "windows": list(cert.windows),
        "alignments": list(cert.alignments),
        "x_period": cert.x_period,
        "y_period": cert.y_period,
        "system_hash": cert.system_hash,
    }


def certificate_from_record(rec: dict) -> ApproximationCertificate:
    try:
        return ApproximationCertificate(
            gamma=float(rec["gamma"]),
            kappa=float(rec["kappa"]),
            windows=tuple(int(j) for j in rec["windows"]),
            alignments=tuple(int(a) for a in rec["alignments"]),
            x_period=int(rec["x_period"]),
            y_period=int(rec["y_period"]),
            system_hash=str(rec.get("system_hash", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedCertificate(f"bad certificate record: {exc}") from exc


def _check_structure(X: PeriodicOrbit, Y: PeriodicOrbit, cert: ApproximationCertificate):
    px, py = X.period, Y.period
    if cert.x_period != px or cert.y_period != py:
        raise MalformedCertificate("certificate periods do not match the orbits")
    if py < px:
        raise MalformedCertificate("Y must be at least as long as X")
    if len(cert.windows) != len(cert.alignments):
        raise MalformedCertificate("one alignment per window is required")
    if not cert.gamma > 0:
        raise MalformedCertificate("gamma must be positive")
    covered = np.zeros(py, dtype=bool)
    for j, a in zip(cert.windows, cert.alignments):
        if not 0 <= j < py or not 0 <= a < px:
            raise MalformedCertificate(f"window ({j}, {a}) out of range")
        idx = (j + np.arange(px)) % py
        if covered[idx].any():
            raise MalformedCertificate(f"window at {j} overlaps another window")
        covered[idx] = True


def _lcp_matrix(ysyms: np.ndarray, j: int, xsyms: np.ndarray, a: int, depth: int) -> np.ndarray:
    """Base agreement length (capped at depth) of Y point j+i and X point a+i."""
    px, py = len(xsyms), len(ysyms)
    i = np.arange(px)[:, None]
    t = np.arange(depth)[None, :]
    eq = ysyms[(j + i + t) % py] == xsyms[(a + i + t) % px]
    full = eq.all(axis=1)
    first = np.argmin(eq, axis=1)
    return np.where(full, depth, first)


def window_distances(X: PeriodicOrbit, Y: PeriodicOrbit, j: int, a: int,
                     depth: int = TRUNCATION_DEPTH) -> list:
    """Metric distance between Y point j+i and X point a+i for i < period(X)."""
    xs = np.asarray(X.word.symbols)
    ys = np.asarray(Y.word.symbols)
    m = _lcp_matrix(ys, j, xs, a, depth)
    px, py = X.period, Y.period
    out = []
    for i in range(px):
        fd = circle_dist(Y.fibers[(j + i) % py], X.fibers[(a + i) % px])
        out.append(fd if m[i] >= depth else max(2.0 ** (-int(m[i])), fd))
    return out


def verify_certificate(system: SkewProductSystem, X: PeriodicOrbit, Y: PeriodicOrbit,
                       cert: ApproximationCertificate):
    """Return (ok, max distance) after re-checking every window point."""
    _check_structure(X, Y, cert)
    worst = 0.0
    ok = True
    for j, a in zip(cert.windows, cert.alignments):
        d = window_distances(X, Y, j, a, system.depth)
        w = max(d)
        if w > worst:
            worst = w
        if not w < cert.gamma:
            ok = False
    # both sides are correctly rounded quotients of the same integers
    if float(cert.kappa_exact) < cert.kappa:
        ok = False
    return ok, float(worst)


def _rolling_hashes(syms: np.ndarray, length: int, count: int) -> np.ndarray:
    """Hash of the cyclic block syms[i : i+length] for i < count."""
    n = len(syms)
    mod = (1 << 61) - 1
    base = 1_000_003
    ext = [int(syms[i % n]) + 1 for i in range(count + length)]
    pw = pow(base, length, mod)
    h = 0
    for c in ext[:length]:
        h = (h * base + c) % mod
    out = [h]
    for i in range(1, count):
        h = (h * base + ext[i + length - 1] - ext[i - 1] * pw) % mod
        out.append(h)
    return np.array(out, dtype=object)


def candidate_windows(X: PeriodicOrbit, Y: PeriodicOrbit) -> list[tuple[int, int]]:
    """(start, alignment) pairs where Y's symbols spell a rotation of X."""
    px, py = X.period, Y.period
    xs = np.asarray(X.word.symbols)
    ys = np.asarray(Y.word.symbols)
    hx = _rolling_hashes(xs, px, px)
    hy = _rolling_hashes(ys, px, py)
    table: dict = {}
    for a, h in enumerate(hx):
        table.setdefault(h, []).append(a)
    out = []
    for j, h in enumerate(hy):
        for a in table.get(h, ()):
            if np.array_equal(ys[(j + np.arange(px)) % py], xs[(a + np.arange(px)) % px]):
                out.append((j, a))
    return out


def valid_windows(system: SkewProductSystem, X: PeriodicOrbit, Y: PeriodicOrbit,
                  gamma) -> list[tuple[int, int, float]]:
    """All (start, alignment, sup distance) with sup distance < gamma."""
    out = []
    # a symbol mismatch costs distance 1, so only gamma > 1 admits other windows
    pairs = (candidate_windows(X, Y) if gamma <= 1
             else [(j, a) for j in range(Y.period) for a in range(X.period)])
    for j, a in pairs:
        d = window_distances(X, Y, j, a, system.depth)
        w = max(d)
        if w < gamma:
            out.append((j, a, w))
    return out


def select_windows(starts: Sequence[int], px: int, py: int) -> list[int]:
    """Largest set of pairwise disjoint length-px windows on the py-cycle.

    Some optimal selection contains a window starting within px of the first
    valid start s*, since any maximal selection meets the window at s*. For
    each such anchor the rest is interval scheduling on a line, where taking
    the earliest start that fits is optimal. Ties keep the earliest anchor.
    """
    S = sorted(set(starts))
    if not S:
        return []
    U = S + [s + py for s in S]
    s_star = S[0]
    anchors = [s for s in U if s_star - px < s < s_star + px]
    anchors += [s - py for s in S if s - py > s_star - px]
    best: list[int] = []
    for s0 in sorted(set(anchors)):
        chosen = [s0]
        t = s0 + px
        while True:
            i = bisect.bisect_left(U, t)
            if i >= len(U):
                break
            c = U[i]
            if c + px > s0 + py:
                break
            chosen.append(c)
            t = c + px
        if len(chosen) > len(best):
            best = chosen
    return sorted(c % py for c in best)


def best_certificate(system: SkewProductSystem, X: PeriodicOrbit, Y: PeriodicOrbit,
                     gamma) -> ApproximationCertificate:
    """Certificate with the most disjoint valid windows; kappa = 0 when none."""
    px, py = X.period, Y.period
    if py < px:
        raise ValueError("period of Y must be at least the period of X")
    valid = valid_windows(system, X, Y, gamma)
    align: dict[int, tuple[int, float]] = {}
    for j, a, w in valid:
        if j not in align or a < align[j][0]:
            align[j] = (a, w)
    chosen = select_windows(list(align), px, py)
    mx = max((align[j][1] for j in chosen), default=None)
    kappa = len(chosen) * px / py
    return ApproximationCertificate(
        gamma=float(gamma), kappa=kappa, windows=tuple(chosen),
        alignments=tuple(align[j][0] for j in chosen), x_period=px, y_period=py,
        system_hash=system_hash(system),
        max_distance=None if mx is None else float(mx))


def exhaustive_kappa(system: SkewProductSystem, X: PeriodicOrbit, Y: PeriodicOrbit,
                     gamma) -> Fraction:
    """Optimum over all window-based sets by brute force (small periods only)."""
    px, py = X.period, Y.period
    wins = []
    for j in range(py):
        for a in range(px):
            d = window_distances(X, Y, j, a, system.depth)
            if max(d) < gamma:
                wins.append(frozenset((j + i) % py for i in range(px)))
    best = 0

    def dfs(k, used, count):
        nonlocal best
        if count + (len(wins) - k) <= best:
            return
        if k == len(wins):
            best = max(best, count)
            return
        if not (wins[k] & used):
            dfs(k + 1, used | wins[k], count + 1)
        dfs(k + 1, used, count)

    dfs(0, frozenset(), 0)
    return Fraction(best * px, py)


@dataclass
class StageCheck:
    stage: int
    kappa_required: float
    kappa_ok: bool | None
    vacuous: bool
    gamma_bound: float
    gamma_ok: bool
    ratio: float | None
    ratio_ok: bool | None
    tail_radius: float


@dataclass
class SequenceHypothesisReport:
    """Per-stage checks plus the finite-horizon proxies for sum and product.

    The sum of gamma and the product of kappa over an infinite sequence cannot
    be certified from finitely many stages; `gamma_sum_ok` and `kappa_product_ok`
    only compare partial sums and products with the configured budgets.
    """

    gammas: list[float]
    kappas: list[float | None]
    ds: list[float]
    chis: list[float]
    C: float
    xi: float
    gamma_budget: float
    product_floor: float
    checks: list[StageCheck] = field(default_factory=list)
    gamma_sum: float = 0.0
    kappa_product: float = 1.0
    gamma_sum_ok: bool = True
    kappa_product_ok: bool = True
    horizon_label: str = "finite-horizon proxies"

    @property
    def kappa_ok(self) -> bool:
        return all(c.kappa_ok is not False for c in self.checks)

    @property
    def gamma_ok(self) -> bool:
        return all(c.gamma_ok for c in self.checks)

    @property
    def ratio_ok(self) -> bool:
        return all(c.ratio_ok is not False for c in self.checks)

    @property
    def all_ok(self) -> bool:
        return (self.kappa_ok and self.gamma_ok and self.ratio_ok
                and self.gamma_sum_ok and self.kappa_product_ok)

    @property
    def tails(self) -> list[float]:
        return [c.tail_radius for c in self.checks]

    def to_dict(self) -> dict:
        return {
            "label": self.horizon_label,
            "C": self.C,
            "xi": self.xi,
            "gamma_budget": self.gamma_budget,
            "product_floor": self.product_floor,
            "gamma_sum": self.gamma_sum,
            "kappa_product": self.kappa_product,
            "gamma_sum_ok": self.gamma_sum_ok,
            "kappa_product_ok": self.kappa_product_ok,
            "kappa_ok": self.kappa_ok,
            "gamma_ok": self.gamma_ok,
            "ratio_ok": self.ratio_ok,
            "all_ok": self.all_ok,
            "stages": [c.__dict__ for c in self.checks],
        }


def gamma_bound(ds: Sequence[float], n: int) -> float:
    """min_{i<=n} d_i / (3 * 2^n), stages counted from 1."""
    return min(ds[:n]) / (3.0 * 2.0 ** n)


def required_kappa(chi: float, C: float) -> float:
    return 1.0 - C * abs(chi)


def check_sequence_conditions(stages, C: float, xi: float, gamma_budget: float = math.inf,
                              product_floor: float = 0.0) -> SequenceHypothesisReport:
    """Re-check the per-stage inequalities from stored numbers.

    `stages` are records with attributes chi, gamma, kappa and d for stages
    1, 2, ...; kappa of stage n is the coverage of stage n by stage n+1 and is
    None on the last stage.
    """
    stages = list(stages)
    if not stages:
        raise ValueError("at least one stage is required")
    chis = [float(s.chi) for s in stages]
    gammas = [float(s.gamma) for s in stages]
    kappas = [None if s.kappa is None else float(s.kappa) for s in stages]
    ds = [float(s.d) for s in stages]
    rep = SequenceHypothesisReport(gammas, kappas, ds, chis, C, xi, gamma_budget, product_floor)
    n_st = len(stages)
    tails = [math.fsum(gammas[i:]) for i in range(n_st)]
    for i in range(n_st):
        n = i + 1
        req = required_kappa(chis[i], C)
        vac = req <= 0
        k = kappas[i]
        k_ok = None if k is None else (True if vac else k >= req)
        gb = gamma_bound(ds, n)
        ratio = ratio_ok = None
        if i + 1 < n_st:
            ratio = abs(chis[i + 1]) / abs(chis[i]) if chis[i] != 0 else math.inf
            ratio_ok = chis[i + 1] < 0 and abs(chis[i + 1]) < xi * abs(chis[i])
        rep.checks.append(StageCheck(n, req, k_ok, vac, gb, gammas[i] < gb, ratio,
                                     ratio_ok, tails[i]))
    rep.gamma_sum = math.fsum(gammas)
    prod = 1.0
    for k in kappas:
        if k is not None:
            prod *= k
    rep.kappa_product = prod
    rep.gamma_sum_ok = rep.gamma_sum <= gamma_budget
    rep.kappa_product_ok = prod >= product_floor
    return rep

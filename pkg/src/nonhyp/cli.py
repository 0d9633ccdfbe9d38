"""Command line entry point: run a construction, re-check a stage table, plot it.

Config files are INI style (sections of key = value lines):

    [system]
    alphabet = 3
    family = model-a
    beta = 0.5
    alpha = golden

    [run]
    seed = 0
    N = 8

    [params]
    C = auto
    xi = 0.5

    [grid]
    L = 3
    G = 16

    [test]
    L = 4
    K = 4

    [output]
    dir = out
    formats = csv, json, svg

Every key is optional. Exit codes: 0 success, 1 config or input error,
2 when the search ran out of candidates (completed stages are still written).
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .analysis import GridPartition, density_radius, occupied_cells, topological_limit_estimate
from .approximation import check_sequence_conditions
from .builder import (PreconditionError, SearchExhausted, StageParameters, StageRecord,
                      default_C, run_construction, seed_orbit)
from .dynsys import SkewProductSystem, Word, model_a

log = logging.getLogger("nonhyp")

OUTPUT_DIR_ENV = "NONHYP_OUTPUT_DIR"
CSV_COLUMNS = ("stage", "period", "chi", "gamma", "kappa", "d_min", "epsilon",
               "discrepancy_prev", "multiplier", "plan_m", "plan_correction")
FORMATS = ("csv", "json", "svg")
FAMILIES = ("model-a",)
EXIT_OK, EXIT_CONFIG, EXIT_EXHAUSTED = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


class MalformedCsv(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    alphabet: int = 3
    family: str = "model-a"
    beta: float = 0.5
    alpha: float = (math.sqrt(5.0) - 1.0) / 2.0
    seed: str = "0"
    N: int = 8
    params: StageParameters = field(default_factory=StageParameters)
    grid_L: int = 3
    grid_G: int = 16
    output_dir: str = "out"
    formats: tuple[str, ...] = FORMATS

    def system(self) -> SkewProductSystem:
        return model_a(self.beta, self.alpha)

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_DIR_ENV) or self.output_dir)


# ---------------------------------------------------------------- config

def _num(key: str, raw: str, kind=float):
    try:
        v = kind(raw)
    except ValueError:
        raise ConfigError(key, f"expected {kind.__name__}, got {raw!r}") from None
    if kind is float and not math.isfinite(v):
        raise ConfigError(key, "must be finite")
    return v


def _open_interval(key: str, v: float):
    if not 0 < v < 1:
        raise ConfigError(key, f"must lie in (0, 1), got {v}")
    return v


_PARAM_KINDS = {f.name: f.type for f in fields(StageParameters)}


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a config; raises ConfigError naming the offending key."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep "N", "L", "G" and "C" as written
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).splitlines()[0]) from None
    known = {"system", "run", "params", "grid", "test", "output"}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(sec, "unknown section")
    kw: dict = {}
    pkw: dict = {}

    def take(sec, allowed):
        if not cp.has_section(sec):
            return {}
        items = dict(cp.items(sec))
        for k in items:
            if k not in allowed:
                raise ConfigError(f"{sec}.{k}", "unknown key")
        return items

    s = take("system", {"alphabet", "family", "beta", "alpha"})
    if "alphabet" in s:
        kw["alphabet"] = _num("system.alphabet", s["alphabet"], int)
        if kw["alphabet"] != 3:
            raise ConfigError("system.alphabet", "the model-a family has 3 symbols")
    if "family" in s:
        fam = s["family"].strip().lower()
        if fam not in FAMILIES:
            raise ConfigError("system.family", f"unknown family {s['family']!r}")
        kw["family"] = fam
    if "beta" in s:
        kw["beta"] = _open_interval("system.beta", _num("system.beta", s["beta"]))
    if "alpha" in s:
        a = s["alpha"].strip().lower()
        kw["alpha"] = ExperimentConfig.alpha if a == "golden" else _num("system.alpha", a)
        if not 0 < kw["alpha"] < 1:
            raise ConfigError("system.alpha", "must lie in (0, 1)")

    r = take("run", {"seed", "N"})
    if "seed" in r:
        try:
            Word.parse(r["seed"], kw.get("alphabet", 3))
        except ValueError as exc:
            raise ConfigError("run.seed", str(exc)) from None
        if not r["seed"].strip():
            raise ConfigError("run.seed", "empty word")
        kw["seed"] = r["seed"].strip()
    if "N" in r:
        kw["N"] = _num("run.N", r["N"], int)
        if kw["N"] < 1:
            raise ConfigError("run.N", f"must be at least 1, got {kw['N']}")

    p = take("params", set(_PARAM_KINDS) - {"test_L", "test_K"})
    for k, raw in p.items():
        key = f"params.{k}"
        if k == "C":
            if raw.strip().lower() == "auto":
                pkw["C"] = None
            else:
                pkw["C"] = _num(key, raw)
            continue
        kind = int if _PARAM_KINDS[k] == "int" else float
        pkw[k] = _num(key, raw, kind)
    if "xi" in pkw:
        _open_interval("params.xi", pkw["xi"])

    g = take("grid", {"L", "G"})
    if "L" in g:
        kw["grid_L"] = _num("grid.L", g["L"], int)
        if kw["grid_L"] < 0:
            raise ConfigError("grid.L", "must be non-negative")
    if "G" in g:
        kw["grid_G"] = _num("grid.G", g["G"], int)
        if kw["grid_G"] < 1:
            raise ConfigError("grid.G", "must be positive")

    t = take("test", {"L", "K"})
    if "L" in t:
        pkw["test_L"] = _num("test.L", t["L"], int)
    if "K" in t:
        pkw["test_K"] = _num("test.K", t["K"], int)
    for k in ("test_L", "test_K"):
        if k in pkw and pkw[k] < 1:
            raise ConfigError(k.replace("_", "."), "must be at least 1")

    o = take("output", {"dir", "formats"})
    if "dir" in o:
        kw["output_dir"] = o["dir"].strip()
    if "formats" in o:
        fm = tuple(x.strip().lower() for x in o["formats"].split(",") if x.strip())
        bad = [x for x in fm if x not in FORMATS]
        if bad:
            raise ConfigError("output.formats", f"unknown format {bad[0]!r}")
        if "csv" not in fm:
            fm = ("csv",) + fm
        kw["formats"] = fm

    try:
        params = StageParameters(**pkw)
    except (ValueError, TypeError) as exc:
        raise ConfigError("params", str(exc)) from None
    cfg = ExperimentConfig(params=params, **kw)
    # C must beat 32/nu for the seed's exponent; the seed orbit is cheap to find
    if params.C is not None:
        nu = abs(seed_orbit(cfg.system(), cfg.seed).chi)
        if not params.C > 32.0 / nu:
            raise ConfigError("params.C", f"must exceed 32/nu = {32.0 / nu:.6g}")
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


# ---------------------------------------------------------------- CSV

def _f(x) -> str:
    return "" if x is None else repr(float(x))


def stage_row(rec: StageRecord) -> list[str]:
    plan = rec.plan
    corr = "" if plan is None or plan.correction is None else str(plan.correction)
    return [str(rec.n), str(rec.period), _f(rec.chi), _f(rec.gamma), _f(rec.kappa),
            _f(rec.d), _f(rec.epsilon), _f(rec.discrepancy_prev), rec.multiplier,
            "" if plan is None else str(plan.m), corr]


@dataclass(frozen=True)
class CsvStage:
    """A stage as re-read from stages.csv."""

    stage: int
    period: int
    chi: float
    gamma: float
    kappa: float | None
    d: float
    epsilon: float
    discrepancy_prev: float | None
    multiplier: str
    plan_m: int | None
    plan_correction: str


def read_stages_csv(text: str) -> list[CsvStage]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise MalformedCsv("empty file")
    if tuple(rows[0]) != CSV_COLUMNS:
        raise MalformedCsv(f"header must be {','.join(CSV_COLUMNS)}")
    if len(rows) == 1:
        raise MalformedCsv("no stage rows")
    opt = lambda s, kind: None if s == "" else kind(s)  # noqa: E731
    out = []
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(CSV_COLUMNS):
            raise MalformedCsv(f"line {i}: expected {len(CSV_COLUMNS)} fields, got {len(r)}")
        try:
            out.append(CsvStage(int(r[0]), int(r[1]), float(r[2]), float(r[3]),
                                opt(r[4], float), float(r[5]), float(r[6]), opt(r[7], float),
                                r[8], opt(r[9], int), r[10]))
        except ValueError as exc:
            raise MalformedCsv(f"line {i}: {exc}") from None
        if out[-1].stage != len(out):
            raise MalformedCsv(f"line {i}: stages must be numbered 1, 2, ...")
    return out


@dataclass(frozen=True)
class _CheckStage:
    chi: float
    gamma: float
    kappa: float | None
    d: float


def check_stages(stages: list[CsvStage], xi: float = 0.5, C: float | None = None):
    """Re-verify the stage inequalities from table data alone.

    Returns (report, problems) where problems lists structural violations
    (period bookkeeping) that the hypothesis report does not cover.
    """
    nu = abs(stages[0].chi)
    C = default_C(nu) if C is None else C
    rep = check_sequence_conditions([_CheckStage(s.chi, s.gamma, s.kappa, s.d) for s in stages],
                                    C, xi)
    problems = []
    for prev, cur in zip(stages, stages[1:]):
        if cur.plan_m is None:
            problems.append(f"stage {cur.stage}: missing plan")
            continue
        if cur.period != cur.plan_m * prev.period + len(cur.plan_correction):
            problems.append(f"stage {cur.stage}: period {cur.period} does not match the plan")
        if cur.period <= prev.period:
            problems.append(f"stage {cur.stage}: period does not grow")
    if stages[-1].kappa is not None:
        problems.append(f"stage {stages[-1].stage}: last stage cannot have kappa")
    for s in stages[:-1]:
        if s.kappa is None:
            problems.append(f"stage {s.stage}: kappa missing")
    return rep, problems


# ---------------------------------------------------------------- SVG

def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_svg(stages: list[CsvStage]) -> str:
    """Two panels: log10 |chi_n| and the discrepancy trace, against n."""
    if not stages:
        raise MalformedCsv("no stage rows")
    W, H, pad, gap = 640, 300, 48, 40
    pw = (W - 2 * pad - gap) / 2
    ph = H - 2 * pad
    ns = [s.stage for s in stages]
    panels = [
        ("log10 |chi_n|", [(s.stage, math.log10(abs(s.chi))) for s in stages if s.chi != 0]),
        ("discrepancy(mu_n-1, mu_n)", [(s.stage, s.discrepancy_prev) for s in stages
                                       if s.discrepancy_prev is not None]),
    ]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
           f'<rect width="{W}" height="{H}" fill="white"/>']
    nlo, nhi = min(ns), max(ns)
    for k, (title, pts) in enumerate(panels):
        x0 = pad + k * (pw + gap)
        y0 = pad
        out.append(f'<g id="panel{k}">')
        out.append(f'<rect x="{_fmt(x0)}" y="{y0}" width="{_fmt(pw)}" height="{ph}" '
                   f'fill="none" stroke="black"/>')
        out.append(f'<text x="{_fmt(x0 + pw / 2)}" y="{y0 - 10}" text-anchor="middle">{title}</text>')
        out.append(f'<text x="{_fmt(x0 + pw / 2)}" y="{y0 + ph + 30}" text-anchor="middle">stage n</text>')
        if pts:
            vals = [v for _, v in pts]
            lo, hi = min(vals), max(vals)
            if hi == lo:
                lo, hi = lo - 0.5, hi + 0.5
            sx = lambda n: x0 + (0.5 if nhi == nlo else (n - nlo) / (nhi - nlo)) * pw  # noqa: E731
            sy = lambda v: y0 + ph - (v - lo) / (hi - lo) * ph  # noqa: E731
            for v, anchor in ((lo, y0 + ph), (hi, y0)):
                out.append(f'<text x="{_fmt(x0 - 4)}" y="{_fmt(anchor + 4)}" '
                           f'text-anchor="end">{v:.3g}</text>')
            xy = " ".join(f"{_fmt(sx(n))},{_fmt(sy(v))}" for n, v in pts)
            if len(pts) > 1:
                out.append(f'<polyline points="{xy}" fill="none" stroke="steelblue"/>')
            for n, v in pts:
                out.append(f'<circle cx="{_fmt(sx(n))}" cy="{_fmt(sy(v))}" r="3" '
                           f'fill="steelblue" data-n="{n}" data-v="{v!r}"/>')
        for n in ns:
            xn = x0 + (0.5 if nhi == nlo else (n - nlo) / (nhi - nlo)) * pw
            out.append(f'<text x="{_fmt(xn)}" y="{y0 + ph + 14}" text-anchor="middle">{n}</text>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- run

def stage_dict(rec: StageRecord) -> dict:
    return {
        "stage": rec.n, "period": rec.period, "chi": rec.chi, "gamma": rec.gamma,
        "kappa": rec.kappa,
        "kappa_exact": None if rec.kappa_exact is None else str(rec.kappa_exact),
        "d_min": rec.d, "epsilon": rec.epsilon, "discrepancy_prev": rec.discrepancy_prev,
        "log_multiplier": rec.log_multiplier, "multiplier": rec.multiplier,
        "sensitivity": rec.sensitivity,
        "plan_m": None if rec.plan is None else rec.plan.m,
    }


def support_summary(stages: list[StageRecord], cfg: ExperimentConfig) -> tuple[dict, str]:
    grid = GridPartition(cfg.grid_L, cfg.grid_G)
    est = topological_limit_estimate(stages, grid, 1)
    final = stages[-1].orbit
    atoms = occupied_cells(final, grid)
    rad = density_radius(final, est)
    summary = {
        "grid_L": grid.L, "grid_G": grid.G, "cells_total": len(grid), "k": est.k,
        "cells_occupied": len(est), "density_radius": rad,
        "epsilon_final": stages[-1].epsilon, "cell_diameter": grid.diameter,
        "every_cell_has_atom": all(c in atoms for c in est.cells),
    }
    return summary, est.to_csv()


def run_experiment(cfg: ExperimentConfig) -> int:
    return execute(cfg)[0]


def execute(cfg: ExperimentConfig):
    """Run and write artifacts; returns (exit status, ConstructionResult or None)."""
    outdir = cfg.resolved_output_dir()
    outdir.mkdir(parents=True, exist_ok=True)
    system = cfg.system()
    try:
        seed = seed_orbit(system, cfg.seed)
    except PreconditionError as exc:
        log.error("config error: run.seed: %s", exc)
        return EXIT_CONFIG, None
    csv_path = outdir / "stages.csv"
    with open(csv_path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        fh.flush()

        def on_stage(rec):
            wr.writerow(stage_row(rec))
            fh.flush()

        try:
            res = run_construction(system, seed, cfg.params, cfg.N,
                                   log=log.info, on_stage=on_stage)
            status = EXIT_OK
        except PreconditionError as exc:
            log.error("config error: run.seed: %s", exc)
            return EXIT_CONFIG, None
        except SearchExhausted as exc:
            log.error("search exhausted: %s", exc)
            res = exc.partial
            status = EXIT_EXHAUSTED
    if "json" in cfg.formats:
        summary, support_csv = support_summary(res.stages, cfg)
        (outdir / "support.csv").write_text(support_csv)
        report = {
            "complete": res.complete, "failure": res.failure, "N": cfg.N,
            "C": res.C, "config": _config_dict(cfg),
            "hypotheses": res.report.to_dict(),
            "stages": [stage_dict(r) for r in res.stages],
            "discrepancies": res.discrepancies, "support": summary,
        }
        (outdir / "report.json").write_text(json.dumps(report, indent=1) + "\n")
    if "svg" in cfg.formats:
        stages = read_stages_csv(csv_path.read_text())
        (outdir / "convergence.svg").write_text(render_svg(stages))
    log.info("wrote %s", outdir)
    return status, res


def _config_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["formats"] = list(cfg.formats)
    return d


# ---------------------------------------------------------------- main

def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run_experiment(cfg)


def _read_csv_arg(path) -> list[CsvStage]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MalformedCsv(f"cannot read {path}: {exc.strerror}") from None
    return read_stages_csv(text)


def _cmd_check(args) -> int:
    try:
        stages = _read_csv_arg(args.csv)
    except MalformedCsv as exc:
        print(f"malformed csv: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rep, problems = check_stages(stages, args.xi, args.C)
    for c in rep.checks:
        print(f"stage {c.stage}: ratio_ok={c.ratio_ok} gamma_ok={c.gamma_ok} "
              f"kappa_ok={c.kappa_ok}{' (vacuous)' if c.vacuous else ''}")
    for p in problems:
        print(p)
    ok = rep.all_ok and not problems
    print("all inequalities hold" if ok else "violations found")
    return EXIT_OK if ok else EXIT_CONFIG


def _cmd_render(args) -> int:
    try:
        stages = _read_csv_arg(args.csv)
    except MalformedCsv as exc:
        print(f"malformed csv: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.output) if args.output else Path(args.csv).with_name("convergence.svg")
    if not args.output and os.environ.get(OUTPUT_DIR_ENV):
        out = Path(os.environ[OUTPUT_DIR_ENV]) / "convergence.svg"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_svg(stages))
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nonhyp", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run a construction from a config file")
    p.add_argument("config")
    p.set_defaults(func=_cmd_run)
    p = sub.add_parser("check", help="re-verify the stage inequalities in a stages.csv")
    p.add_argument("csv")
    p.add_argument("--xi", type=float, default=0.5)
    p.add_argument("--C", type=float, default=None, help="default: smallest integer above 32/nu")
    p.set_defaults(func=_cmd_check)
    p = sub.add_parser("render", help="plot a stages.csv as convergence.svg")
    p.add_argument("csv")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_render)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command line front end: ``procdisc <task> --config <path> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 solver failure.
"""

from __future__ import annotations

import argparse
import io
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .channels import (amplitude_damping, cpf_ensemble, cpf_factorization, memory_ensemble,
                       multishot, random_process)
from .combs import Ensemble, is_cptp
from .config import TASKS, ConfigError, RunConfig, parse_config
from .lower import (bayes_lower_bound, choi_state_lower_bound, nonadaptive_binary,
                    pgm_choi_tensor, ultimate_success)
from .sdp import (SdpFailure, SdpSettings, SdpSizeError, add_solve_listener, export_sdpa,
                  remove_solve_listener)
from .strategy import build_tester_sdp
from .upper import (PartitionSpec, tensor_factor_bound, upper_bound_1, upper_bound_2,
                    upper_bound_partition)

CONSISTENCY_TOL = 1e-6
LOWER = ("choistate", "bayes", "pgm", "nonadaptive", "exact")
UPPER = ("exact", "ub2", "ub1", "ub1prime", "partition")


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


# -- ensembles ----------------------------------------------------------------

def _q_pair(cfg: RunConfig) -> tuple[float, float]:
    q_T = cfg.get("ensemble.q_T")
    q_B = cfg.get("ensemble.q_B")
    dq = cfg.get("ensemble.dq")
    if dq is not None:
        q_B = q_T + dq
    return q_B, q_T


def build_ensemble(cfg: RunConfig) -> Ensemble:
    fam, M, T = cfg.family, cfg.get("ensemble.M"), cfg.get("ensemble.T")
    priors = cfg.get("ensemble.priors")
    if fam == "cpf":
        q_B, q_T = _q_pair(cfg)
        e = cpf_ensemble(M, q_B, q_T, T)
        procs = e.processes
    elif fam == "memory":
        procs = memory_ensemble(cfg.get("ensemble.nu0"), cfg.get("ensemble.dnu"),
                              cfg.get("ensemble.p_c"), cfg.get("ensemble.n"), M).processes
    elif fam == "ad":
        q_B, q_T = _q_pair(cfg)
        procs = [multishot(amplitude_damping(q), T) for q in (q_B, q_T)]
    elif fam == "identical":
        procs = [multishot(amplitude_damping(cfg.get("ensemble.q")), T) for _ in range(M)]
    else:
        seed = cfg.get("ensemble.seed")
        procs = [random_process(seed * 1000 + m, T) for m in range(M)]
    return Ensemble(procs, priors)


def _memoryless(e: Ensemble) -> bool:
    return all(not any(p.memory[t] for t in range(e.T - 1)) for p in e.processes)


def check_applicable(cfg: RunConfig, e: Ensemble) -> None:
    """Reject bounds that cannot be computed for this ensemble, before any solve."""
    cap = cfg.get("limits.max_order")
    order = e.layout.order
    for b in cfg.bounds:
        if b in ("exact", "choistate") and order > cap:
            raise ConfigError(
                f"bound {b!r}: the exact tester SDP grows with the full comb order "
                f"(here {order}, product of all wire dimensions) and the cap is {cap}; "
                f"raise limits.max_order to force it")
        if b in ("pgm", "ub1prime") and not _memoryless(e):
            raise ConfigError(f"bound {b!r} needs memoryless processes")
        if b == "nonadaptive":
            if e.M != 2 or not _memoryless(e):
                raise ConfigError("bound 'nonadaptive' needs two memoryless processes")
            for p in e.processes:
                if any(not np.allclose(s.matrix, p.steps[0].matrix, atol=1e-14) for s in p.steps):
                    raise ConfigError("bound 'nonadaptive' needs the same channel at every step")
            if p.steps[0].op.dim ** e.T > max(cap, 64):
                raise ConfigError(f"bound 'nonadaptive': tensor channel order exceeds cap {cap}")
        if b == "partition":
            try:
                _partition(cfg).check(e.T)
                _partition(cfg).weights(e.priors)
            except ValueError as exc:
                raise ConfigError(f"key 'partition.breakpoints': {exc}") from None


def _partition(cfg: RunConfig) -> PartitionSpec:
    return PartitionSpec(tuple(cfg.get("partition.breakpoints")), cfg.get("partition.allocation"))


def _factorization(cfg: RunConfig, e: Ensemble):
    if cfg.family == "cpf":
        q_B, q_T = _q_pair(cfg)
        return cpf_factorization(e.M, q_B, q_T, e.T)
    return [[[p.steps[t]] for t in range(e.T)] for p in e.processes]


def compute_bound(name: str, cfg: RunConfig, e: Ensemble, settings: SdpSettings,
                  cache: dict) -> float:
    cap = cfg.get("limits.max_order")
    if name == "ub1":
        return float(upper_bound_1(e, settings, cache))
    if name == "ub2":
        return float(upper_bound_2(e, settings, cache))
    if name == "partition":
        return float(upper_bound_partition(e, _partition(cfg), settings, cache))
    if name == "ub1prime":
        return float(tensor_factor_bound(e, _factorization(cfg, e), settings=settings))
    if name == "exact":
        return ultimate_success(e, settings, cap)
    if name == "choistate":
        return choi_state_lower_bound(e, settings, cap)
    if name == "bayes":
        return bayes_lower_bound(e, settings)[0]
    if name == "pgm":
        return pgm_choi_tensor(e)
    if name == "nonadaptive":
        s1, s2 = (p.steps[0] for p in e.processes)
        return nonadaptive_binary(s1, s2, e.T, settings, max(cap, 64))
    raise ConfigError(f"unknown bound {name!r}")


# -- reports ------------------------------------------------------------------

@dataclass
class BoundResult:
    name: str
    value: float
    status: str  # ok | failed
    seconds: float
    residuals: dict = field(default_factory=dict)
    message: str = ""


@dataclass
class BoundsReport:
    parameter: str
    point: float | None
    results: list[BoundResult]
    metadata: dict
    version: str
    violations: list[str] = field(default_factory=list)

    @property
    def consistent(self) -> bool:
        return not self.violations

    @property
    def failed(self) -> bool:
        return any(r.status != "ok" for r in self.results)

    def values(self) -> dict[str, float]:
        return {r.name: r.value for r in self.results if r.status == "ok"}


def consistency_violations(values: dict[str, float], tol: float = CONSISTENCY_TOL) -> list[str]:
    out = []
    for name, v in values.items():
        if not -tol <= v <= 1 + tol:
            out.append(f"{name}={v:.9g} outside [0, 1]")
    pairs = [(lo, hi) for lo in LOWER for hi in UPPER if lo != hi]
    pairs += [("ub2", "ub1"), ("ub1", "ub1prime")]
    for lo, hi in pairs:
        if lo in values and hi in values and values[lo] > values[hi] + tol:
            out.append(f"{lo}={values[lo]:.9g} > {hi}={values[hi]:.9g}")
    return out


class _Recorder:
    """Collects the worst residuals over every SDP solved while active."""

    def __init__(self):
        self.count = 0
        self.worst = {"primal": 0.0, "dual": 0.0, "gap": 0.0}

    def __call__(self, sol):
        self.count += 1
        for k, v in sol.residuals.items():
            self.worst[k] = max(self.worst[k], float(v))


def evaluate(cfg: RunConfig, e: Ensemble | None = None) -> BoundsReport:
    e = build_ensemble(cfg) if e is None else e
    check_applicable(cfg, e)
    settings = SdpSettings(tol=cfg.get("solver.tol"), max_iter=cfg.get("solver.max_iter"))
    par = cfg.get("sweep.parameter")
    point = cfg.get(f"ensemble.{par}") if par else None
    cache: dict = {}
    results = []
    for name in cfg.bounds:
        rec = _Recorder()
        add_solve_listener(rec)
        t0 = time.perf_counter()
        try:
            val = compute_bound(name, cfg, e, settings, cache)
            res = BoundResult(name, float(val), "ok", 0.0)
        except (SdpFailure, SdpSizeError) as exc:
            res = BoundResult(name, math.nan, "failed", 0.0, message=str(exc))
        finally:
            remove_solve_listener(rec)
        res.seconds = time.perf_counter() - t0
        res.residuals = dict(rec.worst, sdps=rec.count)
        results.append(res)
    meta = {"family": cfg.family, "M": e.M, "T": e.T, "priors": list(e.priors),
            "comb_order": e.layout.order}
    report = BoundsReport(par or "", point, results, meta, tool_version())
    report.violations = consistency_violations(report.values())
    return report


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else "%.12g" % v


def csv_text(reports: list[BoundsReport], first_column: str, first_values: list) -> str:
    names = [r.name for r in reports[0].results]
    header = [first_column] + names + [f"{n}_status" for n in names] + ["consistent"]
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for rep, first in zip(reports, first_values):
        row = [first if isinstance(first, str) else _fmt(first)]
        row += [_fmt(r.value) for r in rep.results]
        row += [r.status for r in rep.results]
        row.append("1" if rep.consistent else "0")
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def report_text(rep: BoundsReport) -> str:
    lines = [f"procdisc {rep.version}"]
    lines.append("ensemble: " + ", ".join(f"{k}={v}" for k, v in rep.metadata.items()))
    if rep.parameter:
        lines.append(f"{rep.parameter} = {_fmt(rep.point)}")
    for r in rep.results:
        res = r.residuals
        lines.append(f"  {r.name:<12s} {_fmt(r.value):>16s}  [{r.status}]  {r.seconds:8.2f} s  "
                     f"sdps={res.get('sdps', 0)} primal={res.get('primal', 0):.1e} "
                     f"dual={res.get('dual', 0):.1e} gap={res.get('gap', 0):.1e}")
        if r.message:
            lines.append(f"    failure: {r.message}")
    if rep.violations:
        lines.append("  CONSISTENCY FAILURE: " + "; ".join(rep.violations))
    else:
        lines.append("  consistency: ok")
    return "\n".join(lines) + "\n"


def _write(path: str, text: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _point_job(cfg: RunConfig, value: float) -> BoundsReport:
    return evaluate(cfg.with_values(**{f"ensemble.{cfg.get('sweep.parameter')}": value}))


# -- tasks --------------------------------------------------------------------

def run_validate(cfg: RunConfig, out) -> int:
    e = build_ensemble(cfg)
    print(f"ensemble: family={cfg.family} M={e.M} T={e.T} priors={list(e.priors)} "
          f"comb order={e.layout.order}", file=out)
    worst = 0.0
    for m, p in enumerate(e.processes):
        for t, step in enumerate(p.steps, start=1):
            chk = is_cptp(step, tol=1e-10)
            worst = max(worst, chk.residual)
            if not chk.ok:
                raise ConfigError(f"process {m + 1} step {t} is not CPTP (residual {chk.residual:.2e})")
    print(f"steps CPTP: max residual {worst:.2e}", file=out)
    check_applicable(cfg, e)
    print(f"bounds computable: {', '.join(cfg.bounds)}", file=out)
    return 0


def run_bounds(cfg: RunConfig, out, out_path: str | None) -> int:
    rep = evaluate(cfg)
    text = report_text(rep)
    csv = csv_text([rep], "ensemble", [cfg.family])
    out.write(text)
    if out_path:
        _write(out_path, csv)
        _write(str(Path(out_path).with_suffix(".txt")), text)
    else:
        out.write(csv)
    return 2 if rep.failed else 0


def run_sweep(cfg: RunConfig, out, out_path: str | None, jobs: int) -> int:
    points = cfg.sweep_points()
    par = cfg.get("sweep.parameter")
    # caps and applicability do not depend on the swept value
    check_applicable(cfg, build_ensemble(cfg.with_values(**{f"ensemble.{par}": points[0]})))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_point_job, [cfg] * len(points), points))
    else:
        reports = [_point_job(cfg, v) for v in points]
    for rep in reports:
        out.write(report_text(rep))
    csv = csv_text(reports, par, points)
    if out_path:
        _write(out_path, csv)
    else:
        out.write(csv)
    return 2 if any(r.failed for r in reports) else 0


def run_export(cfg: RunConfig, out, out_path: str | None) -> int:
    e = build_ensemble(cfg)
    path = out_path or "problem.dat-s"
    if cfg.get("export.problem") == "exact":
        cap = cfg.get("limits.max_order")
        if e.layout.order > cap:
            raise ConfigError(f"exact tester SDP has comb order {e.layout.order} > cap {cap}")
        problem = build_tester_sdp(e.chois(), e.priors, e.layout)
        what = "exact tester SDP"
    else:
        t = cfg.get("export.step")
        if not 1 <= t <= e.T:
            raise ConfigError(f"key 'export.step': step {t} outside 1..{e.T}")
        weights = list(e.priors) if t == e.T else [1.0] * e.M
        segs = [p.segment(t, t) for p in e.processes]
        problem = build_tester_sdp([c.matrix for c, _ in segs], weights, segs[0][1])
        what = f"dominating-comb SDP of step {t}"
    _write(path, export_sdpa(problem))
    print(f"wrote {what} to {path}", file=out)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="procdisc", description="Bounds for quantum process discrimination.")
    p.add_argument("task", choices=TASKS)
    p.add_argument("--config", help="configuration file (dotted key = value lines)")
    p.add_argument("--out", help="output path (CSV, or .dat-s for export-sdpa)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    p.add_argument("--tol", type=float, help="solver tolerance (overrides solver.tol)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key; repeatable")
    p.add_argument("--version", action="version", version=f"procdisc {tool_version()}")
    return p


def main(argv: list[str] | None = None, out=None) -> int:
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text() if args.config else ""
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    overrides = list(args.set)
    if args.tol is not None:
        overrides.append(f"solver.tol = {args.tol!r}")
    if args.jobs < 1:
        print("error: --jobs must be positive", file=sys.stderr)
        return 1
    try:
        cfg = parse_config(text, overrides, task=args.task)
        out_path = args.out or cfg.get("output.path")
        if cfg.task == "validate":
            return run_validate(cfg, out)
        if cfg.task == "bounds":
            return run_bounds(cfg, out, out_path)
        if cfg.task == "export-sdpa":
            return run_export(cfg, out, out_path)
        return run_sweep(cfg, out, out_path, args.jobs)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SdpFailure, SdpSizeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: invalid ensemble parameters: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

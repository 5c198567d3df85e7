"""Command-line front end: solve, sweep and verify, writing CSV tables.

Every CSV starts with a ``#`` comment row holding the sha256 of the resolved
configuration and the library version, followed by a header row.  Floats are
written with ``repr`` so outputs are byte-identical across runs.

Exit status: 0 on success, 1 when a requested check fails, 2 on invalid
input.  Errors are reported on stderr as a one-line JSON record.
"""

from __future__ import annotations

import argparse
import csv
import enum
import hashlib
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .dividend_solver import (BarrierProblem, C, default_vi_grid, derivative, dominance_scan, g, optimal_barrier,
                              value, vi_check)
from .errors import PeriodicBailoutError
from .levy_model import case_preset, load_presets, model_from_config, validate_model
from .simulator import SimConfig, simulate_paths, summarize, truncation_bound, write_path_log

# the dividend-opportunity rate standing in for continuous (classical) payout
LARGE_R_PROXY = 50.0
DEFAULT_BETA_GRID = tuple(round(1.0 + 0.01 * k, 2) for k in range(1, 1901))  # 1.01, 1.02, ..., 20
DEFAULT_R_GRID = (1e-4, 1e-3, 0.01, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0, LARGE_R_PROXY)


class UsageError(ValueError):
    pass


class FigureKind(enum.Enum):
    G_CURVE = "g_curve"
    VALUE_CURVES = "value_curves"
    BETA_SWEEP = "beta_sweep"
    R_SWEEP = "r_sweep"
    VI_REPORT = "vi_report"
    MC_REPORT = "mc_report"


@dataclass
class FigureSpec:
    kind: FigureKind
    grids: dict = field(default_factory=dict)
    output_path: Optional[str] = None

    def __post_init__(self):
        for name, grid in self.grids.items():
            grid = tuple(float(v) for v in grid)
            if not grid:
                raise UsageError(f"{name} grid is empty")
            if not all(math.isfinite(v) for v in grid):
                raise UsageError(f"{name} grid has non-finite entries")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise UsageError(f"{name} grid must be strictly increasing")
            self.grids[name] = grid


# -- config --------------------------------------------------------------------

def resolve_config(args) -> dict:
    if args.config and args.preset:
        raise UsageError("give either --config or --preset, not both")
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if "preset" in cfg:
            base = case_preset(cfg.pop("preset"))
            base.update(cfg)
            cfg = base
    else:
        cfg = case_preset(args.preset or "case1")
    ph = cfg.get("phase_type")
    if isinstance(ph, str):
        entry = load_presets()["phase_type"].get(ph)
        if entry is None:
            raise UsageError(f"unknown phase-type preset {ph!r}")
        cfg["phase_type"] = {"initial_law": entry["initial_law"], "subgenerator": entry["subgenerator"]}
    for key in ("q", "r", "beta"):
        if key not in cfg:
            raise UsageError(f"config lacks {key!r}")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def make_problem(cfg: dict, **override) -> BarrierProblem:
    params = {"q": cfg["q"], "r": cfg["r"], "beta": cfg["beta"], **override}
    return BarrierProblem(model_from_config(cfg), float(params["q"]), float(params["r"]), float(params["beta"]))


def parse_grid(text: Optional[str], name: str, default=None):
    """Comma-separated reals; ``default`` when the flag is absent.  An empty string stays empty."""
    if text is None:
        return default
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"--{name}: {exc}") from exc


# -- output --------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


class Table:
    def __init__(self, command: str, cfg: dict, header):
        self.command = command
        self.cfg = cfg
        self.header = list(header)
        self.rows = []

    def add(self, *row):
        self.rows.append([_fmt(v) for v in row])

    def render(self) -> str:
        buf = io.StringIO()
        buf.write(f"# config_sha256={config_hash(self.cfg)} version={__version__} command={self.command}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        w.writerows(self.rows)
        return buf.getvalue()

    def emit(self, out: Optional[str]):
        text = self.render()
        if out:
            Path(out).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)


# -- commands ------------------------------------------------------------------

def cmd_solve(args, cfg):
    problem = make_problem(cfg)
    sol = optimal_barrier(problem)
    diag = validate_model(problem.model)
    t = Table("solve", cfg, ["quantity", "value"])
    t.add("b_star", sol.b_star)
    t.add("C_at_b_star", sol.C_at_b_star)
    t.add("g_at_zero", sol.g_at_zero)
    t.add("variation_kind", diag.variation_kind.value)
    t.add("psi_prime_at_zero", diag.psi_prime_at_zero)
    t.add("phi_q", problem.phi_q)
    t.add("phi_q_plus_r", problem.phi_qr)
    if problem.model.bounded_variation:
        # zero barrier is optimal iff this is <= 0
        t.add("zero_barrier_criterion", sol.g_at_zero)
    t.add("converged", sol.converged)
    t.emit(args.out)
    if args.check:
        if sol.b_star > 0:
            slope = float(derivative(problem, sol.b_star, sol.b_star))
            return abs(g(problem, sol.b_star)) <= 1e-10 and abs(slope - 1) <= 1e-10
        return sol.g_at_zero <= 0
    return True


def cmd_g_curve(args, cfg):
    grid = parse_grid(args.b_list, "b-list")
    spec = FigureSpec(FigureKind.G_CURVE, {"b": grid if grid is not None else np.linspace(0, 20, 401)}, args.out)
    bs = spec.grids["b"]
    if bs[0] < 0:
        raise UsageError("barriers must be nonnegative")
    problem = make_problem(cfg)
    sol = optimal_barrier(problem)
    rows = [(b, g(problem, b), False) for b in bs if b != sol.b_star]
    rows.append((sol.b_star, g(problem, sol.b_star), True))
    rows.sort(key=lambda row: row[0])
    t = Table("g-curve", cfg, ["b", "g", "is_b_star"])
    for row in rows:
        t.add(*row)
    t.emit(spec.output_path)
    if args.check:
        signs = np.sign([gv for b, gv, _ in rows if b > 0])
        signs = signs[signs != 0]
        return int(np.count_nonzero(np.diff(signs))) <= 1
    return True


def _default_barriers(b_star):
    if b_star > 0:
        return [0.0, b_star / 2, b_star, 1.5 * b_star]
    return [0.0, 0.5, 1.0, 1.5]


def cmd_value(args, cfg):
    problem = make_problem(cfg)
    b_star = optimal_barrier(problem).b_star
    b_list = parse_grid(args.b_list, "b-list")
    spec = FigureSpec(FigureKind.VALUE_CURVES,
                      {"b": b_list if b_list is not None else _default_barriers(b_star),
                       "x": parse_grid(args.x_grid, "x-grid", np.linspace(0, 10, 201))}, args.out)
    if spec.grids["b"][0] < 0:
        raise UsageError("barriers must be nonnegative")
    x = np.array(spec.grids["x"])
    t = Table("value", cfg, ["row", "b", "is_optimal", "x", "v"])
    for b in spec.grids["b"]:
        opt = abs(b - b_star) <= 1e-12 * max(1.0, b_star)
        for xi, vi in zip(x, np.atleast_1d(value(problem, b, x))):
            t.add("curve", b, opt, xi, vi)
        t.add("marker", b, opt, b, value(problem, b, b))
    t.emit(spec.output_path)
    if args.check:
        return dominance_scan(problem, spec.grids["b"], x, b_star=b_star).dominates
    return True


def _sweep(args, cfg, param, grid, command):
    x = np.array(parse_grid(args.x_grid, "x-grid", np.linspace(0, 10, 21)))
    spec = FigureSpec(FigureKind.BETA_SWEEP if param == "beta" else FigureKind.R_SWEEP,
                      {param: grid, "x": x}, args.out)
    values = spec.grids[param]

    def solve_one(p):
        problem = make_problem(cfg, **{param: p})
        b = optimal_barrier(problem).b_star
        return p, b, np.atleast_1d(value(problem, b, x)), float(value(problem, b, b))

    workers = max(1, args.workers)
    if workers == 1:
        results = [solve_one(p) for p in values]
    else:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(solve_one, values))
    results.sort(key=lambda res: res[0])
    t = Table(command, cfg, ["row", param, "label", "b_star", "x", "v"])
    for p, b, vx, vb in results:
        label = "large-r proxy" if param == "r" and p == LARGE_R_PROXY else ""
        for xi, vi in zip(x, vx):
            t.add("curve", p, label, b, xi, vi)
        t.add("marker", p, label, b, b, vb)
    t.emit(spec.output_path)
    if not args.check:
        return True
    bs = np.array([res[1] for res in results])
    V = np.array([res[2] for res in results])
    tol = 1e-9
    if param == "beta":
        return bool(np.all(np.diff(bs) >= -tol) and np.all(np.diff(V, axis=0) <= tol))
    return bool(np.all(np.diff(bs) >= -tol) and np.all(np.diff(V, axis=0) >= -tol))


def cmd_sweep_beta(args, cfg):
    grid = parse_grid(args.beta_grid, "beta-grid")
    return _sweep(args, cfg, "beta", DEFAULT_BETA_GRID if grid is None else grid, "sweep-beta")


def cmd_sweep_r(args, cfg):
    grid = parse_grid(args.r_grid, "r-grid")
    return _sweep(args, cfg, "r", DEFAULT_R_GRID if grid is None else grid, "sweep-r")


def cmd_simulate(args, cfg):
    problem = make_problem(cfg)
    b_star = optimal_barrier(problem).b_star
    b_list = parse_grid(args.b_list, "b-list")
    spec = FigureSpec(FigureKind.MC_REPORT,
                      {"b": b_list if b_list is not None else [b_star],
                       "x": parse_grid(args.x_grid, "x-grid", [0.0, 1.0, 2.0])}, args.out)
    if spec.grids["b"][0] < 0 or spec.grids["x"][0] < 0:
        raise UsageError("barriers and starting points must be nonnegative")
    try:
        sim = SimConfig(args.dt, args.paths, args.cutoff, args.seed, args.antithetic, args.workers)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    t = Table("simulate", cfg, ["b", "x", "mc_mean", "std_error", "n_paths", "truncation_bound",
                                "dividends_mean", "injections_mean", "analytic", "abs_diff", "within_tolerance"])
    ok = True
    k = 0
    for b in spec.grids["b"]:
        for x0 in spec.grids["x"]:
            div, inj, nobs, njumps = simulate_paths(problem, b, x0, sim)
            est = summarize(problem, div, inj, sim, truncation_bound(problem, b, x0, sim))
            if args.path_log:
                log = Path(args.path_log)
                multi = len(spec.grids["b"]) * len(spec.grids["x"]) > 1
                write_path_log(log.with_name(f"{log.stem}_{k}{log.suffix}") if multi else log, div, inj, nobs, njumps)
            v = float(value(problem, b, x0))
            diff = abs(est.mean - v)
            within = diff <= max(3 * est.std_error, 0.01 * abs(v))
            ok &= within
            t.add(b, x0, est.mean, est.std_error, est.n_paths, est.truncation_bound,
                  est.dividends_mean, est.injections_mean, v, diff, within)
            k += 1
    t.emit(spec.output_path)
    return ok if args.check else True


def cmd_vi_check(args, cfg):
    problem = make_problem(cfg)
    sol = optimal_barrier(problem)
    if args.barrier is not None:
        if args.barrier < 0:
            raise UsageError("--barrier must be nonnegative")
        sol = type(sol)(args.barrier, C(problem, args.barrier), sol.g_at_zero, sol.converged)
    grid = parse_grid(args.x_grid, "x-grid")
    spec = FigureSpec(FigureKind.VI_REPORT, {"x": grid if grid is not None else default_vi_grid(sol.b_star)},
                      args.out)
    if spec.grids["x"][0] <= 0:
        raise UsageError("x-grid must lie in (0, inf)")
    report = vi_check(problem, sol, spec.grids["x"], quad_tol=args.quad_tol, strict=False)
    t = Table("vi-check", cfg, ["x", "v", "v_prime", "generator_minus_q_v", "identity_residual", "max_numeric",
                                "max_closed_form", "vi_value", "tolerance", "ok"])
    for row in report.rows:
        t.add(row.x, row.v, row.v_prime, row.generator, row.lemma_residual, row.max_numeric,
              row.max_closed_form, row.vi_value, row.tolerance, row.ok)
    t.emit(spec.output_path)
    return report.passed


COMMANDS = {
    "solve": cmd_solve,
    "g-curve": cmd_g_curve,
    "value": cmd_value,
    "sweep-beta": cmd_sweep_beta,
    "sweep-r": cmd_sweep_r,
    "simulate": cmd_simulate,
    "vi-check": cmd_vi_check,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON model config (see README)")
    common.add_argument("--preset", choices=["case1", "case2"])
    common.add_argument("--out", help="CSV destination (default: stdout)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--paths", type=int, default=10_000)
    common.add_argument("--dt", type=float, default=1e-3)
    common.add_argument("--cutoff", type=float, default=1e-4, help="discount factor at which paths stop")
    common.add_argument("--antithetic", action="store_true")
    common.add_argument("--x-grid")
    common.add_argument("--b-list")
    common.add_argument("--beta-grid")
    common.add_argument("--r-grid")
    common.add_argument("--barrier", type=float, help="vi-check: test this barrier instead of b*")
    common.add_argument("--quad-tol", type=float, default=1e-6)
    common.add_argument("--check", action="store_true", help="exit 1 unless the command's assertions hold")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--path-log", help="simulate: per-path CSV log")

    parser = _Parser(prog="periodic-bailout", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _error_record(kind, message, command=None):
    rec = {"error": kind, "message": str(message)}
    if command:
        rec["command"] = command
    sys.stderr.write(json.dumps(rec) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    command = None
    try:
        args = parser.parse_args(argv)
        command = args.command
        cfg = resolve_config(args)
        ok = COMMANDS[command](args, cfg)
    except UsageError as exc:
        _error_record("usage", exc, command)
        return 2
    except (PeriodicBailoutError, ValueError, KeyError) as exc:
        _error_record(type(exc).__name__, exc, command)
        return 2
    if not ok:
        _error_record("check_failed", f"{command}: requested assertions did not hold", command)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

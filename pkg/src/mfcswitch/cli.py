"""Command line: ``mfcswitch solve|check|oracle``.

Exit codes: 0 success, 1 invalid scenario, 2 no convergence or residual
check failed, 3 I/O problem.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as fio
from .diagnostics import (
    DEFAULT_THRESHOLDS,
    SolveReport,
    build_report,
    check_report,
    displacement_check,
)
from .dualopt import DualConfig, solve_dual
from .exceptions import MFCError, NoConvergence, ScenarioError, TooLarge
from .hjb import HJBConfig
from .scenario import PRESETS, GridSpec, load_scenario, preset, save_scenario, validate_scenario

EXIT_OK, EXIT_INVALID, EXIT_FAIL, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("mfcswitch")


@dataclass(frozen=True)
class RunConfig:
    scenario: str | None
    preset: str | None
    nt: int
    ns: int
    tol: float
    gap_tol: float
    max_outer: int
    flow_steps: int
    out: Path
    seed: int
    step0: float

    def __post_init__(self):
        for name in ("nt", "ns", "tol", "gap_tol", "max_outer", "flow_steps", "step0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"--{name.replace('_', '-')} must be positive")


def _positive_int(x):
    v = int(x)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {x}")
    return v


def _positive_float(x):
    v = float(x)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {x}")
    return v


def _add_run_args(p, nt=64, ns=64):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--scenario", help="scenario JSON file")
    src.add_argument("--preset", choices=PRESETS, help="built-in scenario")
    p.add_argument("--nt", type=_positive_int, default=nt, help="time cells (default %(default)s)")
    p.add_argument("--ns", type=_positive_int, default=ns, help="space cells (default %(default)s)")
    p.add_argument("--tol", type=_positive_float, default=1e-10, help="HJB Picard tolerance")
    p.add_argument("--gap-tol", type=_positive_float, default=1e-2, help="relative duality gap target")
    p.add_argument("--max-outer", type=_positive_int, default=300, help="dual iterations cap")
    p.add_argument("--flow-steps", type=_positive_int, default=4, help="RK4 substeps per time cell")
    p.add_argument("--step0", type=_positive_float, default=DualConfig.step0, help="initial dual step")
    p.add_argument("--out", default="mfc_out", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized checks")


def _config(a) -> RunConfig:
    return RunConfig(a.scenario, a.preset, a.nt, a.ns, a.tol, a.gap_tol, a.max_outer, a.flow_steps,
                     Path(a.out), a.seed, a.step0)


def _load(cfg: RunConfig):
    if cfg.scenario:
        path = Path(cfg.scenario)
        if not path.is_file():
            raise FileNotFoundError(f"no such scenario file: {path}")
        return load_scenario(path)
    return preset(cfg.preset or "single_mode")


def _write_artifacts(out: Path, st, report: SolveReport, sc, grid, cfg: RunConfig):
    fio.write_node_field(out / "m.csv", st.m.values, grid)
    fio.write_node_field(out / "phi.csv", st.phi.values, grid)
    fio.write_control(out / "alpha.csv", st.alpha)
    fio.write_multiplier(out / "lambda.csv", st.lam)
    report.save(out / "report.json")
    save_scenario(sc, out / "scenario.json", grid)
    (out / "run.json").write_text(json.dumps(
        {"nt": grid.nt, "ns": grid.ns, "horizon": grid.horizon, "flow_steps": cfg.flow_steps,
         "tol": cfg.tol, "seed": cfg.seed}, indent=2))


def _print_checks(rep: SolveReport, flags: dict):
    rows = [
        ("gap", rep.gap), ("complementarity", rep.comp_resid), ("feasibility", rep.cell_violation),
        ("hjb", rep.hjb_resid), ("fp", rep.fp_resid), ("control", rep.control_resid), ("mass", rep.fp_mass_err),
    ]
    print(f"{'check':<16}{'value':>14}  status")
    for name, val in rows:
        print(f"{name:<16}{val:>14.4e}  {'ok' if flags[name] else 'FAIL'}")


def cmd_solve(cfg: RunConfig) -> int:
    try:
        sc = _load(cfg)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_IO
    grid = GridSpec.for_scenario(sc, cfg.nt, cfg.ns)
    violations = validate_scenario(sc, grid)
    if violations:
        for v in violations:
            print(f"violation: {v}", file=sys.stderr)
        return EXIT_INVALID
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
        logf = open(cfg.out / "convergence.jsonl", "w")
    except OSError as exc:
        print(f"cannot write to {cfg.out}: {exc}", file=sys.stderr)
        return EXIT_IO
    hcfg = HJBConfig(tol=cfg.tol, flow_steps=cfg.flow_steps)
    dcfg = DualConfig(step0=cfg.step0, max_outer=cfg.max_outer, gap_tol=cfg.gap_tol)
    try:
        with logf:
            st, report = solve_dual(sc, grid, hcfg, dcfg, log_stream=logf, raise_on_failure=False)
    except NoConvergence as exc:
        print(f"inner solver failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    report.thresholds["gap_tol"] = cfg.gap_tol
    try:
        _write_artifacts(cfg.out, st, report, sc, grid, cfg)
    except OSError as exc:
        print(f"cannot write artifacts: {exc}", file=sys.stderr)
        return EXIT_IO
    flags = check_report(report)
    print(f"scenario {sc.name}: primal {report.primal_cost:.10g}  dual {report.dual_value:.10g}  "
          f"outer iterations {report.iterations.get('outer')}")
    _print_checks(report, flags)
    return EXIT_OK if report.converged and all(flags.values()) else EXIT_FAIL


def cmd_check(directory: Path, seed: int = 0) -> int:
    directory = Path(directory)
    try:
        saved = SolveReport.load(directory / "report.json")
        sc = load_scenario(directory / "scenario.json")
        # run.json is optional: the grid can be read off the node fields
        run = json.loads((directory / "run.json").read_text()) if (directory / "run.json").exists() else {}
        grid = GridSpec(run["nt"], run["ns"], run["horizon"]) if run else None
        phi = fio.read_value_field(directory / "phi.csv", grid)
        grid = phi.grid
        m = fio.read_density(directory / "m.csv", grid)
        alpha = fio.read_control(directory / "alpha.csv", sc.n_modes, grid)
        lam = fio.read_multiplier(directory / "lambda.csv", grid)
    except (OSError, ValueError, KeyError, TypeError, MFCError) as exc:
        print(f"cannot load solution from {directory}: {exc}", file=sys.stderr)
        return EXIT_IO
    hcfg = HJBConfig(tol=run.get("tol", 1e-10), flow_steps=run.get("flow_steps", 4))
    rep = build_report(phi, lam, m, alpha, sc, grid, hcfg, saved.iterations, saved.converged,
                       {**DEFAULT_THRESHOLDS, **saved.thresholds})
    flags = check_report(rep)
    ratio = displacement_check(m, alpha, sc, np.random.default_rng(seed))
    print(f"displacement bound: worst lhs/rhs = {ratio:.4f}")
    _print_checks(rep, flags)
    ok = all(flags.values()) and ratio <= 1.0
    return EXIT_OK if ok else EXIT_FAIL


def cmd_oracle(cfg: RunConfig) -> int:
    from .oracle import build_discrete, solve_discrete

    try:
        sc = _load(cfg)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_IO
    grid = GridSpec.for_scenario(sc, cfg.nt, cfg.ns)
    violations = validate_scenario(sc, grid)
    if violations:
        for v in violations:
            print(f"violation: {v}", file=sys.stderr)
        return EXIT_INVALID
    try:
        prog = build_discrete(sc, grid)
    except TooLarge as exc:
        print(f"grid too large for the oracle: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        ref = solve_discrete(prog)
        _, rep = solve_dual(sc, grid, HJBConfig(tol=cfg.tol, flow_steps=cfg.flow_steps),
                            DualConfig(step0=cfg.step0, max_outer=cfg.max_outer, gap_tol=cfg.gap_tol),
                            raise_on_failure=False)
    except NoConvergence as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    rel = abs(ref.value - rep.primal_cost) / max(abs(ref.value), 1e-12)
    print(f"main primal {rep.primal_cost:.10g}  dual {rep.dual_value:.10g}  gap {rep.gap:.3e}")
    print(f"oracle value {ref.value:.10g}  ({ref.status})")
    print(f"relative difference {rel:.3e}  {'ok' if rel <= 2e-2 else 'FAIL'}")
    return EXIT_OK if rel <= 2e-2 else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfcswitch", description="Constrained mean-field switching control solver")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="solve a scenario and write artifacts")
    _add_run_args(s)
    c = sub.add_parser("check", help="re-verify a saved solution directory")
    c.add_argument("directory")
    c.add_argument("--seed", type=int, default=0)
    o = sub.add_parser("oracle", help="compare with the brute-force discrete program")
    _add_run_args(o, nt=8, ns=8)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.command == "check":
        return cmd_check(Path(args.directory), args.seed)
    try:
        cfg = _config(args)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    return cmd_solve(cfg) if args.command == "solve" else cmd_oracle(cfg)


if __name__ == "__main__":
    sys.exit(main())

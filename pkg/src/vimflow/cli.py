"""Command-line entry point: ``vimflow {solve|mms|multipliers|contraction}``.

Exit codes: 0 converged (or success), 2 diverged or non-finite, 3 iteration
limit reached, 4 config, parse, input or output errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .errors import InsufficientData, VimflowError
from .grid import Axis
from .io import RunConfig, RunManifest, read_config, write_field_csv, write_json, write_report
from .systems import FlowState, apply_dirichlet, check_grid_for_problem, project_pressure_gauge
from .verify import error_report, exact_state, mms_study, perturbed_state
from .vim import ConvergenceReport, Status, estimate_contraction, identify_multipliers, iterate

EXIT_OK = 0
EXIT_DIVERGED = 2
EXIT_MAX_ITERS = 3
EXIT_INPUT = 4

_EXIT = {
    Status.CONVERGED: EXIT_OK,
    Status.DIVERGED: EXIT_DIVERGED,
    Status.NON_FINITE: EXIT_DIVERGED,
    Status.MAX_ITERS: EXIT_MAX_ITERS,
}


def exit_code(status: Status) -> int:
    return _EXIT[status]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vimflow",
        description="Variational iteration solver for Navier-Stokes and micropolar flow.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def run_options(p: argparse.ArgumentParser, out: bool = True) -> None:
        p.add_argument("--config", required=True, metavar="PATH", help="TOML config file")
        if out:
            p.add_argument("--out", default="out", metavar="DIR", help="output directory (default ./out)")
            p.add_argument("--timestamps", action="store_true", help="record wall-clock times in manifest.json")
        p.add_argument("--direction", choices=("x1", "x2", "x3"), help="override the iteration direction")
        p.add_argument("--neumann", choices=("paper", "full"), help="re-impose pressure Neumann data of this form")
        p.add_argument("--threads", type=int, metavar="N", help="worker cap (default $VIMFLOW_THREADS or 1)")

    run_options(sub.add_parser("solve", help="iterate the configured problem"))
    mms = sub.add_parser("mms", help="manufactured-solution study on the [case] section")
    run_options(mms)
    mms.add_argument("--mode", choices=("discrete", "symbolic"), default="symbolic")
    mms.add_argument("--levels", type=int, metavar="N", help="override the number of ladder rungs")
    sub.add_parser("multipliers", help="print the Lagrange multipliers and their stationarity checks")
    run_options(sub.add_parser("contraction", help="iterate and print the contraction estimate"), out=False)
    return parser


def _threads(args) -> Optional[int]:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("VIMFLOW_THREADS")
    if env is None or env.strip() == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise VimflowError(f"VIMFLOW_THREADS must be an integer, got {env!r}") from None


def load_run(args) -> RunConfig:
    """Read the config and apply command-line overrides."""
    run = read_config(args.config)
    changes = {}
    if args.direction:
        changes["direction"] = Axis.parse(args.direction)
    if args.neumann:
        changes["neumann"] = args.neumann
        changes["pressure_bc"] = "neumann"
    threads = _threads(args)
    if threads is not None:
        changes["threads"] = threads
    if changes:
        try:
            run.iteration = dataclasses.replace(run.iteration, **changes)
        except ValueError as err:
            raise VimflowError(str(err)) from None
    check_grid_for_problem(run.problem.grid)
    return run


def initial_state(run: RunConfig) -> FlowState:
    prob = run.problem
    if run.case is not None and run.start == "exact":
        return exact_state(run.case)
    if run.case is not None and run.start == "perturbed":
        return perturbed_state(run.case, fraction=run.perturbation)
    s = apply_dirichlet(FlowState.zeros(prob.grid, prob.micropolar), prob)
    return s.replace(p=project_pressure_gauge(s.p))


def _write_fields(s: FlowState, out: Path) -> None:
    fields = out / "fields"
    fields.mkdir(parents=True, exist_ok=True)
    for name, block in s.blocks().items():
        if name == "p":
            write_field_csv(block, fields / "p.csv")
            continue
        for i, comp in enumerate(block, 1):
            write_field_csv(comp, fields / f"{name}{i}.csv")


def _prepare_out(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise VimflowError(f"cannot create output directory {out}: {err.strerror or err}") from None
    return out


def _stamp(manifest: RunManifest, args, started: datetime) -> None:
    if args.timestamps:
        manifest.timestamps = {
            "started": started.isoformat(),
            "finished": datetime.now(timezone.utc).isoformat(),
        }


def _print_summary(rep: ConvergenceReport) -> None:
    last = rep.records[-1] if rep.records else None
    d = f"{last.d:.3e}" if last else "n/a"
    print(f"status = {rep.status.value}, iterations = {rep.iterations}, final d = {d}")
    if rep.message:
        print(rep.message)


def cmd_solve(args) -> int:
    started = datetime.now(timezone.utc)
    run = load_run(args)
    out = _prepare_out(args.out)
    state, rep = iterate(initial_state(run), run.problem, run.iteration)
    write_report(rep, out / "report.jsonl")
    _write_fields(state, out)
    extra = {}
    if run.case is not None:
        errors = error_report(state, run.case)
        write_json(errors, out / "errors.json")
        extra["case"] = run.case.name
    manifest = RunManifest.from_report("solve", run, rep, **extra)
    _stamp(manifest, args, started)
    manifest.write(out / "manifest.json")
    _print_summary(rep)
    return exit_code(rep.status)


def cmd_mms(args) -> int:
    started = datetime.now(timezone.utc)
    run = load_run(args)
    if run.case is None:
        raise VimflowError("mms needs a [case] section in the config")
    case = run.case
    if args.levels is not None:
        if args.levels < 1:
            raise VimflowError("--levels must be >= 1")
        case = dataclasses.replace(case, levels=args.levels)
    out = _prepare_out(args.out)
    start = "zero" if run.start == "zero" else "exact"
    result = mms_study(case, run.iteration, mode=args.mode, start=start)
    single = len(result.reports) == 1
    for k, rep in enumerate(result.reports):
        write_report(rep, out / ("report.jsonl" if single else f"report_{k}.jsonl"))
    write_json(
        {
            "mode": args.mode,
            "grids": [g.summary() for g in result.grids],
            "errors": result.errors,
            "orders": result.orders,
        },
        out / "errors.json",
    )
    # the manifest describes the finest rung
    manifest = RunManifest.from_report(
        "mms", run, result.reports[-1], case=case.name, mode=args.mode, rungs=len(result.reports)
    )
    manifest.grid = result.grids[-1].summary()
    manifest.status = result.status.value
    _stamp(manifest, args, started)
    manifest.write(out / "manifest.json")
    for k, (g, rep) in enumerate(zip(result.grids, result.reports)):
        d0 = f"{rep.records[0].d:.3e}" if rep.records else "n/a"
        u = result.errors[k]["u"]["linf"]
        print(f"rung {k} shape {list(g.shape)}: status = {rep.status.value}, iterations = {rep.iterations}, d_0 = {d0}, u linf error = {u:.3e}")
    for name, orders in result.orders.items():
        print(f"observed order {name}: " + ", ".join(f"{o:.3f}" for o in orders))
    return exit_code(result.status)


def cmd_multipliers(args) -> int:
    ident = identify_multipliers()
    print(f"lambda = {ident.lam:g}, mu = {ident.mu:g}")
    for label, witness in (("lambda", ident.lambda_witness), ("mu", ident.mu_witness)):
        for check in witness.checks:
            mark = "ok" if check.passed else "FAILED"
            print(f"  {label}: {check.name}: {mark} (max deviation {check.max_deviation:.1e})")
    return EXIT_OK if ident.lambda_witness.passed and ident.mu_witness.passed else EXIT_DIVERGED


def cmd_contraction(args) -> int:
    run = load_run(args)
    _, rep = iterate(initial_state(run), run.problem, run.iteration)
    try:
        print(f"gamma_bar = {estimate_contraction(rep):.3g}")
    except InsufficientData as err:
        print(f"gamma_bar = undefined ({err})")
    print(f"status = {rep.status.value}, iterations = {rep.iterations}")
    return exit_code(rep.status)


_COMMANDS = {
    "solve": cmd_solve,
    "mms": cmd_mms,
    "multipliers": cmd_multipliers,
    "contraction": cmd_contraction,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; that code means "diverged" here
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    try:
        return _COMMANDS[args.command](args)
    except VimflowError as err:
        print(f"vimflow: error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

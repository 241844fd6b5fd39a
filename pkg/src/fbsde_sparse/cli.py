"""Command-line front end: convergence sweeps, scaling tables, validation.

Exit codes: 0 success, 2 invalid arguments, 3 solver divergence,
4 validation failure.
"""

from __future__ import annotations

import argparse
import sys

from .bench import (
    ExperimentSpec,
    emit_csv,
    emit_scaling_csv,
    run_experiment,
    scaling_report,
)
from .errors import InvalidParameterError, SolverDivergenceError
from .problems import get_problem, validate_problem

EXIT_OK = 0
EXIT_BAD_ARGS = 2
EXIT_DIVERGED = 3
EXIT_VALIDATION = 4


def _parse_norm(value: str):
    if value in ("max", "rms"):
        return value, None
    if value.startswith("point:"):
        coords = tuple(float(v) for v in value[len("point:"):].split(","))
        return "point", coords
    raise argparse.ArgumentTypeError(f"unknown norm {value!r}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fbsde-sparse",
        description="Multi-step FBSDE solver on spectral sparse grids")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run a convergence sweep and emit CSV")
    p_solve.add_argument("--problem", required=True,
                         help='problem id, e.g. "example1" or "example2:q=4"')
    p_solve.add_argument("--k", type=int, default=1, help="number of steps (1..6)")
    p_solve.add_argument("--N", required=True,
                         help="comma-separated list of time-step counts")
    p_solve.add_argument("--p", type=int, default=None, help="interpolation sparseness")
    p_solve.add_argument("--pq", type=int, default=None, help="quadrature sparseness")
    p_solve.add_argument("--tol", type=float, default=1e-10, help="fixed-point tolerance")
    p_solve.add_argument("--T", type=float, default=1.0, help="time horizon")
    p_solve.add_argument("--norm", default="max",
                         help="error norm: max, rms, or point:<x1,...,xq>")
    p_solve.add_argument("--threads", type=int, default=1)
    p_solve.add_argument("--out", required=True, help="output CSV path")
    p_solve.add_argument("--no-runtime", action="store_true",
                         help="zero the runtime column (reproducible output)")

    p_scale = sub.add_parser("scaling", help="runtime-vs-dimension table")
    p_scale.add_argument("--problem", default="example2")
    p_scale.add_argument("--q", required=True, help="comma-separated dimensions")
    p_scale.add_argument("--N", type=int, required=True)
    p_scale.add_argument("--k", type=int, default=1)
    p_scale.add_argument("--T", type=float, default=1.0)
    p_scale.add_argument("--threads", type=int, default=1)
    p_scale.add_argument("--out", required=True)

    p_val = sub.add_parser("validate", help="run problem consistency gates")
    p_val.add_argument("--problem", required=True)
    p_val.add_argument("--samples", type=int, default=1000)
    return parser


def _cmd_solve(args) -> int:
    norm, point = _parse_norm(args.norm)
    spec = ExperimentSpec(
        problem=args.problem, k=args.k,
        n_list=tuple(int(v) for v in args.N.split(",")),
        p=args.p, pq=args.pq, eps0=args.tol, horizon=args.T,
        norm=norm, point=point, threads=args.threads)
    result = run_experiment(spec)
    emit_csv(result, args.out, include_runtime=not args.no_runtime)
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {args.out}: CR_Y={result.cr_y:.3f} CR_Z={result.cr_z:.3f}")
    if any(r.failed for r in result.rows):
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_scaling(args) -> int:
    rows = scaling_report(args.problem, [int(v) for v in args.q.split(",")],
                          n_steps=args.N, k=args.k, horizon=args.T,
                          threads=args.threads)
    emit_scaling_csv(rows, args.out)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return EXIT_OK


def _cmd_validate(args) -> int:
    prob = get_problem(args.problem)
    report = validate_problem(prob, samples=args.samples)
    print(f"problem {report.name}")
    print(f"  pde residual      {report.residual:.3e}")
    print(f"  z identity        {report.z_error:.3e}")
    print(f"  terminal match    {report.terminal_error:.3e}")
    print(f"  bound excess      {report.bound_excess:.3e}")
    if not report.passed:
        print("validation FAILED", file=sys.stderr)
        return EXIT_VALIDATION
    print("validation passed")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_BAD_ARGS if exc.code not in (0, None) else EXIT_OK
    try:
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "scaling":
            return _cmd_scaling(args)
        if args.command == "validate":
            return _cmd_validate(args)
    except InvalidParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_ARGS
    except SolverDivergenceError as exc:
        print(f"solver divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except argparse.ArgumentTypeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_ARGS
    return EXIT_BAD_ARGS


if __name__ == "__main__":
    sys.exit(main())

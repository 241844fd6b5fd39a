"""Convergence experiments: time-step sweeps, fitted rates, CSV emission.

A run sweeps N over a list, solves the problem at each N, measures the
t = 0 errors against the exact solution, and fits a convergence rate as the
negated least-squares slope of log(error) against log(N).  Pairwise rates
between consecutive N are kept on the rows for diagnosis.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .problems import default_levels, get_problem
from .solver import SolverConfig, measure_errors, solve

__all__ = [
    "ExperimentSpec",
    "ConvergenceRow",
    "ExperimentResult",
    "run_experiment",
    "fit_rate",
    "emit_csv",
    "parse_csv",
    "scaling_report",
]

CSV_HEADER = "problem,k,p,pq,N,err_y,err_z,runtime_s,cr_y,cr_z"


@dataclass(frozen=True)
class ExperimentSpec:
    """One convergence sweep."""

    problem: str
    k: int
    n_list: tuple[int, ...]
    p: int | None = None
    pq: int | None = None
    eps0: float = 1e-10
    horizon: float = 1.0
    norm: str = "max"
    point: tuple[float, ...] | None = None
    threads: int = 1

    def __post_init__(self):
        if list(self.n_list) != sorted(set(self.n_list)):
            raise InvalidParameterError("N list must be strictly increasing")
        if any(n < self.k for n in self.n_list):
            raise InvalidParameterError("every N must be >= k")


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    err_y: float
    err_z: float
    runtime_s: float
    picard_max: int
    failed: bool = False
    pairwise_rate_y: float = math.nan
    pairwise_rate_z: float = math.nan


@dataclass(frozen=True)
class ExperimentResult:
    spec: ExperimentSpec
    p: int
    pq: int
    rows: tuple[ConvergenceRow, ...]
    cr_y: float
    cr_z: float
    warnings: tuple[str, ...] = field(default_factory=tuple)


def fit_rate(n_values, errors) -> float:
    """Negated least-squares slope of log(error) vs log(N).

    Undefined (nan) when an error is zero or negative, e.g. for problems the
    scheme solves exactly.
    """
    errs = np.asarray(errors, dtype=float)
    if np.any(errs <= 0.0) or not np.all(np.isfinite(errs)):
        return math.nan
    xs = np.log(np.asarray(n_values, dtype=float))
    ys = np.log(errs)
    xbar = xs.mean()
    ybar = ys.mean()
    slope = float(((xs - xbar) * (ys - ybar)).sum() / ((xs - xbar) ** 2).sum())
    return -slope


def _threads_context(threads: int):
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=threads)
    except ImportError:  # pragma: no cover - threadpoolctl ships with scipy stack
        import contextlib

        return contextlib.nullcontext()


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Solve the problem for every N in the sweep and fit rates."""
    from .errors import SolverDivergenceError

    prob = get_problem(spec.problem, horizon=spec.horizon)
    p_def, pq_def = default_levels(prob, spec.k)
    p = spec.p if spec.p is not None else p_def
    pq = spec.pq if spec.pq is not None else pq_def
    rows = []
    warnings = []
    with _threads_context(spec.threads):
        for n in spec.n_list:
            cfg = SolverConfig(k=spec.k, n_steps=n, p=p, pq=pq,
                               horizon=spec.horizon, eps0=spec.eps0)
            start = time.perf_counter()
            try:
                result = solve(prob, cfg)
            except SolverDivergenceError as exc:
                warnings.append(f"N={n}: {exc}")
                rows.append(ConvergenceRow(n=n, err_y=math.nan, err_z=math.nan,
                                           runtime_s=time.perf_counter() - start,
                                           picard_max=0, failed=True))
                continue
            runtime = time.perf_counter() - start
            report = measure_errors(result, prob, norm=spec.norm, point=spec.point)
            picard = max(d.picard_iterations for d in result.diagnostics)
            rows.append(ConvergenceRow(n=n, err_y=report.e_y, err_z=report.e_z,
                                       runtime_s=runtime, picard_max=picard))
    ok = [r for r in rows if not r.failed]
    if len(ok) >= 2:
        cr_y = fit_rate([r.n for r in ok], [r.err_y for r in ok])
        cr_z = fit_rate([r.n for r in ok], [r.err_z for r in ok])
    else:
        cr_y = cr_z = math.nan
        warnings.append("fewer than 2 successful rows; no rate fitted")
    if 0 < len(ok) < 3:
        warnings.append("rate fitted from fewer than 3 rows")
    rows = _with_pairwise_rates(rows)
    return ExperimentResult(spec=spec, p=p, pq=pq, rows=tuple(rows),
                            cr_y=cr_y, cr_z=cr_z, warnings=tuple(warnings))


def _with_pairwise_rates(rows):
    def rate(e_prev, e_cur, scale):
        if e_prev <= 0.0 or e_cur <= 0.0:
            return math.nan
        return -math.log(e_cur / e_prev) / scale

    out = [rows[0]]
    for prev, cur in zip(rows, rows[1:]):
        if prev.failed or cur.failed:
            out.append(cur)
            continue
        scale = math.log(cur.n / prev.n)
        out.append(ConvergenceRow(
            n=cur.n, err_y=cur.err_y, err_z=cur.err_z, runtime_s=cur.runtime_s,
            picard_max=cur.picard_max, failed=cur.failed,
            pairwise_rate_y=rate(prev.err_y, cur.err_y, scale),
            pairwise_rate_z=rate(prev.err_z, cur.err_z, scale)))
    return out


def _fmt(v: float) -> str:
    return f"{v:.5E}"


def emit_csv(result: ExperimentResult, path, include_runtime: bool = True) -> None:
    """Write the sweep as CSV; rates are repeated per line for grep-ability.

    ``include_runtime=False`` zeroes the runtime column so two runs of the
    same experiment emit byte-identical files.
    """
    if not result.rows:
        raise InvalidParameterError("refusing to emit an empty experiment")
    lines = [CSV_HEADER]
    for row in result.rows:
        runtime = row.runtime_s if include_runtime else 0.0
        lines.append(",".join([
            result.spec.problem, str(result.spec.k), str(result.p), str(result.pq),
            str(row.n), _fmt(row.err_y), _fmt(row.err_z), _fmt(runtime),
            _fmt(result.cr_y), _fmt(result.cr_z),
        ]))
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


def parse_csv(path):
    """Rows of an emitted file as a list of dicts (values as printed)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = []
        for line in fh:
            cells = line.strip().split(",")
            row = dict(zip(header, cells))
            for key in ("k", "p", "pq", "N"):
                row[key] = int(row[key])
            for key in ("err_y", "err_z", "runtime_s", "cr_y", "cr_z"):
                row[key] = float(row[key])
            rows.append(row)
    return rows


def scaling_report(problem_family: str, q_list, n_steps: int, k: int = 1,
                   horizon: float = 1.0, threads: int = 1, eps0: float = 1e-10):
    """Runtime versus dimension at fixed N, one solve per q.

    Returns a list of dicts and is emitted as CSV by :func:`emit_scaling_csv`;
    per-q sparseness levels follow the benchmark defaults.
    """
    out = []
    with _threads_context(threads):
        for q in q_list:
            prob = get_problem(f"{problem_family}:q={q}", horizon=horizon)
            p, pq = default_levels(prob, k)
            cfg = SolverConfig(k=k, n_steps=n_steps, p=p, pq=pq,
                               horizon=horizon, eps0=eps0)
            start = time.perf_counter()
            result = solve(prob, cfg)
            runtime = time.perf_counter() - start
            out.append({
                "problem": problem_family, "q": q, "p": p, "pq": pq,
                "N": n_steps, "points": len(result.levels[0].grid),
                "runtime_s": runtime,
            })
    return out


def emit_scaling_csv(rows, path) -> None:
    if not rows:
        raise InvalidParameterError("refusing to emit an empty report")
    header = "problem,q,p,pq,N,points,runtime_s"
    lines = [header]
    for r in rows:
        lines.append(",".join([
            r["problem"], str(r["q"]), str(r["p"]), str(r["pq"]), str(r["N"]),
            str(r["points"]), _fmt(r["runtime_s"]),
        ]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

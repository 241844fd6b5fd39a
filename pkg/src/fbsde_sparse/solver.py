r"""Backward multi-step solver on sparse grids.

Time derivative weights come from the (k+1) x (k+1) Vandermonde system
``sum_i i^m (alpha_i dt) = delta_(m,1)``; they are solved exactly in
rational arithmetic and are stable for ``1 <= k <= 6``.

The backward sweep keeps, per time level, a box, a Y interpolant and a Z
interpolant.  Levels ``N .. N-k+1`` are seeded (from the exact solution
when available, else a refined one-step bootstrap); then for each level
``n = N-k .. 0`` every grid point runs a fixed-point (Picard) loop:

* freeze drift/diffusion at the current iterate and form the quadrature
  expectations against the next k levels,
* update Z explicitly from the E[Y dW'] terms,
* update Y from the implicit relation ``alpha_0 Y = -sum_j alpha_j E_j -
  f(t, x, Y, Z)`` via an inner fixed point on Y,
* stop when the max update over the level drops below the tolerance.

All points of a level are iterated together (the per-point problems are
independent; batching them is the vectorized equivalent and keeps runs
bitwise reproducible).  Converged point values are turned back into
interpolants with one fast transform each for Y and Z.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Union

import numpy as np

from .errors import (
    InvalidParameterError,
    NumericError,
    SolverDivergenceError,
    UnsupportedOperationError,
)
from .interpolation import (
    DomainBox,
    SparseGrid,
    SparseInterpolant,
    build_grid,
    compact,
    fast_transform,
    interp_eval,
)
from .quadrature import build_gh_rule, expectation_batch

__all__ = [
    "MultistepCoeffs",
    "TimeGrid",
    "SolverConfig",
    "SolutionLevel",
    "LevelDiagnostics",
    "SolveResult",
    "ErrorReport",
    "multistep_coeffs",
    "propagate_domains",
    "solve",
    "measure_errors",
]

log = logging.getLogger(__name__)

MAX_STEPS = 6  # the k-step scheme is stable for 1 <= k <= 6 only


@dataclass(frozen=True)
class MultistepCoeffs:
    """Backward time-derivative weights alpha_(k,0..k), already divided by dt."""

    k: int
    dt: float
    alpha: np.ndarray                       # (k+1,) floats, = alpha_dt_exact / dt
    alpha_dt_exact: tuple[Fraction, ...]    # exact alpha * dt


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, T] into N steps."""

    n_steps: int
    horizon: float

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def time(self, n: int) -> float:
        return n * self.dt


@lru_cache(maxsize=None)
def _alpha_dt_exact(k: int) -> tuple[Fraction, ...]:
    """Exact solve of the Vandermonde system by Gaussian elimination."""
    size = k + 1
    a = [[Fraction(i**m) for i in range(size)] for m in range(size)]
    rhs = [Fraction(1) if m == 1 else Fraction(0) for m in range(size)]
    for col in range(size):
        piv = next(r for r in range(col, size) if a[r][col] != 0)
        a[col], a[piv] = a[piv], a[col]
        rhs[col], rhs[piv] = rhs[piv], rhs[col]
        inv = Fraction(1) / a[col][col]
        a[col] = [v * inv for v in a[col]]
        rhs[col] *= inv
        for r in range(size):
            if r != col and a[r][col] != 0:
                fac = a[r][col]
                a[r] = [v - fac * w for v, w in zip(a[r], a[col])]
                rhs[r] -= fac * rhs[col]
    return tuple(rhs)


def multistep_coeffs(k: int, dt: float) -> MultistepCoeffs:
    """Weights of the k-step backward derivative approximation."""
    if not 1 <= k <= MAX_STEPS:
        raise InvalidParameterError(f"step count must be in 1..{MAX_STEPS}, got {k}")
    if not dt > 0:
        raise InvalidParameterError(f"need dt > 0, got {dt}")
    exact = _alpha_dt_exact(k)
    alpha = np.array([float(v) for v in exact]) / dt
    alpha.setflags(write=False)
    return MultistepCoeffs(k=k, dt=dt, alpha=alpha, alpha_dt_exact=exact)


@dataclass(frozen=True)
class SolverConfig:
    """Everything the backward sweep needs besides the problem itself.

    ``domain_strategy``, ``domain0`` and the coefficient bounds default to
    the problem's own metadata when left as None.  ``drift_mode`` selects
    how the drift bound enlarges propagated boxes: "enclose" widens both
    bounds by |C_b| dt (worst-case sign), "shift" moves both bounds by
    +C_b dt (the literal recursion).
    """

    k: int
    n_steps: int
    p: int
    pq: int
    horizon: float = 1.0
    eps0: float = 1e-10
    picard_max: int = 100
    inner_max: int = 50
    domain_strategy: str | None = None
    domain0: DomainBox | None = None
    c_b: Union[float, Callable[[float], float], None] = None
    c_sigma: Union[float, Callable[[float], float], None] = None
    drift_mode: str = "enclose"
    bootstrap_refine: int = 8

    def __post_init__(self):
        if not 1 <= self.k <= MAX_STEPS:
            raise InvalidParameterError(f"step count must be in 1..{MAX_STEPS}, got {self.k}")
        if self.k > self.n_steps:
            raise InvalidParameterError(f"need k <= N, got k={self.k}, N={self.n_steps}")
        if not self.eps0 > 0:
            raise InvalidParameterError("tolerance must be positive")
        if self.drift_mode not in ("enclose", "shift"):
            raise InvalidParameterError(f"unknown drift mode {self.drift_mode!r}")

    @property
    def time_grid(self) -> TimeGrid:
        return TimeGrid(n_steps=self.n_steps, horizon=self.horizon)


@dataclass(frozen=True)
class SolutionLevel:
    """Rolling state of one time level: box, grid, and (Y, Z) interpolants."""

    n: int
    t: float
    domain: DomainBox
    grid: SparseGrid
    y: SparseInterpolant           # value dimension m
    z: SparseInterpolant           # value dimension m*d, row-major (m, d)
    y_values: np.ndarray           # (n_points, m) converged point values
    z_values: np.ndarray           # (n_points, m, d)
    y_eval: object = None          # pruned evaluation view of y (internal)
    z_eval: object = None


@dataclass(frozen=True)
class LevelDiagnostics:
    n: int
    picard_iterations: int
    final_residual: float
    out_of_box: int
    domain: DomainBox


@dataclass(frozen=True)
class SolveResult:
    levels: tuple[SolutionLevel, ...]      # indexed by n = 0..N
    diagnostics: tuple[LevelDiagnostics, ...]
    config: SolverConfig

    def level(self, n: int) -> SolutionLevel:
        return self.levels[n]


def _bound_at(bound, t: float) -> float:
    return float(bound(t)) if callable(bound) else float(bound)


def propagate_domains(d0: DomainBox, cfg: SolverConfig, m_bound: float,
                      c_b=None, c_sigma=None) -> list[DomainBox]:
    """Boxes for all N+1 time levels.

    Fixed strategy replicates ``d0``.  Propagated boxes grow level by level
    by the worst-case one-step reach ``C_b dt`` plus ``C_sigma sqrt(2 dt) M``
    per bound; the bounds may be callables of time for coefficients whose
    sup-norm shrinks near t = 0.
    """
    strategy = cfg.domain_strategy or "fixed"
    n_steps = cfg.n_steps
    if strategy == "fixed":
        return [d0] * (n_steps + 1)
    if strategy != "propagate":
        raise InvalidParameterError(f"unknown domain strategy {strategy!r}")
    cb = cfg.c_b if cfg.c_b is not None else c_b
    cs = cfg.c_sigma if cfg.c_sigma is not None else c_sigma
    if cb is None or cs is None:
        raise InvalidParameterError("propagated domains need coefficient bounds C_b, C_sigma")
    dt = cfg.time_grid.dt
    boxes = [d0]
    lo = d0.lower_array().astype(float)
    hi = d0.upper_array().astype(float)
    for n in range(n_steps):
        t = cfg.time_grid.time(n)
        cb_n = _bound_at(cb, t)
        cs_n = _bound_at(cs, t)
        widen = cs_n * math.sqrt(2.0 * dt) * m_bound
        if cfg.drift_mode == "shift":
            lo = lo + cb_n * dt - widen
            hi = hi + cb_n * dt + widen
        else:
            lo = lo - abs(cb_n) * dt - widen
            hi = hi + abs(cb_n) * dt + widen
        boxes.append(DomainBox.from_arrays(lo, hi))
    return boxes


def _eval_level(level: SolutionLevel, grid: SparseGrid, d: int):
    """Y and Z point values of a stored level at another level's grid points.

    When the two levels share the grid object (fixed-box runs), the stored
    point values are returned directly instead of a round trip through the
    interpolant.
    """
    if level.grid is grid:
        return level.y_values.copy(), level.z_values.copy()
    pts = grid.points
    y = interp_eval(level.y_eval or level.y, pts)
    z = interp_eval(level.z_eval or level.z, pts).reshape(len(pts), -1, d)
    return y, z


def _terminal_values(prob, grid: SparseGrid):
    y = np.asarray(prob.phi(grid.points), dtype=float).reshape(len(grid), prob.m)
    z = np.zeros((len(grid), prob.m, prob.d))
    return y, z


def _make_level(prob, n: int, t: float, grid: SparseGrid, y_vals, z_vals) -> SolutionLevel:
    y_interp = fast_transform(grid, y_vals)
    z_interp = fast_transform(grid, z_vals.reshape(len(grid), prob.m * prob.d))
    return SolutionLevel(n=n, t=t, domain=grid.domain, grid=grid, y=y_interp,
                         z=z_interp, y_values=y_vals, z_values=z_vals,
                         y_eval=compact(y_interp), z_eval=compact(z_interp))


def solve(prob, cfg: SolverConfig) -> SolveResult:
    """Run the k-step backward sweep and return all time levels."""
    tg = cfg.time_grid
    dt = tg.dt
    coeffs = multistep_coeffs(cfg.k, dt)
    rule = build_gh_rule(prob.d, cfg.pq)

    d0 = cfg.domain0 if cfg.domain0 is not None else prob.domain0
    strategy = cfg.domain_strategy or prob.domain_strategy
    eff = replace(cfg, domain_strategy=strategy, domain0=d0)
    boxes = propagate_domains(d0, eff, rule.bound, c_b=prob.c_b, c_sigma=prob.c_sigma)
    grids = [build_grid(prob.q, cfg.p, box) for box in boxes]
    wrap = boxes[0] if (prob.period is not None and strategy == "fixed") else None

    levels: dict[int, SolutionLevel] = {}
    if prob.exact_y is not None and prob.exact_z is not None:
        for n in range(tg.n_steps, tg.n_steps - cfg.k, -1):
            t = tg.time(n)
            pts = grids[n].points
            y = np.asarray(prob.exact_y(t, pts), dtype=float).reshape(len(pts), prob.m)
            z = np.asarray(prob.exact_z(t, pts), dtype=float).reshape(len(pts), prob.m, prob.d)
            levels[n] = _make_level(prob, n, t, grids[n], y, z)
    elif cfg.k == 1:
        y, z = _terminal_values(prob, grids[tg.n_steps])
        levels[tg.n_steps] = _make_level(prob, tg.n_steps, tg.horizon, grids[tg.n_steps], y, z)
    else:
        for n, lvl in _bootstrap_levels(prob, cfg, grids).items():
            levels[n] = lvl

    diags: list[LevelDiagnostics] = []
    for n in range(tg.n_steps - cfg.k, -1, -1):
        level, diag = _solve_level(prob, cfg, coeffs, rule, grids, levels, n,
                                   tg, wrap)
        levels[n] = level
        diags.append(diag)
        log.debug("level %d: picard=%d residual=%.3e out_of_box=%d box=%s",
                  n, diag.picard_iterations, diag.final_residual,
                  diag.out_of_box, diag.domain)

    ordered = tuple(levels[n] for n in range(tg.n_steps + 1))
    return SolveResult(levels=ordered, diagnostics=tuple(reversed(diags)), config=cfg)


def _solve_level(prob, cfg, coeffs, rule, grids, levels, n, tg, wrap):
    """Picard loop for all grid points of one time level."""
    grid = grids[n]
    x = grid.points
    t_n = tg.time(n)
    dt = tg.dt
    alpha = coeffs.alpha
    y, z = _eval_level(levels[n + 1], grid, prob.d)
    e_y = [None] * (cfg.k + 1)
    e_yw = [None] * (cfg.k + 1)
    oob_total = 0
    residual = math.inf
    iterations = 0
    for l in range(cfg.picard_max):
        if prob.coupled or l == 0:
            for j in range(1, cfg.k + 1):
                yq = levels[n + j].y_eval or levels[n + j].y
                e_y[j], e_yw[j], oob = expectation_batch(
                    yq, x, y, z, t_n, j * dt, prob, rule, wrap)
                oob_total += oob
        z_new = sum(alpha[j] * e_yw[j] for j in range(1, cfg.k + 1))
        rhs = -sum(alpha[j] * e_y[j] for j in range(1, cfg.k + 1))
        y_new = y
        for _ in range(cfg.inner_max):
            y_next = (rhs - np.asarray(prob.f(t_n, x, y_new, z_new), dtype=float)
                      .reshape(len(x), prob.m)) / alpha[0]
            inner_delta = float(np.max(np.abs(y_next - y_new)))
            y_new = y_next
            if inner_delta < cfg.eps0 / 10.0:
                break
        res_pts = np.maximum(np.abs(y_new - y).max(axis=1),
                             np.abs(z_new - z).max(axis=(1, 2)))
        residual = float(res_pts.max())
        y, z = y_new, z_new
        iterations = l + 1
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
            bad = int(np.argwhere(~np.isfinite(y.sum(axis=1) + z.sum(axis=(1, 2))))[0][0])
            raise NumericError("non-finite iterate in backward sweep",
                               detail={"level": n, "point": x[bad]})
        if residual < cfg.eps0:
            break
    else:
        worst = int(np.argmax(res_pts))
        raise SolverDivergenceError(
            f"fixed-point iteration did not reach {cfg.eps0:g} at level {n} "
            f"(residual {residual:.3e})",
            time_index=n, point=x[worst], residual=residual)
    level = _make_level(prob, n, t_n, grid, y, z)
    diag = LevelDiagnostics(n=n, picard_iterations=iterations,
                            final_residual=residual, out_of_box=oob_total,
                            domain=grid.domain)
    return level, diag


def _bootstrap_levels(prob, cfg, grids) -> dict[int, SolutionLevel]:
    """Seed levels N..N-k+1 with a refined one-step sweep from the terminal.

    Used only when the problem carries no exact solution; the refinement
    factor trades accuracy for cost and is not meant for convergence tables.
    """
    tg = cfg.time_grid
    refine = max(1, cfg.bootstrap_refine)
    window = cfg.k - 1
    sub_n = window * refine
    t_lo = tg.time(tg.n_steps - window)
    sub_cfg = replace(cfg, k=1, n_steps=sub_n, horizon=tg.horizon - t_lo,
                      domain_strategy="fixed",
                      domain0=grids[tg.n_steps].domain)

    shifted = _shift_problem(prob, t_lo)
    sub = solve(shifted, sub_cfg)
    out: dict[int, SolutionLevel] = {}
    for i in range(cfg.k):
        n = tg.n_steps - i
        sub_level = sub.levels[sub_n - i * refine]
        y, z = _eval_level(sub_level, grids[n], prob.d)
        out[n] = _make_level(prob, n, tg.time(n), grids[n], y, z)
    return out


def _shift_problem(prob, t0: float):
    """The same problem viewed on [0, T - t0] (time origin moved to t0)."""
    import copy

    shifted = copy.copy(prob)
    object.__setattr__(shifted, "b", lambda t, x, y, z: prob.b(t + t0, x, y, z))
    object.__setattr__(shifted, "sigma", lambda t, x, y, z: prob.sigma(t + t0, x, y, z))
    object.__setattr__(shifted, "f", lambda t, x, y, z: prob.f(t + t0, x, y, z))
    object.__setattr__(shifted, "horizon", prob.horizon - t0)
    object.__setattr__(shifted, "exact_y", None)
    object.__setattr__(shifted, "exact_z", None)
    return shifted


@dataclass(frozen=True)
class ErrorReport:
    e_y: float
    e_z: float
    norm: str


def measure_errors(result: SolveResult | list, prob, norm: str = "max",
                   point=None) -> ErrorReport:
    """Errors of the t = 0 level against the exact solution.

    ``norm`` is "max" (max-abs over the level-0 grid points and components),
    "rms", or "point" (absolute error at the coordinates in ``point``).
    """
    if prob.exact_y is None or prob.exact_z is None:
        raise UnsupportedOperationError("problem carries no exact solution")
    levels = result.levels if isinstance(result, SolveResult) else result
    lvl0 = next(l for l in levels if l.n == 0)
    if norm == "point":
        if point is None:
            raise InvalidParameterError("norm 'point' needs coordinates")
        pts = np.asarray(point, dtype=float)[None, :]
        num_y = interp_eval(lvl0.y, pts)
        num_z = interp_eval(lvl0.z, pts).reshape(1, prob.m, prob.d)
    else:
        pts = lvl0.grid.points
        num_y = lvl0.y_values
        num_z = lvl0.z_values
    err_y = np.abs(num_y - np.asarray(prob.exact_y(0.0, pts)).reshape(len(pts), prob.m))
    err_z = np.abs(num_z - np.asarray(prob.exact_z(0.0, pts)).reshape(len(pts), prob.m, prob.d))
    if norm == "rms":
        e_y = float(np.sqrt(np.mean(err_y**2)))
        e_z = float(np.sqrt(np.mean(err_z**2)))
    elif norm in ("max", "point"):
        e_y = float(np.max(err_y))
        e_z = float(np.max(err_z))
    else:
        raise InvalidParameterError(f"unknown norm {norm!r}")
    return ErrorReport(e_y=e_y, e_z=e_z, norm=norm)

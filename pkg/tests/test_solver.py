"""Multistep coefficients, domain propagation, and the backward solver."""

import dataclasses
import logging
import math
from fractions import Fraction

import numpy as np
import pytest

from fbsde_sparse.errors import (
    InvalidParameterError,
    SolverDivergenceError,
    UnsupportedOperationError,
)
from fbsde_sparse.interpolation import DomainBox, interp_eval
from fbsde_sparse.problems import (
    brownian_linear_problem,
    constant_problem,
    example1,
)
from fbsde_sparse.quadrature import build_gh_rule, conditional_expectation
from fbsde_sparse.solver import (
    SolverConfig,
    measure_errors,
    multistep_coeffs,
    propagate_domains,
    solve,
)

KNOWN_ALPHA_DT = {
    1: (Fraction(-1), Fraction(1)),
    2: (Fraction(-3, 2), Fraction(2), Fraction(-1, 2)),
    3: (Fraction(-11, 6), Fraction(3), Fraction(-3, 2), Fraction(1, 3)),
}


@pytest.mark.parametrize("k", [1, 2, 3])
def test_multistep_coeffs_exact_values(k):
    c = multistep_coeffs(k, 0.25)
    assert c.alpha_dt_exact == KNOWN_ALPHA_DT[k]
    assert np.allclose(c.alpha, np.array([float(v) for v in KNOWN_ALPHA_DT[k]]) / 0.25)


@pytest.mark.parametrize("k", range(1, 7))
def test_multistep_identities(k):
    c = multistep_coeffs(k, 0.1)
    # exact rational identities
    assert sum(c.alpha_dt_exact) == 0
    assert sum(j * a for j, a in enumerate(c.alpha_dt_exact)) == 1
    for m in range(2, k + 1):
        assert sum(j**m * a for j, a in enumerate(c.alpha_dt_exact)) == 0
    # float identities after scaling
    dt = 0.1
    assert abs(sum(c.alpha)) < 1e-12 / dt
    assert abs(sum(j * a for j, a in enumerate(c.alpha)) * dt - 1.0) < 1e-12


@pytest.mark.parametrize("k", range(1, 7))
def test_multistep_against_float_solve_oracle(k):
    vand = np.vander(np.arange(k + 1, dtype=float), increasing=True).T
    rhs = np.zeros(k + 1)
    rhs[1] = 1.0
    oracle = np.linalg.solve(vand, rhs)
    c = multistep_coeffs(k, 1.0)
    assert np.max(np.abs(c.alpha - oracle)) < 1e-12


def test_multistep_invalid():
    for k in (0, 7):
        with pytest.raises(InvalidParameterError):
            multistep_coeffs(k, 0.1)
    with pytest.raises(InvalidParameterError):
        multistep_coeffs(2, 0.0)


def _cfg(**kw):
    base = dict(k=1, n_steps=100, p=2, pq=2)
    base.update(kw)
    return SolverConfig(**base)


def test_propagate_domains_shift_mode_example():
    # literal recursion: both bounds move by +C_b dt, then widen
    d0 = DomainBox((0.0,), (1.0,))
    cfg = _cfg(domain_strategy="propagate", c_b=1.0, c_sigma=1.0,
               drift_mode="shift", n_steps=100, horizon=1.0)
    boxes = propagate_domains(d0, cfg, m_bound=2.0)
    widen = 2.0 * math.sqrt(2 * 0.01)
    assert boxes[1].lower[0] == pytest.approx(0.01 - widen, abs=1e-14)
    assert boxes[1].upper[0] == pytest.approx(1.01 + widen, abs=1e-14)


def test_propagate_domains_enclose_mode():
    d0 = DomainBox((0.0,), (1.0,))
    cfg = _cfg(domain_strategy="propagate", c_b=1.0, c_sigma=1.0,
               drift_mode="enclose", n_steps=100, horizon=1.0)
    boxes = propagate_domains(d0, cfg, m_bound=2.0)
    widen = 2.0 * math.sqrt(2 * 0.01)
    assert boxes[1].lower[0] == pytest.approx(-0.01 - widen, abs=1e-14)
    assert boxes[1].upper[0] == pytest.approx(1.01 + widen, abs=1e-14)


def test_propagate_domains_degenerate_and_fixed():
    d0 = DomainBox.cube(2, -1.0, 1.0)
    cfg = _cfg(domain_strategy="propagate", c_b=0.0, c_sigma=0.0, n_steps=10)
    assert all(b == d0 for b in propagate_domains(d0, cfg, m_bound=3.0))
    cfg_fixed = _cfg(domain_strategy="fixed", n_steps=10)
    boxes = propagate_domains(d0, cfg_fixed, m_bound=3.0)
    assert len(boxes) == 11 and all(b == d0 for b in boxes)


def test_propagate_domains_time_dependent_bounds():
    d0 = DomainBox((0.0,), (1.0,))
    cfg = _cfg(domain_strategy="propagate", c_b=lambda t: t, c_sigma=0.0,
               n_steps=2, horizon=1.0)
    boxes = propagate_domains(d0, cfg, m_bound=1.0)
    # first step uses t = 0 (no growth), second t = 0.5
    assert boxes[1] == d0
    assert boxes[2].lower[0] == pytest.approx(-0.25, abs=1e-14)


def test_config_validation():
    with pytest.raises(InvalidParameterError):
        SolverConfig(k=7, n_steps=10, p=2, pq=2)
    with pytest.raises(InvalidParameterError):
        SolverConfig(k=3, n_steps=2, p=2, pq=2)
    with pytest.raises(InvalidParameterError):
        SolverConfig(k=1, n_steps=2, p=2, pq=2, eps0=0.0)
    with pytest.raises(InvalidParameterError):
        SolverConfig(k=1, n_steps=2, p=2, pq=2, drift_mode="bogus")


def test_constant_problem_is_exact():
    prob = constant_problem(q=2, c=-1.5)
    for k in (1, 2, 3):
        cfg = SolverConfig(k=k, n_steps=8, p=3, pq=3)
        rep = measure_errors(solve(prob, cfg), prob)
        assert rep.e_y < 1e-12
        assert rep.e_z < 1e-12


def test_brownian_linear_problem_is_exact():
    prob = brownian_linear_problem()
    for k in (1, 2, 3):
        cfg = SolverConfig(k=k, n_steps=16, p=3, pq=3)
        rep = measure_errors(solve(prob, cfg), prob)
        assert rep.e_y < 1e-9
        assert rep.e_z < 1e-9


def test_backward_consistency_one_step_no_driver():
    # with k = 1 and f = 0 the level update is exactly E[next level]
    prob = brownian_linear_problem()
    prob = dataclasses.replace(
        prob, phi=lambda x: x**2,
        exact_y=lambda t, x: x**2 + (prob.horizon - t),
        exact_z=lambda t, x: 2.0 * x[:, None, :])
    cfg = SolverConfig(k=1, n_steps=4, p=4, pq=3)
    result = solve(prob, cfg)
    rule = build_gh_rule(1, 3)
    lvl1 = result.level(3)
    lvl2 = result.level(4)
    for row in (0, 2, 4):
        x = lvl1.grid.points[row]
        pair = conditional_expectation(
            lvl2.y, x, lvl2.y_values[row], lvl2.z_values[row],
            3 * cfg.time_grid.dt, cfg.time_grid.dt, prob, rule)
        assert lvl1.y_values[row, 0] == pytest.approx(pair.ey[0], abs=1e-11)


def test_solution_levels_reproduce_grid_values():
    prob = example1()
    cfg = SolverConfig(k=2, n_steps=8, p=5, pq=3)
    result = solve(prob, cfg)
    for lvl in result.levels[:3]:
        back = interp_eval(lvl.y, lvl.grid.points)
        scale = max(1.0, float(np.max(np.abs(lvl.y_values))))
        assert np.max(np.abs(back - lvl.y_values)) < 1e-10 * scale


def test_solve_is_deterministic():
    prob = example1()
    cfg = SolverConfig(k=2, n_steps=8, p=6, pq=3)
    a = solve(prob, cfg)
    b = solve(prob, cfg)
    assert np.array_equal(a.level(0).y_values, b.level(0).y_values)
    assert np.array_equal(a.level(0).z_values, b.level(0).z_values)


def test_diagnostics_and_logging(caplog):
    prob = example1()
    cfg = SolverConfig(k=1, n_steps=4, p=4, pq=3)
    with caplog.at_level(logging.DEBUG, logger="fbsde_sparse.solver"):
        result = solve(prob, cfg)
    assert len(result.diagnostics) == 4
    for d in result.diagnostics:
        assert d.picard_iterations >= 1
        assert d.final_residual < cfg.eps0
    assert any("picard=" in rec.message for rec in caplog.records)


def test_measure_errors_norms_and_offsets():
    prob = constant_problem(q=1, c=2.0)
    cfg = SolverConfig(k=1, n_steps=4, p=2, pq=2)
    result = solve(prob, cfg)
    assert measure_errors(result, prob).e_y < 1e-12
    # inject a constant offset into the level-0 values
    lvl0 = result.level(0)
    shifted = dataclasses.replace(lvl0, y_values=lvl0.y_values + 0.25)
    levels = [shifted] + list(result.levels[1:])
    rep = measure_errors(levels, prob)
    assert rep.e_y == pytest.approx(0.25, abs=1e-13)
    rep_rms = measure_errors(levels, prob, norm="rms")
    assert rep_rms.e_y == pytest.approx(0.25, abs=1e-12)
    rep_pt = measure_errors(result, prob, norm="point", point=(0.5,))
    assert rep_pt.e_y < 1e-12
    with pytest.raises(InvalidParameterError):
        measure_errors(result, prob, norm="point")
    with pytest.raises(InvalidParameterError):
        measure_errors(result, prob, norm="bogus")


def test_measure_errors_requires_exact_solution():
    prob = dataclasses.replace(constant_problem(), exact_y=None, exact_z=None)
    cfg = SolverConfig(k=1, n_steps=4, p=2, pq=2)
    result = solve(prob, cfg)
    with pytest.raises(UnsupportedOperationError):
        measure_errors(result, prob)


def test_bootstrap_initialization_without_exact_solution():
    truth = brownian_linear_problem()
    blind = dataclasses.replace(truth, exact_y=None, exact_z=None)
    cfg = SolverConfig(k=2, n_steps=8, p=3, pq=3, bootstrap_refine=8)
    result = solve(blind, cfg)
    lvl0 = result.level(0)
    err = np.max(np.abs(lvl0.y_values[:, 0] - lvl0.grid.points[:, 0]))
    assert err < 1e-6


def test_divergence_reported_with_context():
    # the driver's Lipschitz constant times dt exceeds 1, so the fixed
    # point iteration grows slowly instead of converging
    base = constant_problem(q=1, c=1.0)
    stiff = dataclasses.replace(
        base, f=lambda t, x, y, z: 4.8 * y, name="stiff")
    cfg = SolverConfig(k=1, n_steps=4, p=2, pq=2, picard_max=40)
    with pytest.raises(SolverDivergenceError) as exc_info:
        solve(stiff, cfg)
    err = exc_info.value
    assert err.time_index == 3
    assert err.point is not None
    assert err.residual is not None and err.residual > cfg.eps0

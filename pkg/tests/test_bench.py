"""Experiment harness: rate fits, CSV emission, CLI behavior."""

import dataclasses
import math

import numpy as np
import pytest

import fbsde_sparse.bench as bench
from fbsde_sparse.bench import (
    CSV_HEADER,
    ConvergenceRow,
    ExperimentResult,
    ExperimentSpec,
    emit_csv,
    emit_scaling_csv,
    fit_rate,
    parse_csv,
    run_experiment,
    scaling_report,
)
from fbsde_sparse.cli import main
from fbsde_sparse.errors import InvalidParameterError


def test_fit_rate_exact_geometric_sequence():
    assert fit_rate([8, 16, 32], [4e-2, 1e-2, 2.5e-3]) == pytest.approx(2.0, abs=1e-12)


def test_fit_rate_scale_invariance():
    ns = [8, 16, 32, 64]
    errs = np.array([3e-1, 9e-2, 2e-2, 6e-3])
    assert fit_rate(ns, errs) == pytest.approx(fit_rate(ns, 7.0 * errs), abs=1e-12)


def test_fit_rate_undefined_for_zeros():
    assert math.isnan(fit_rate([8, 16], [1e-3, 0.0]))


def test_spec_validation():
    with pytest.raises(InvalidParameterError):
        ExperimentSpec(problem="example1", k=1, n_list=(16, 8))
    with pytest.raises(InvalidParameterError):
        ExperimentSpec(problem="example1", k=3, n_list=(2, 4))


def _fake_result(rows=None):
    spec = ExperimentSpec(problem="demo", k=1, n_list=(8,))
    if rows is None:
        rows = (ConvergenceRow(n=8, err_y=1e-2, err_z=2e-2, runtime_s=0.5,
                               picard_max=3),)
    return ExperimentResult(spec=spec, p=4, pq=4, rows=tuple(rows),
                            cr_y=2.0, cr_z=2.1)


def test_emit_csv_single_row(tmp_path):
    path = tmp_path / "out.csv"
    emit_csv(_fake_result(), path)
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert lines[0] == CSV_HEADER
    assert lines[1] == "demo,1,4,4,8,1.00000E-02,2.00000E-02,5.00000E-01,2.00000E+00,2.10000E+00"


def test_emit_csv_refuses_empty(tmp_path):
    with pytest.raises(InvalidParameterError):
        emit_csv(_fake_result(rows=()), tmp_path / "x.csv")


def test_emit_csv_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        emit_csv(_fake_result(), tmp_path / "nodir" / "x.csv")


def test_csv_round_trip(tmp_path):
    path = tmp_path / "out.csv"
    result = _fake_result()
    emit_csv(result, path)
    rows = parse_csv(path)
    assert rows[0]["N"] == 8 and rows[0]["k"] == 1
    assert rows[0]["err_y"] == 1e-2
    # re-emitting the parsed values reproduces the file byte for byte
    re_rows = tuple(ConvergenceRow(n=r["N"], err_y=r["err_y"], err_z=r["err_z"],
                                   runtime_s=r["runtime_s"], picard_max=0)
                    for r in rows)
    re_result = dataclasses.replace(result, rows=re_rows,
                                    cr_y=rows[0]["cr_y"], cr_z=rows[0]["cr_z"])
    path2 = tmp_path / "out2.csv"
    emit_csv(re_result, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_run_experiment_structure():
    spec = ExperimentSpec(problem="brownian_linear", k=1, n_list=(4, 8), p=3, pq=3)
    result = run_experiment(spec)
    assert [r.n for r in result.rows] == [4, 8]
    assert all(not r.failed for r in result.rows)
    assert all(r.err_y < 1e-9 for r in result.rows)
    assert any("fewer than 3 rows" in w for w in result.warnings)
    assert math.isnan(result.rows[0].pairwise_rate_y)
    assert result.rows[0].picard_max >= 1


def _picard_divergent_problem():
    # drift coupling with Lipschitz constant x dt above 1 for N <= 8, so the
    # outer fixed point drifts away slowly without overflowing
    from fbsde_sparse.problems import brownian_linear_problem

    return dataclasses.replace(
        brownian_linear_problem(),
        b=lambda t, x, y, z: 8.4 * y,
        sigma=lambda t, x, y, z: np.zeros((len(x), 1, 1)),
        coupled=True, name="stiff")


def test_run_experiment_marks_divergent_rows(monkeypatch):
    stiff = _picard_divergent_problem()
    monkeypatch.setattr(bench, "get_problem", lambda spec, horizon=1.0: stiff)
    spec = ExperimentSpec(problem="stiff", k=1, n_list=(4, 8), p=2, pq=2)
    result = run_experiment(spec)
    assert all(r.failed for r in result.rows)
    assert math.isnan(result.cr_y)
    assert any("fewer than 2 successful rows" in w for w in result.warnings)


def test_scaling_report_and_csv(tmp_path):
    rows = scaling_report("example2", [3, 4], n_steps=8, k=1)
    assert [r["q"] for r in rows] == [3, 4]
    assert rows[0]["points"] == 81 and rows[1]["points"] == 297
    path = tmp_path / "scaling.csv"
    emit_scaling_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "problem,q,p,pq,N,points,runtime_s"
    assert len(lines) == 3
    with pytest.raises(InvalidParameterError):
        emit_scaling_csv([], path)


def test_cli_solve_and_exit_codes(tmp_path):
    out = tmp_path / "cli.csv"
    code = main(["solve", "--problem", "brownian_linear", "--k", "1",
                 "--N", "4,8", "--p", "3", "--pq", "3", "--out", str(out)])
    assert code == 0
    assert out.read_text().startswith(CSV_HEADER)
    assert main(["solve", "--problem", "nosuch", "--k", "1", "--N", "4",
                 "--out", str(out)]) == 2
    assert main(["solve", "--problem", "example1", "--k", "9", "--N", "16",
                 "--out", str(out)]) == 2
    assert main(["nonsense"]) == 2


def test_cli_validate(tmp_path):
    assert main(["validate", "--problem", "example3:q=2", "--samples", "300"]) == 0
    assert main(["validate", "--problem", "nosuch"]) == 2


def test_cli_divergence_exit(monkeypatch, tmp_path):
    stiff = _picard_divergent_problem()
    monkeypatch.setattr(bench, "get_problem", lambda spec, horizon=1.0: stiff)
    out = tmp_path / "d.csv"
    code = main(["solve", "--problem", "stiff", "--k", "1", "--N", "4",
                 "--out", str(out)])
    assert code == 3


def test_cli_norm_parsing(tmp_path):
    out = tmp_path / "n.csv"
    code = main(["solve", "--problem", "brownian_linear", "--k", "1",
                 "--N", "4", "--p", "3", "--pq", "3",
                 "--norm", "point:0.5", "--out", str(out)])
    assert code == 0
    rows = parse_csv(out)
    assert rows[0]["err_y"] < 1e-9

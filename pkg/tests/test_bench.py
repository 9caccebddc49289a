import math

import numpy as np
import pytest

from erkadjoint.bench import (
    HEAT_COLUMNS,
    ScalingRow,
    heat2d_run,
    loglog_slope,
    run_method,
    scaling_run,
    wp_run,
)
from erkadjoint.forward import StepController
from erkadjoint.problems import GlvSpec, Heat2dSpec, glv_generate, heat2d_problem


def test_heat_rows_small_grid():
    rows = heat2d_run(Heat2dSpec(n_p=6, dt=1e-4), ["adjoint", "cfsa", "nd"])
    assert [r.method for r in rows] == ["forward", "adjoint", "cfsa", "nd"]
    assert all(r.status == "ok" and r.rel_error_pct >= 0 for r in rows)
    assert len(rows[0].cells()) == len(HEAT_COLUMNS)
    by = {r.method: r.rel_error_pct for r in rows}
    assert by["adjoint"] == pytest.approx(by["cfsa"], rel=1e-8)


def test_heat_rejects_unknown_method():
    with pytest.raises(ValueError):
        heat2d_run(Heat2dSpec(n_p=4, dt=1e-4), ["magic"])


def test_run_method_param_subset():
    problem = glv_generate(GlvSpec(N=3, seed=0))
    ctl = StepController.tol(1e-8)
    full = run_method("adjoint", problem, "cash_karp", controller=ctl)
    part = run_method("adjoint", problem, "cash_karp", controller=ctl, param_indices=[2, 0])
    np.testing.assert_array_equal(part.dalpha, full.dalpha[:, [2, 0]])


def test_wp_rows_and_trend():
    problem = glv_generate(GlvSpec(N=4, seed=1))
    tols = [1e-4, 1e-6, 1e-8, 1e-10, 1e-12]
    rows = wp_run(problem, None, ["adjoint"], tols, repeats=1)
    assert [r.status for r in rows] == ["ok"] * len(tols) + ["baseline"]
    assert rows[-1].error == 0.0
    errs = [r.error for r in rows[:-1]]
    inversions = sum(b > a for a, b in zip(errs, errs[1:]))
    assert inversions <= 1
    assert all(r.mean_ms > 0 and r.error >= 0 for r in rows)


def test_wp_adjoint_baseline_shared():
    problem = glv_generate(GlvSpec(N=3, seed=2))
    rows = wp_run(problem, None, ["adjoint", "nd"], [1e-6, 1e-9], repeats=1, baseline="adjoint")
    assert len(rows) == 4 and all(r.status == "ok" for r in rows)
    nd = [r.error for r in rows if r.method == "nd"]
    assert min(nd) > 1e-9  # finite-difference truncation shows against the adjoint


def test_wp_input_checks():
    problem = glv_generate(GlvSpec(N=2))
    with pytest.raises(ValueError):
        wp_run(problem, None, ["adjoint"], [1e-8, 1e-6])
    with pytest.raises(ValueError):
        wp_run(problem, None, ["adjoint"], [1e-6], baseline="other")


def test_wp_failure_recorded_not_raised():
    problem = glv_generate(GlvSpec(N=2))
    rows = wp_run(problem, None, ["adjoint"], [1e-6], repeats=1, lanes=99)
    assert all(r.status.startswith("failed") for r in rows)


def test_scaling_rows():
    rows, slopes = scaling_run([3, 6], 1e-6, ["adjoint", "cfsa"], repeats=1)
    assert len(rows) == 4
    assert {r.method for r in rows} == {"adjoint", "cfsa"}
    assert rows[0].size == 3 + 12
    assert set(slopes) == {"adjoint", "cfsa"}
    assert all(math.isfinite(s) for s in slopes.values())


def test_loglog_slope_exact():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    assert loglog_slope(x, 3 * x ** 1.5) == pytest.approx(1.5)
    assert ScalingRow("adjoint", 2, 6, 1.0, 0.0).cells()[3] == 8

import math

import numpy as np
import pytest
from scipy.linalg import expm

from erkadjoint.adjoint import Objective, solve_endpoint
from erkadjoint.adtape import record
from erkadjoint.forward import OdeProblem, StepController
from erkadjoint.problems import GlvSpec, glv_generate
from erkadjoint.reference import (
    casa_naive_solve,
    cfsa_sensitivity,
    cfsa_solve,
    nd_sensitivity,
)
from erkadjoint.tableau import get_tableau

CK = get_tableau("cash_karp")
EULER = get_tableau("euler")


# ---------------------------------------------------------------- finite differences


def test_nd_square_of_parameter():
    tape = record(lambda u, a, t: [a[0] * a[0]], 1, 1)
    problem = OdeProblem(tape, [0.0], [1.0], 0.0, 1.0)
    d = nd_sensitivity(problem, EULER, dt=1.0, bump=1e-6)
    assert d[0, 0] == pytest.approx(2.000001, abs=1e-8)


def test_nd_linear_growth(linear_problem):
    d = nd_sensitivity(linear_problem, CK, controller=StepController.tol(1e-12), bump=1e-6)
    assert abs(d[0, 0] - math.exp(0.5)) < 1e-4
    d_ic = nd_sensitivity(linear_problem, CK, controller=StepController.tol(1e-12), wrt="ic")
    assert abs(d_ic[0, 0] - math.exp(0.5)) < 1e-4


def test_nd_bump_tradeoff(linear_problem):
    # fixed steps: a smooth map, so the error is truncation (~bump) or roundoff (~eps/bump)
    exact = solve_endpoint(linear_problem, CK, dt=0.01).dalpha[0, 0]
    errs = {h: abs(nd_sensitivity(linear_problem, CK, dt=0.01, bump=h)[0, 0] - exact)
            for h in (1e-2, 1e-7, 1e-13)}
    assert errs[1e-7] < errs[1e-2]
    assert errs[1e-7] < errs[1e-13]


def test_nd_indices_subset():
    problem = glv_generate(GlvSpec(N=3, seed=0))
    ctl = StepController.tol(1e-8)
    full = nd_sensitivity(problem, CK, controller=ctl)
    part = nd_sensitivity(problem, CK, controller=ctl, indices=[4, 1])
    np.testing.assert_array_equal(part, full[:, [4, 1]])


def test_nd_argument_checks(linear_problem):
    with pytest.raises(ValueError):
        nd_sensitivity(linear_problem, CK, dt=0.1, bump=0.0)
    with pytest.raises(ValueError):
        nd_sensitivity(linear_problem, CK, dt=0.1, wrt="time")


# ---------------------------------------------------------------- forward sensitivities


def test_cfsa_linear_growth(linear_problem):
    res = cfsa_solve(linear_problem, CK, StepController.tol(1e-12))
    assert abs(res.du_du0[0, 0] - math.exp(0.5)) < 1e-9
    assert abs(res.du_dalpha[0, 0] - 1.0 * math.exp(0.5)) < 1e-9


def test_cfsa_parameter_free_rhs():
    tape = record(lambda u, a, t: [-u[0] + 0.0 * a[0]], 1, 1)
    problem = OdeProblem(tape, [1.0], [7.0], 0.0, 1.0)
    res = cfsa_solve(problem, CK, StepController.tol(1e-10))
    assert res.du_dalpha[0, 0] == 0.0
    assert abs(res.du_du0[0, 0] - math.exp(-1.0)) < 1e-9


def test_cfsa_matches_adjoint_on_glv():
    problem = glv_generate(GlvSpec(N=3, seed=7))
    ctl = StepController.tol(1e-11)
    adj = solve_endpoint(problem, CK, ctl)
    fwd = cfsa_sensitivity(problem, CK, ctl)
    assert np.max(np.abs(adj.dalpha - fwd.dalpha)) <= 1e-6 * np.max(np.abs(adj.dalpha))
    assert np.max(np.abs(adj.du0 - fwd.du0)) <= 1e-6 * np.max(np.abs(adj.du0))


def test_cfsa_fixed_step_equals_discrete_adjoint():
    # on a fixed grid the forward-sensitivity recursion is the exact derivative
    # of the discrete map, so the two agree to roundoff
    problem = glv_generate(GlvSpec(N=3, seed=1))
    adj = solve_endpoint(problem, get_tableau("rk4"), dt=0.1)
    fwd = cfsa_sensitivity(problem, get_tableau("rk4"), dt=0.1)
    np.testing.assert_allclose(fwd.dalpha, adj.dalpha, rtol=1e-11, atol=1e-14)


def test_cfsa_needs_some_output(linear_problem):
    with pytest.raises(ValueError):
        cfsa_solve(linear_problem, CK, dt=0.1, want_ic=False, want_params=False)


# ---------------------------------------------------------------- continuous adjoint


def test_casa_linear_growth(linear_problem):
    r = casa_naive_solve(linear_problem, CK, StepController.tol(1e-12))
    assert abs(r.dalpha[0, 0] - math.exp(0.5)) < 1e-6
    assert abs(r.du0[0, 0] - math.exp(0.5)) < 1e-6
    assert r.diagnostics["reconstruction_error"] < 1e-9


def test_casa_lambda_matches_matrix_exponential():
    A = np.array([[-0.5, 1.0], [-1.0, -0.2]])
    tape = record(lambda u, a, t: A @ u, 2, 0)
    problem = OdeProblem(tape, [1.0, 0.5], [], 0.0, 2.0)
    c = np.array([[1.0, -2.0]])
    r = casa_naive_solve(problem, CK, StepController.tol(1e-12), Objective.linear(c))
    np.testing.assert_allclose(r.du0, c @ expm(2.0 * A), atol=1e-6)


def test_casa_rejects_integrand(linear_problem):
    integrand = record(lambda u, a, t: [u[0]], 1, 1)
    with pytest.raises(ValueError):
        casa_naive_solve(linear_problem, CK, StepController(), Objective.integral(integrand))


def test_four_methods_agree():
    problem = glv_generate(GlvSpec(N=3, seed=2))
    ctl = StepController.tol(1e-10)
    obj = Objective.select(3, [1])
    got = {
        "adjoint": solve_endpoint(problem, CK, ctl, obj).dalpha,
        "cfsa": cfsa_sensitivity(problem, CK, ctl, obj).dalpha,
        "casa": casa_naive_solve(problem, CK, ctl, obj).dalpha,
        "nd": nd_sensitivity(problem, CK, obj, controller=ctl, bump=1e-6),
    }
    scale = np.max(np.abs(got["adjoint"]))
    names = list(got)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            tol = 1e-4 if "nd" in (a, b) else 1e-6
            assert np.max(np.abs(got[a] - got[b])) <= tol * scale, (a, b)

"""Fast oracle checks behind ``erkadjoint validate``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .adjoint import Objective, solve_endpoint
from .adtape import Workspace, forward_eval, record, reverse_vjp
from .forward import OdeProblem, StepController, integrate_fixed, propose_step, replay_steps
from .problems import GlvSpec, glv_generate
from .tableau import TABLEAUS, get_tableau


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def _linear_problem(alpha=0.5):
    tape = record(lambda u, a, t: [a[0] * u[0]], 1, 1)
    return OdeProblem(tape, [1.0], [alpha], 0.0, 1.0)


def check_linear_oracle() -> Check:
    r = solve_endpoint(_linear_problem(), get_tableau("cash_karp"), StepController.tol(1e-12))
    exact = math.exp(0.5)
    err = max(abs(r.dalpha[0, 0] - exact), abs(r.du0[0, 0] - exact))
    return Check("linear ODE adjoint vs analytic", bool(err < 1e-7), f"max error {err:.2e}")


def check_frozen_fd(seeds=(0, 1, 2), bump=1e-6) -> Check:
    tb = get_tableau("cash_karp")
    ctl = StepController.tol(1e-8)
    worst = 0.0
    for seed in seeds:
        problem = glv_generate(GlvSpec(N=3, seed=seed))
        obj = Objective.select(3, [0])
        r = solve_endpoint(problem, tb, ctl, obj)
        dts = r.trajectory.dt
        for k in range(problem.P):
            a_plus = problem.alpha.copy()
            a_minus = problem.alpha.copy()
            a_plus[k] += bump
            a_minus[k] -= bump
            fd = (
                replay_steps(problem.with_alpha(a_plus), tb, dts)[0]
                - replay_steps(problem.with_alpha(a_minus), tb, dts)[0]
            ) / (2 * bump)
            worst = max(worst, abs(fd - r.dalpha[0, k]) / max(abs(fd), 1e-8))
    return Check("GLV adjoint vs frozen-step central differences", bool(worst < 1e-5),
                 f"max relative error {worst:.2e}")


def check_lane_invariance() -> Check:
    problem = glv_generate(GlvSpec(N=5, seed=3))
    tb = get_tableau("cash_karp")
    ctl = StepController.tol(1e-8)
    ref = solve_endpoint(problem, tb, ctl, lanes=1)
    same = all(
        np.array_equal(ref.dalpha, r.dalpha) and np.array_equal(ref.du0, r.du0)
        for r in (solve_endpoint(problem, tb, ctl, lanes=w) for w in (2, 4, 8))
    )
    return Check("lane width invariance (W = 1, 2, 4, 8)", same, "bitwise" if same else "differs")


def check_vjp_fd(n_cases=10, seed=0) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        n, p = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        W = rng.normal(size=(n, n + p))

        def build(u, a, t, W=W):
            z = np.concatenate([u, a])
            return [np.sin(W[i] @ z) + u[i] * u[i] for i in range(n)]

        tape = record(build, n, p)
        ws = Workspace(tape, lanes=1)
        u, a = rng.normal(size=n), rng.normal(size=p)
        lam = rng.normal(size=n)
        forward_eval(tape, ws, u, a, 0.0)
        gx, _ = reverse_vjp(tape, ws, lam)
        h = 1e-6
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            fd = (lam @ forward_eval(tape, ws, u + e, a, 0.0)
                  - lam @ forward_eval(tape, ws, u - e, a, 0.0)) / (2 * h)
            worst = max(worst, abs(fd - gx[j]) / max(abs(fd), 1.0))
    return Check("tape VJP vs central differences", bool(worst < 1e-6), f"max relative error {worst:.2e}")


def check_controller() -> Check:
    worst = 0.0
    for v in np.round(np.arange(0.1, 3.01, 0.1), 10):
        dt, _ = propose_step(v, 1.0, 5, 4)
        if v > 1:
            ref = max(0.9 / v ** 3, 0.2)
        elif v < 0.5:
            ref = min(0.9 / v ** 5, 5.0)
        else:
            ref = 1.0
        worst = max(worst, abs(dt - ref))
    return Check("step controller three-branch rule", bool(worst <= 1e-15), f"max deviation {worst:.1e}")


def check_orders() -> Check:
    tape = record(lambda u, a, t: [u[0]], 1, 0)
    problem = OdeProblem(tape, [1.0], [], 0.0, 1.0)
    parts = []
    ok = True
    for name in TABLEAUS:
        tb = get_tableau(name)
        dts = [0.1, 0.05, 0.025] if tb.order_high < 5 else [0.2, 0.1, 0.05]
        errs = [abs(integrate_fixed(problem, tb, h)[0][0] - math.e) for h in dts]
        slope = float(np.polyfit(np.log(dts), np.log(errs), 1)[0])
        ok = ok and abs(slope - tb.order_high) <= 0.3
        parts.append(f"{name}={slope:.2f}")
    return Check("fixed-step convergence orders", ok, ", ".join(parts))


CHECKS: list[Callable[[], Check]] = [
    check_linear_oracle,
    check_frozen_fd,
    check_lane_invariance,
    check_vjp_fd,
    check_controller,
    check_orders,
]


def run_all() -> list[Check]:
    return [fn() for fn in CHECKS]

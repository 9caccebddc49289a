"""Discrete adjoint of explicit Runge-Kutta trajectories.

The reverse pass walks accepted steps backwards, recomputes the stages of
each step from its checkpoint and scatters adjoints from each stage to the
stages it depends on. Every Jacobian product is a tape VJP; the ``M``
objective outputs are pushed through ``ceil(M / W)`` lane batches.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .adtape import DimensionError, Tape, Workspace, forward_eval, vjp_batched
from .forward import (
    OdeProblem,
    StepController,
    Trajectory,
    integrate_adaptive,
    integrate_fixed,
    stage_values,
)
from .tableau import ButcherTableau


class AdjointDivergenceError(RuntimeError):
    """Non-finite adjoint values appeared while reversing a step."""

    def __init__(self, step: int):
        super().__init__(f"non-finite adjoint after reversing step {step}")
        self.step = step


class DivergenceInReverse(RuntimeError):
    """Stage recomputation produced non-finite values."""

    def __init__(self, t: float):
        super().__init__(f"non-finite stage value recomputed at t={t!r}")
        self.t = t


ArrayFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class Objective:
    """``psi_i = E_i(u0, uT, alpha) + integral of R_i(u, alpha, t) dt``.

    The partial-derivative callbacks take ``(u0, uT, alpha)`` and return
    ``M x N`` (``d_uT``, ``d_u0``) or ``M x P`` (``d_alpha``) arrays. Missing
    ``d_u0``/``d_alpha`` mean ``E`` does not depend on that argument.
    ``integrand`` is an optional tape over ``(u, alpha, t)`` with ``M``
    outputs.
    """

    M: int
    value: ArrayFn
    d_uT: ArrayFn
    d_u0: Optional[ArrayFn] = None
    d_alpha: Optional[ArrayFn] = None
    integrand: Optional[Tape] = None

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("an objective needs at least one output")
        if self.integrand is not None and self.integrand.n_out != self.M:
            raise DimensionError("integrand tape must have M outputs")

    @classmethod
    def linear(cls, C) -> "Objective":
        """``psi = C @ u(tf)``."""
        C = np.array(C, dtype=np.float64, ndmin=2)
        C.setflags(write=False)
        return cls(
            M=C.shape[0],
            value=lambda u0, uT, a: C @ uT,
            d_uT=lambda u0, uT, a: C.copy(),
        )

    @classmethod
    def identity(cls, N: int) -> "Objective":
        """``psi_i = u_i(tf)``, all ``N`` components."""
        return cls.linear(np.eye(N))

    @classmethod
    def select(cls, N: int, indices) -> "Objective":
        """``psi_i = u_{indices[i]}(tf)``."""
        return cls.linear(np.eye(N)[list(indices)])

    @classmethod
    def initial_state(cls, N: int) -> "Objective":
        """``psi = u0``; depends on the initial state only."""
        eye = np.eye(N)
        return cls(
            M=N,
            value=lambda u0, uT, a: np.array(u0, dtype=np.float64),
            d_uT=lambda u0, uT, a: np.zeros((N, N)),
            d_u0=lambda u0, uT, a: eye.copy(),
        )

    @classmethod
    def integral(cls, integrand: Tape) -> "Objective":
        """Pure trajectory cost with no end-point term."""
        M, N = integrand.n_out, integrand.n_state
        return cls(
            M=M,
            value=lambda u0, uT, a: np.zeros(M),
            d_uT=lambda u0, uT, a: np.zeros((M, N)),
            integrand=integrand,
        )

    def with_integrand(self, integrand: Tape) -> "Objective":
        return Objective(self.M, self.value, self.d_uT, self.d_u0, self.d_alpha, integrand)

    def without_integrand(self) -> "Objective":
        return Objective(self.M, self.value, self.d_uT, self.d_u0, self.d_alpha, None)


def _shaped(arr, shape, what):
    arr = np.array(arr, dtype=np.float64)
    if arr.shape != shape:
        raise DimensionError(f"{what} must have shape {shape}, got {arr.shape}")
    return arr


@dataclass
class AdjointState:
    """Adjoints of the current checkpoint state, one row per objective output.

    ``w`` is ``M x N``, ``a`` accumulates ``M x P`` parameter adjoints and
    ``v`` holds the quadrature adjoints (constant one when an integrand is
    present, since each running integral feeds only its own successor).
    """

    w: np.ndarray
    a: np.ndarray
    v: Optional[np.ndarray] = None


@dataclass
class SensitivityResult:
    du0: np.ndarray
    dalpha: np.ndarray
    psi: np.ndarray
    uT: np.ndarray
    n_accepted: int
    n_rejected: int
    t_forward: float = 0.0
    t_reverse: float = 0.0
    trajectory: Optional[Trajectory] = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def runtime(self) -> float:
        return self.t_forward + self.t_reverse


def recompute_stages(
    tape: Tape, ws: Workspace, u, alpha, t: float, dt: float, tableau: ButcherTableau
) -> tuple[np.ndarray, np.ndarray]:
    """Stage states and slopes of one step, rebuilt from its checkpoint."""
    U, K = stage_values(tableau, tape, ws, u, alpha, t, dt)
    if not (np.all(np.isfinite(U)) and np.all(np.isfinite(K))):
        raise DivergenceInReverse(t)
    return U, K


def adjoint_step(
    tableau: ButcherTableau,
    tape: Tape,
    ws: Workspace,
    traj: Trajectory,
    n: int,
    state: AdjointState,
    alpha,
    integrand: Optional[Tape] = None,
    rws: Optional[Workspace] = None,
) -> AdjointState:
    """Reverse step ``n``: on entry ``state.w`` is the adjoint of ``u^{n+1}``.

    On exit it is the adjoint of ``u^n`` and ``state.a`` has gained the
    parameter contributions of the step's stages. Updates happen in place.
    """
    u, t, h = traj.checkpoint(n)
    a, b, c = tableau.a, tableau.b, tableau.c
    s = tableau.stages
    U, _ = recompute_stages(tape, ws, u, alpha, t, h, tableau)

    w_next = state.w
    kbar = [(h * b[q]) * w_next for q in range(s)]
    w_new = w_next.copy()
    for m in range(s - 1, -1, -1):
        tm = t + c[m] * h
        seed = kbar[m]
        gx = ga = None
        if np.any(seed):
            forward_eval(tape, ws, U[m], alpha, tm)
            gx, ga = vjp_batched(tape, ws, seed)
        if integrand is not None and b[m] != 0.0:
            forward_eval(integrand, rws, U[m], alpha, tm)
            rx, ra = vjp_batched(integrand, rws, (h * b[m]) * state.v)
            gx = rx if gx is None else gx + rx
            ga = ra if ga is None else ga + ra
        if gx is None:
            continue
        state.a += ga
        w_new += gx
        for j in range(m):
            if a[m, j] != 0.0:
                kbar[j] += (h * a[m, j]) * gx
    if not (np.all(np.isfinite(w_new)) and np.all(np.isfinite(state.a))):
        raise AdjointDivergenceError(n)
    state.w = w_new
    return state


def reverse_pass(
    problem: OdeProblem,
    tableau: ButcherTableau,
    traj: Trajectory,
    objective: Objective,
    *,
    lanes: int = 4,
) -> tuple[np.ndarray, np.ndarray]:
    """``(dpsi/du0, dpsi/dalpha)`` for a recorded trajectory."""
    N, P, M = problem.N, problem.P, objective.M
    u0, uT, alpha = problem.u0, traj.u[-1], problem.alpha
    w = _shaped(objective.d_uT(u0, uT, alpha), (M, N), "d_uT")
    abar = (
        np.zeros((M, P)) if objective.d_alpha is None
        else _shaped(objective.d_alpha(u0, uT, alpha), (M, P), "d_alpha")
    )
    integrand = objective.integrand
    rws = None
    v = None
    if integrand is not None:
        if integrand.n_state != N or integrand.n_param != P:
            raise DimensionError("integrand tape dimensions do not match the problem")
        rws = Workspace(integrand, lanes=lanes)
        v = np.eye(M)
    ws = Workspace(problem.tape, lanes=lanes)
    state = AdjointState(w, abar, v)
    for n in range(traj.T - 1, -1, -1):
        adjoint_step(tableau, problem.tape, ws, traj, n, state, alpha, integrand, rws)
    du0 = state.w
    if objective.d_u0 is not None:
        du0 = du0 + _shaped(objective.d_u0(u0, uT, alpha), (M, N), "d_u0")
    return du0, state.a


def _solve(problem, tableau, controller, dt, objective, lanes):
    if objective is None:
        objective = Objective.identity(problem.N)
    t0 = time.perf_counter()
    if controller is not None and dt is not None:
        raise ValueError("give a controller or dt, not both")
    if controller is None and dt is None:
        raise ValueError("need a step controller or a fixed dt")
    quad = objective.integrand
    if controller is not None:
        uT, traj = integrate_adaptive(problem, tableau, controller, quadrature=quad)
    else:
        uT, traj = integrate_fixed(problem, tableau, dt, quadrature=quad)
    t1 = time.perf_counter()
    du0, dalpha = reverse_pass(problem, tableau, traj, objective, lanes=lanes)
    t2 = time.perf_counter()
    psi = np.array(objective.value(problem.u0, uT, problem.alpha), dtype=np.float64).reshape(-1)
    if traj.q is not None:
        psi = psi + traj.q
    return SensitivityResult(
        du0=du0, dalpha=dalpha, psi=psi, uT=uT,
        n_accepted=traj.T, n_rejected=traj.n_rejected,
        t_forward=t1 - t0, t_reverse=t2 - t1, trajectory=traj,
    )


def solve_endpoint(
    problem: OdeProblem,
    tableau: ButcherTableau,
    controller: Optional[StepController] = None,
    objective: Optional[Objective] = None,
    *,
    dt: Optional[float] = None,
    lanes: int = 4,
) -> SensitivityResult:
    """Forward solve plus discrete adjoint for an end-point objective.

    The default objective is ``psi_i = u_i(tf)`` for every component.
    """
    if objective is not None and objective.integrand is not None:
        raise ValueError("objective has an integrand; use solve_with_trajectory_cost")
    return _solve(problem, tableau, controller, dt, objective, lanes)


def solve_with_trajectory_cost(
    problem: OdeProblem,
    tableau: ButcherTableau,
    controller: Optional[StepController] = None,
    objective: Optional[Objective] = None,
    *,
    dt: Optional[float] = None,
    lanes: int = 4,
) -> SensitivityResult:
    """Discrete adjoint for objectives with a running-cost integrand."""
    if objective is None or objective.integrand is None:
        raise ValueError("objective needs an integrand tape")
    return _solve(problem, tableau, controller, dt, objective, lanes)

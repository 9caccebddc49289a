"""Independent sensitivity methods used as oracles and baselines.

* numerical differentiation: forward differences of full solves;
* forward sensitivities: the state augmented with ``du/du0`` and
  ``du/dalpha`` dynamics, using dense tape Jacobians;
* naive continuous adjoint: adjoint ODEs integrated backwards together
  with a backwards re-integration of the state (no stored trajectory).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .adjoint import Objective, SensitivityResult, _shaped
from .adtape import Workspace, forward_eval, vjp_batched
from .forward import (
    OdeProblem,
    StepController,
    integrate,
    integrate_callable,
)
from .tableau import ButcherTableau


def _psi(problem, tableau, controller, dt, objective):
    uT, traj = integrate(
        problem, tableau, controller, dt, quadrature=objective.integrand
    )
    psi = np.asarray(objective.value(problem.u0, uT, problem.alpha), dtype=np.float64)
    psi = psi.reshape(-1)
    if traj.q is not None:
        psi = psi + traj.q
    return psi


def nd_sensitivity(
    problem: OdeProblem,
    tableau: ButcherTableau,
    objective: Optional[Objective] = None,
    *,
    controller: Optional[StepController] = None,
    dt: Optional[float] = None,
    bump: float = 1e-6,
    wrt: str = "params",
    indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Forward-difference sensitivities, one perturbed solve per column.

    ``wrt`` is ``"params"`` (``M x P``) or ``"ic"`` (``M x N``); ``indices``
    restricts the columns computed (and returned) to a subset.
    """
    if not bump > 0:
        raise ValueError("bump must be positive")
    if wrt not in ("params", "ic"):
        raise ValueError("wrt must be 'params' or 'ic'")
    objective = Objective.identity(problem.N) if objective is None else objective
    base_vec = problem.alpha if wrt == "params" else problem.u0
    cols = range(base_vec.shape[0]) if indices is None else list(indices)
    psi0 = _psi(problem, tableau, controller, dt, objective)
    out = np.empty((objective.M, len(cols)))
    for c, k in enumerate(cols):
        vec = base_vec.copy()
        vec[k] += bump
        bumped = problem.with_alpha(vec) if wrt == "params" else problem.with_u0(vec)
        out[:, c] = (_psi(bumped, tableau, controller, dt, objective) - psi0) / bump
    return out


@dataclass
class CfsaResult:
    uT: np.ndarray
    du_du0: Optional[np.ndarray]
    du_dalpha: Optional[np.ndarray]
    n_accepted: int
    n_rejected: int


def cfsa_solve(
    problem: OdeProblem,
    tableau: ButcherTableau,
    controller: Optional[StepController] = None,
    *,
    dt: Optional[float] = None,
    want_ic: bool = True,
    want_params: bool = True,
    lanes: int = 4,
) -> CfsaResult:
    """Integrate ``u`` together with ``G = du/du0`` and ``B = du/dalpha``.

    ``G' = Jx G`` with ``G(t0) = I`` and ``B' = Jx B + Ja`` with ``B(t0) = 0``.
    Step control acts on the whole augmented vector.
    """
    if not (want_ic or want_params):
        raise ValueError("request at least one of want_ic / want_params")
    N, P = problem.N, problem.P
    tape, alpha = problem.tape, problem.alpha
    ws = Workspace(tape, lanes=lanes)
    eye = np.eye(N)
    nG = N * N if want_ic else 0
    nB = N * P if want_params else 0

    def rhs(y, t):
        u = y[:N]
        F = forward_eval(tape, ws, u, alpha, t).copy()
        Jx, Ja = vjp_batched(tape, ws, eye)
        parts = [F]
        if want_ic:
            parts.append((Jx @ y[N:N + nG].reshape(N, N)).ravel())
        if want_params:
            B = y[N + nG:].reshape(N, P)
            parts.append((Jx @ B + Ja).ravel())
        return np.concatenate(parts)

    y0 = np.concatenate([problem.u0, eye.ravel() if want_ic else [], np.zeros(nB)])
    traj = integrate_callable(rhs, y0, problem.t0, problem.tf, tableau, controller, dt)
    yT = traj.u[-1]
    G = yT[N:N + nG].reshape(N, N) if want_ic else None
    B = yT[N + nG:].reshape(N, P) if want_params else None
    return CfsaResult(yT[:N].copy(), G, B, traj.T, traj.n_rejected)


def cfsa_sensitivity(
    problem: OdeProblem,
    tableau: ButcherTableau,
    controller: Optional[StepController] = None,
    objective: Optional[Objective] = None,
    *,
    dt: Optional[float] = None,
    want_ic: bool = True,
    lanes: int = 4,
) -> SensitivityResult:
    """Chain forward sensitivities through an end-point objective."""
    objective = Objective.identity(problem.N) if objective is None else objective
    if objective.integrand is not None:
        raise ValueError("forward sensitivities support end-point objectives only")
    N, P, M = problem.N, problem.P, objective.M
    t0 = time.perf_counter()
    res = cfsa_solve(problem, tableau, controller, dt=dt, want_ic=want_ic, lanes=lanes)
    elapsed = time.perf_counter() - t0
    u0, uT, alpha = problem.u0, res.uT, problem.alpha
    dE = _shaped(objective.d_uT(u0, uT, alpha), (M, N), "d_uT")
    dalpha = dE @ res.du_dalpha
    if objective.d_alpha is not None:
        dalpha = dalpha + _shaped(objective.d_alpha(u0, uT, alpha), (M, P), "d_alpha")
    du0 = dE @ res.du_du0 if want_ic else np.full((M, N), np.nan)
    if objective.d_u0 is not None:
        du0 = du0 + _shaped(objective.d_u0(u0, uT, alpha), (M, N), "d_u0")
    psi = np.asarray(objective.value(u0, uT, alpha), dtype=np.float64).reshape(-1)
    return SensitivityResult(
        du0=du0, dalpha=dalpha, psi=psi, uT=uT,
        n_accepted=res.n_accepted, n_rejected=res.n_rejected, t_forward=elapsed,
    )


def casa_naive_solve(
    problem: OdeProblem,
    tableau: ButcherTableau,
    controller: Optional[StepController] = None,
    objective: Optional[Objective] = None,
    *,
    dt: Optional[float] = None,
    lanes: int = 4,
) -> SensitivityResult:
    """Continuous adjoint that re-integrates the state backwards from ``u(tf)``.

    Backwards from ``tf``: ``u' = F``, ``lam' = -lam Jx``, ``w' = -lam Ja`` with
    ``lam(tf) = dE/du(tf)`` and ``w(tf) = 0``. Then ``dpsi/du0 = lam(t0)`` and
    ``dpsi/dalpha = w(t0)`` (plus explicit objective partials). For dissipative
    systems the backward state integration is unstable; that failure surfaces
    as a :class:`~erkadjoint.forward.DivergenceError`, as a large error, or
    as a large ``diagnostics["reconstruction_error"]``: the relative distance
    between the backward-integrated state at ``t0`` and the true ``u0``.
    """
    objective = Objective.identity(problem.N) if objective is None else objective
    if objective.integrand is not None:
        raise ValueError("the naive continuous adjoint supports end-point objectives only")
    N, P, M = problem.N, problem.P, objective.M
    tape, alpha = problem.tape, problem.alpha
    t0 = time.perf_counter()
    fwd = integrate(problem, tableau, controller, dt)
    uT, traj = fwd
    t1 = time.perf_counter()
    ws = Workspace(tape, lanes=lanes)
    u0 = problem.u0
    lamT = _shaped(objective.d_uT(u0, uT, alpha), (M, N), "d_uT")

    def rhs(y, t):
        u = y[:N]
        lam = y[N:N + M * N].reshape(M, N)
        with np.errstate(over="ignore", invalid="ignore"):
            F = forward_eval(tape, ws, u, alpha, t).copy()
            gx, ga = vjp_batched(tape, ws, lam)
        return np.concatenate([F, -gx.ravel(), -ga.ravel()])

    yT = np.concatenate([uT, lamT.ravel(), np.zeros(M * P)])
    with np.errstate(over="ignore", invalid="ignore"):
        back = integrate_callable(rhs, yT, problem.tf, problem.t0, tableau, controller, dt)
    t2 = time.perf_counter()
    y0 = back.u[-1]
    du0 = y0[N:N + M * N].reshape(M, N).copy()
    dalpha = y0[N + M * N:].reshape(M, P).copy()
    if objective.d_u0 is not None:
        du0 += _shaped(objective.d_u0(u0, uT, alpha), (M, N), "d_u0")
    if objective.d_alpha is not None:
        dalpha += _shaped(objective.d_alpha(u0, uT, alpha), (M, P), "d_alpha")
    psi = np.asarray(objective.value(u0, uT, alpha), dtype=np.float64).reshape(-1)
    scale = max(float(np.max(np.abs(u0))), 1e-300)
    with np.errstate(over="ignore", invalid="ignore"):
        recon = float(np.max(np.abs(y0[:N] - u0))) / scale
    return SensitivityResult(
        du0=du0, dalpha=dalpha, psi=psi, uT=uT,
        n_accepted=traj.T, n_rejected=traj.n_rejected,
        t_forward=t1 - t0, t_reverse=t2 - t1,
        diagnostics={"reconstruction_error": recon, "backward_steps": back.T},
    )

"""Fixed-step and adaptive explicit Runge-Kutta integration with checkpoints."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .adtape import DimensionError, Tape, Workspace, forward_eval
from .tableau import ButcherTableau


class DivergenceError(RuntimeError):
    """A step produced non-finite values."""

    def __init__(self, t: float, what: str = "state"):
        super().__init__(f"non-finite {what} produced in the step starting at t={t!r}")
        self.t = t


class StepFailureError(RuntimeError):
    """The controller rejected too many consecutive trial steps."""

    def __init__(self, t: float, v: float, rejects: int):
        super().__init__(
            f"step at t={t!r} rejected {rejects} times in a row (last error ratio {v:.3e})"
        )
        self.t = t
        self.v = v


@dataclass(frozen=True, eq=False)
class OdeProblem:
    """``du/dt = F(u, alpha, t)``, ``u(t0) = u0`` on ``[t0, tf]``."""

    tape: Tape
    u0: np.ndarray
    alpha: np.ndarray
    t0: float
    tf: float

    def __post_init__(self):
        u0 = np.array(self.u0, dtype=np.float64).reshape(-1)
        alpha = np.array(self.alpha, dtype=np.float64).reshape(-1)
        if self.tape.n_out != self.tape.n_state:
            raise DimensionError("right-hand side tape must have N outputs")
        if u0.shape != (self.tape.n_state,) or alpha.shape != (self.tape.n_param,):
            raise DimensionError("u0/alpha do not match the tape dimensions")
        if not self.tf >= self.t0:
            raise ValueError("need tf >= t0")
        u0.setflags(write=False)
        alpha.setflags(write=False)
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "tf", float(self.tf))

    @property
    def N(self) -> int:
        return self.tape.n_state

    @property
    def P(self) -> int:
        return self.tape.n_param

    def with_alpha(self, alpha) -> "OdeProblem":
        return OdeProblem(self.tape, self.u0, alpha, self.t0, self.tf)

    def with_u0(self, u0) -> "OdeProblem":
        return OdeProblem(self.tape, u0, self.alpha, self.t0, self.tf)


@dataclass(frozen=True)
class StepController:
    """Error-ratio step control with absolute/relative tolerances.

    ``increment_form`` keeps the ``dt * sum(b k)`` scaling term in the
    relative-tolerance denominator; set it False to use ``sum(b k)`` instead.
    """

    atol: float = 1e-6
    rtol: float = 1e-6
    norm: str = "inf"
    dt_init: Optional[float] = None
    max_rejects: int = 50
    increment_form: bool = True

    def __post_init__(self):
        if not self.atol > 0 or not self.rtol >= 0:
            raise ValueError("need atol > 0 and rtol >= 0")
        if self.norm not in ("inf", "euclidean"):
            raise ValueError("norm must be 'inf' or 'euclidean'")
        if self.dt_init is not None and not self.dt_init > 0:
            raise ValueError("dt_init must be positive")
        if self.max_rejects < 1:
            raise ValueError("max_rejects must be >= 1")

    @classmethod
    def tol(cls, tol: float, **kwargs) -> "StepController":
        """Same absolute and relative tolerance."""
        return cls(atol=tol, rtol=tol, **kwargs)


@dataclass
class Trajectory:
    """Checkpoints of accepted steps: ``t[n]``, ``dt[n]``, ``u[n]``.

    ``t`` and ``u`` carry ``T + 1`` entries (the last is the final state),
    ``dt`` carries ``T``. Only accepted steps are stored, and stage values
    are never kept.
    """

    t: np.ndarray
    dt: np.ndarray
    u: np.ndarray
    n_rejected: int = 0
    q: Optional[np.ndarray] = field(default=None)

    @property
    def T(self) -> int:
        return self.dt.shape[0]

    @property
    def n_accepted(self) -> int:
        return self.T

    def checkpoint(self, n: int) -> tuple[np.ndarray, float, float]:
        return self.u[n], float(self.t[n]), float(self.dt[n])

    def storage(self) -> dict[str, int]:
        """Number of stored reals, split into state values and time records."""
        return {"state": int(self.u.size), "time": int(self.t.size + self.dt.size)}


def error_norm(err, u, du, controller: StepController) -> float:
    """Scaled error ratio; ``v <= 1`` means the step is acceptable."""
    err = np.asarray(err)
    scale = controller.atol + controller.rtol * (np.abs(u) + np.abs(du))
    ratios = np.abs(err) / scale
    if ratios.size == 0:
        return 0.0
    peak = float(np.max(ratios))
    if controller.norm == "inf" or peak == 0.0 or not math.isfinite(peak):
        return peak
    scaled = ratios / peak
    return peak * float(np.sqrt(np.dot(scaled, scaled)))


def _ratio(v: float, power: int) -> float:
    """``0.9 / v**power``, saturating instead of raising on over/underflow."""
    try:
        return 0.9 / v ** power
    except OverflowError:
        return 0.0
    except ZeroDivisionError:
        return math.inf


def propose_step(v: float, dt: float, order_high: int, order_low: int) -> tuple[float, bool]:
    """Next step size and acceptance flag for error ratio ``v``."""
    if v > 1.0:
        return dt * max(_ratio(v, order_low - 1), 0.2), False
    if v < 0.5:
        return dt * min(_ratio(v, order_high), 5.0), True
    return dt, True


def _weighted_sum(weights: np.ndarray, K: np.ndarray) -> np.ndarray:
    acc = np.zeros(K.shape[1])
    for m in range(K.shape[0]):
        if weights[m] != 0.0:
            acc += weights[m] * K[m]
    return acc


def stage_values(
    tableau: ButcherTableau, tape: Tape, ws: Workspace, u, alpha, t: float, dt: float
) -> tuple[np.ndarray, np.ndarray]:
    """Stage states ``U[m]`` and slopes ``K[m] = F(U[m], alpha, t + c_m dt)``.

    This is the single code path used both when stepping forward and when
    the reverse pass recomputes stages from a checkpoint.
    """
    ws._check(tape)
    s, n = tableau.stages, tape.n_state
    U = np.empty((s, n))
    K = np.empty((s, n))
    kernels.active().erk_stages(
        tape, ws.values, np.ascontiguousarray(u, dtype=np.float64),
        np.asarray(alpha, dtype=np.float64), t, dt, tableau.a, tableau.c, U, K,
    )
    ws.primed = True
    return U, K


def _combine(tableau, u, dt, K, increment_form=True):
    acc = _weighted_sum(tableau.b, K)
    du = dt * acc
    u_next = u + du
    err = None
    if tableau.b_star is not None:
        err = dt * _weighted_sum(tableau.error_weights, K)
    return u_next, err, (du if increment_form else acc)


def rk_step(
    tableau: ButcherTableau, tape: Tape, ws: Workspace, u, alpha, t: float, dt: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One explicit RK step; returns ``(u_next, error_estimate, K)``.

    The error estimate is zero for tableaus without embedded weights.
    """
    if not dt > 0:
        raise ValueError("step size must be positive")
    U, K = stage_values(tableau, tape, ws, u, alpha, t, dt)
    u_next, err, _ = _combine(tableau, np.asarray(u, dtype=np.float64), dt, K)
    if not np.all(np.isfinite(u_next)):
        raise DivergenceError(t)
    return u_next, (np.zeros_like(u_next) if err is None else err), K


def erk_step_callable(tableau: ButcherTableau, rhs: Callable, y, t: float, dt: float):
    """RK stages for a plain ``rhs(y, t)`` callable (no tape).

    Same stage arithmetic as the tape kernels; ``dt`` may be negative.
    """
    a, c = tableau.a, tableau.c
    s = tableau.stages
    y = np.asarray(y, dtype=np.float64)
    K = np.empty((s, y.shape[0]))
    U = np.empty((s, y.shape[0]))
    for m in range(s):
        acc = np.zeros(y.shape[0])
        for j in range(m):
            acc += a[m, j] * K[j]
        U[m] = y + dt * acc
        K[m] = rhs(U[m], t + c[m] * dt)
    return U, K


StepFn = Callable[[np.ndarray, float, float], tuple]


def _drive(
    step: StepFn,
    y0: np.ndarray,
    t0: float,
    tf: float,
    tableau: ButcherTableau,
    controller: Optional[StepController],
    dt: Optional[float],
    on_accept: Optional[Callable] = None,
) -> Trajectory:
    """Shared stepping loop.

    ``step(y, t, h)`` returns ``(y_next, err, du, stages)``. Integration may
    run backwards (``tf < t0``); step sizes are then negative.
    """
    direction = 1.0 if tf >= t0 else -1.0
    span = abs(tf - t0)
    ts = [t0]
    hs: list[float] = []
    ys = [np.array(y0, dtype=np.float64)]
    y = ys[0]
    if span == 0.0:
        return Trajectory(np.array(ts), np.array(hs), np.array(ys))

    if controller is None:
        if dt is None or not dt > 0:
            raise ValueError("fixed-step integration needs dt > 0")
        n_steps = max(1, math.ceil(span / dt * (1.0 - 1e-12)))
        t = t0
        for n in range(n_steps):
            t_next = tf if n == n_steps - 1 else t0 + direction * (n + 1) * dt
            h = t_next - t
            y_next, _, _, stages = step(y, t, h)
            if on_accept is not None:
                on_accept(n, t, h, stages)
            hs.append(h)
            ts.append(t_next)
            ys.append(y_next)
            y, t = y_next, t_next
        return Trajectory(np.array(ts), np.array(hs), np.vstack(ys))

    if not tableau.adaptive:
        raise ValueError(f"tableau {tableau.name!r} has no error estimate for adaptive stepping")
    h_abs = controller.dt_init if controller.dt_init is not None else span / 100.0
    t = t0
    rejected = 0
    n = 0
    while direction * (tf - t) > 0.0:
        last = h_abs >= abs(tf - t)
        h = (tf - t) if last else direction * h_abs
        rejects = 0
        while True:
            y_next, err, du, stages = step(y, t, h)
            v = error_norm(err, y, du, controller)
            h_new, accept = propose_step(v, abs(h), tableau.order_high, tableau.order_low)
            if accept:
                break
            rejects += 1
            rejected += 1
            if rejects > controller.max_rejects:
                raise StepFailureError(t, v, rejects)
            last = False
            h = direction * h_new
        if on_accept is not None:
            on_accept(n, t, h, stages)
        t_next = tf if last else t + h
        hs.append(h)
        ts.append(t_next)
        ys.append(y_next)
        y, t = y_next, t_next
        h_abs = h_new
        n += 1
    return Trajectory(np.array(ts), np.array(hs), np.vstack(ys), n_rejected=rejected)


def _tape_step(tableau, tape, ws, alpha, controller):
    inc = True if controller is None else controller.increment_form

    def step(y, t, h):
        U, K = stage_values(tableau, tape, ws, y, alpha, t, h)
        y_next, err, du = _combine(tableau, y, h, K, inc)
        if not np.all(np.isfinite(y_next)):
            raise DivergenceError(t)
        return y_next, err, du, U

    return step


def _quadrature_hook(tableau, integrand: Tape, alpha, q):
    rws = Workspace(integrand, lanes=1)
    b, c = tableau.b, tableau.c

    def hook(n, t, h, U):
        acc = np.zeros(integrand.n_out)
        for m in range(tableau.stages):
            if b[m] != 0.0:
                acc += b[m] * forward_eval(integrand, rws, U[m], alpha, t + c[m] * h)
        q[:] += h * acc

    return hook


def _integrate(problem, tableau, controller, dt, quadrature, ws):
    ws = Workspace(problem.tape, lanes=1) if ws is None else ws
    q = None
    hook = None
    if quadrature is not None:
        if quadrature.n_state != problem.N or quadrature.n_param != problem.P:
            raise DimensionError("integrand tape dimensions do not match the problem")
        q = np.zeros(quadrature.n_out)
        hook = _quadrature_hook(tableau, quadrature, problem.alpha, q)
    step = _tape_step(tableau, problem.tape, ws, problem.alpha, controller)
    traj = _drive(step, problem.u0, problem.t0, problem.tf, tableau, controller, dt, hook)
    traj.q = q
    return traj.u[-1].copy(), traj


def integrate_adaptive(
    problem: OdeProblem,
    tableau: ButcherTableau,
    controller: StepController,
    *,
    quadrature: Optional[Tape] = None,
    ws: Optional[Workspace] = None,
) -> tuple[np.ndarray, Trajectory]:
    """Adaptive integration; returns ``(u_T, trajectory)``.

    With ``quadrature`` (an integrand tape with any number of outputs) the
    running integrals are advanced with the same weights and stored in
    ``trajectory.q``; they do not take part in error control.
    """
    return _integrate(problem, tableau, controller, None, quadrature, ws)


def integrate_fixed(
    problem: OdeProblem,
    tableau: ButcherTableau,
    dt: float,
    *,
    quadrature: Optional[Tape] = None,
    ws: Optional[Workspace] = None,
) -> tuple[np.ndarray, Trajectory]:
    """Uniform steps of size ``dt``; the last one is shortened to land on tf."""
    return _integrate(problem, tableau, None, dt, quadrature, ws)


def integrate(problem, tableau, controller=None, dt=None, **kwargs):
    """Dispatch to adaptive (``controller``) or fixed-step (``dt``) integration."""
    if (controller is None) == (dt is None):
        raise ValueError("give exactly one of controller or dt")
    if controller is not None:
        return integrate_adaptive(problem, tableau, controller, **kwargs)
    return integrate_fixed(problem, tableau, dt, **kwargs)


def replay_steps(problem: OdeProblem, tableau: ButcherTableau, dts, ws=None) -> np.ndarray:
    """Final state after taking exactly the given step sizes (frozen steps)."""
    ws = Workspace(problem.tape, lanes=1) if ws is None else ws
    u = problem.u0.copy()
    t = problem.t0
    for h in dts:
        u, _, _ = rk_step(tableau, problem.tape, ws, u, problem.alpha, t, float(h))
        t = t + h
    return u


def integrate_callable(
    rhs: Callable,
    y0,
    t0: float,
    tf: float,
    tableau: ButcherTableau,
    controller: Optional[StepController] = None,
    dt: Optional[float] = None,
) -> Trajectory:
    """Integrate a plain ``rhs(y, t)`` (forwards or backwards in time)."""
    inc = True if controller is None else controller.increment_form

    def step(y, t, h):
        U, K = erk_step_callable(tableau, rhs, y, t, h)
        y_next, err, du = _combine(tableau, y, h, K, inc)
        if not np.all(np.isfinite(y_next)):
            raise DivergenceError(t)
        return y_next, err, du, U

    if controller is None and dt is None:
        raise ValueError("give a controller or a fixed dt")
    return _drive(step, np.asarray(y0, dtype=np.float64), t0, tf, tableau, controller, dt)

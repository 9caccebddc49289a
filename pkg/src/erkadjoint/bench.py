"""Experiment harness: heat-equation validation, work-precision, scaling."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .adjoint import Objective, SensitivityResult, solve_endpoint
from .forward import (
    DivergenceError,
    OdeProblem,
    StepController,
    StepFailureError,
    integrate_fixed,
)
from .problems import GlvSpec, Heat2dSpec, glv_generate, heat2d_exact, heat2d_problem
from .reference import casa_naive_solve, cfsa_sensitivity, nd_sensitivity
from .tableau import get_tableau

METHODS = ("adjoint", "cfsa", "nd", "casa")
UNSTABLE_THRESHOLD = 0.10


def _check_methods(methods):
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValueError(f"unknown method(s) {bad}; choose from {METHODS}")


@dataclass
class MethodOutput:
    dalpha: np.ndarray
    n_accepted: int = 0
    n_rejected: int = 0
    diagnostics: dict = field(default_factory=dict)


def run_method(
    method: str,
    problem: OdeProblem,
    tableau_name: str,
    *,
    controller: Optional[StepController] = None,
    dt: Optional[float] = None,
    objective: Optional[Objective] = None,
    bump: float = 1e-6,
    lanes: int = 4,
    param_indices: Optional[Sequence[int]] = None,
) -> MethodOutput:
    """``dpsi/dalpha`` by one method; ``param_indices`` selects columns."""
    tb = get_tableau(tableau_name)
    if method == "nd":
        d = nd_sensitivity(
            problem, tb, objective, controller=controller, dt=dt, bump=bump,
            indices=param_indices,
        )
        return MethodOutput(d)
    if method == "adjoint":
        r: SensitivityResult = solve_endpoint(
            problem, tb, controller, objective, dt=dt, lanes=lanes
        )
    elif method == "cfsa":
        r = cfsa_sensitivity(problem, tb, controller, objective, dt=dt, want_ic=False, lanes=lanes)
    elif method == "casa":
        r = casa_naive_solve(problem, tb, controller, objective, dt=dt, lanes=lanes)
    else:
        raise ValueError(f"unknown method {method!r}")
    d = r.dalpha if param_indices is None else r.dalpha[:, list(param_indices)]
    return MethodOutput(d, r.n_accepted, r.n_rejected, r.diagnostics)


# ---------------------------------------------------------------- heat 2D


@dataclass
class HeatRow:
    n_p: int
    method: str
    rel_error_pct: float
    status: str
    runtime_s: float

    def cells(self):
        err = "" if not math.isfinite(self.rel_error_pct) else f"{self.rel_error_pct:.6g}"
        return [self.n_p, self.method, err, self.status, f"{self.runtime_s:.4f}"]


HEAT_COLUMNS = ["n_p", "method", "rel_error_pct", "status", "runtime_s"]


def _rel_inf(num, exact) -> float:
    return float(np.max(np.abs(num - exact)) / np.max(np.abs(exact)))


def heat2d_run(
    spec: Heat2dSpec, methods: Sequence[str] = METHODS, *, bump: float = 1e-9, lanes: int = 4
) -> list[HeatRow]:
    """Relative inf-norm errors (percent) of the end state and of ``du/dkappa``.

    The first row is the forward solution. A method is ``unstable`` when it
    diverges, returns non-finite values, misses the exact sensitivities by
    more than 10%, or (continuous adjoint) rebuilds ``u0`` from ``u(tf)``
    with a relative error above 10%.
    """
    _check_methods(methods)
    problem = heat2d_problem(spec)
    x, y = spec.grid()
    u_exact, s_exact = heat2d_exact(spec, x, y)
    tb = get_tableau(spec.method)
    rows = []

    t0 = time.perf_counter()
    uT, _ = integrate_fixed(problem, tb, spec.dt)
    rows.append(HeatRow(spec.n_p, "forward", 100 * _rel_inf(uT, u_exact), "ok",
                        time.perf_counter() - t0))
    for method in methods:
        t0 = time.perf_counter()
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                out = run_method(method, problem, spec.method, dt=spec.dt, bump=bump, lanes=lanes)
        except (DivergenceError, StepFailureError, FloatingPointError):
            rows.append(HeatRow(spec.n_p, method, float("nan"), "unstable",
                                time.perf_counter() - t0))
            continue
        elapsed = time.perf_counter() - t0
        sens = out.dalpha[:, 0]
        err = _rel_inf(sens, s_exact) if np.all(np.isfinite(sens)) else float("nan")
        recon = out.diagnostics.get("reconstruction_error", 0.0)
        stable = math.isfinite(err) and err <= UNSTABLE_THRESHOLD and not recon > UNSTABLE_THRESHOLD
        rows.append(HeatRow(spec.n_p, method, 100 * err, "ok" if stable else "unstable", elapsed))
    return rows


# ---------------------------------------------------------------- work-precision


@dataclass
class WpRow:
    method: str
    tol: float
    error: float
    mean_ms: float
    std_ms: float
    n_accepted: int
    n_rejected: int
    status: str = "ok"

    def cells(self):
        return [
            self.method, f"{self.tol:.1e}", f"{self.error:.6e}", f"{self.mean_ms:.4f}",
            f"{self.std_ms:.4f}", self.n_accepted, self.n_rejected, self.status,
        ]


WP_COLUMNS = ["method", "tol", "error", "mean_ms", "std_ms", "n_accepted", "n_rejected", "status"]

DEFAULT_TOLERANCES = tuple(10.0 ** -k for k in range(4, 15))


def _timed(fn: Callable, repeats: int):
    times = []
    out = None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        out = fn()
        times.append(1e3 * (time.perf_counter() - t0))
    return out, float(np.mean(times)), float(np.std(times))


def wp_run(
    problem: OdeProblem,
    objective: Optional[Objective] = None,
    methods: Sequence[str] = ("adjoint",),
    tolerances: Sequence[float] = DEFAULT_TOLERANCES,
    repeats: int = 3,
    *,
    tableau: str = "cash_karp",
    baseline_tol: float = 1e-15,
    bump: float = 1e-6,
    lanes: int = 4,
    param_indices: Optional[Sequence[int]] = None,
    baseline: str = "self",
) -> list[WpRow]:
    """Work-precision rows.

    With ``baseline="self"`` each method is compared with itself at
    ``baseline_tol`` and the baseline is emitted as a zero-error row. With
    ``baseline="adjoint"`` every method is compared with one shared
    discrete-adjoint solve at ``baseline_tol``, which keeps the truncation
    error of finite differences visible. The error is the inf-norm of the
    difference in ``dpsi/dalpha``. Failures are recorded in ``status``
    instead of raised.
    """
    _check_methods(methods)
    if baseline not in ("self", "adjoint"):
        raise ValueError("baseline must be 'self' or 'adjoint'")
    tolerances = list(tolerances)
    if any(a < b for a, b in zip(tolerances, tolerances[1:])):
        raise ValueError("tolerances must be sorted in descending order")
    rows = []
    shared = None
    for method in methods:

        def run(tol, method=method):
            return run_method(
                method, problem, tableau, controller=StepController.tol(tol),
                objective=objective, bump=bump, lanes=lanes, param_indices=param_indices,
            )

        try:
            if baseline == "self" or shared is None:
                base_method = method if baseline == "self" else "adjoint"
                base, bm, bs = _timed(lambda: run(baseline_tol, base_method), repeats)
                if baseline == "adjoint":
                    shared = (base, bm, bs)
            else:
                base, bm, bs = shared
        except Exception as exc:  # noqa: BLE001 - recorded, not fatal
            rows.append(WpRow(method, baseline_tol, float("nan"), float("nan"), float("nan"),
                              0, 0, f"failed: {type(exc).__name__}"))
            continue
        for tol in tolerances:
            try:
                out, mean, std = _timed(lambda: run(tol), repeats)
                err = float(np.max(np.abs(out.dalpha - base.dalpha)))
                status = "ok" if math.isfinite(err) else "non-finite"
                rows.append(WpRow(method, tol, err, mean, std, out.n_accepted, out.n_rejected, status))
            except Exception as exc:  # noqa: BLE001
                rows.append(WpRow(method, tol, float("nan"), float("nan"), float("nan"),
                                  0, 0, f"failed: {type(exc).__name__}"))
        if baseline == "self":
            rows.append(WpRow(method, baseline_tol, 0.0, bm, bs, base.n_accepted,
                              base.n_rejected, "baseline"))
    return rows


# ---------------------------------------------------------------- scaling


@dataclass
class ScalingRow:
    method: str
    N: int
    P: int
    mean_ms: float
    std_ms: float

    @property
    def size(self) -> int:
        return self.N + self.P

    def cells(self):
        return [self.method, self.N, self.P, self.size, f"{self.mean_ms:.4f}", f"{self.std_ms:.4f}"]


SCALING_COLUMNS = ["method", "N", "P", "N_plus_P", "mean_ms", "std_ms"]


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.log(np.asarray(x, dtype=np.float64))
    y = np.log(np.asarray(y, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])


def scaling_run(
    ns: Sequence[int] = (10, 20, 40, 80),
    tol: float = 1e-7,
    methods: Sequence[str] = ("adjoint",),
    *,
    seed: int = 0,
    repeats: int = 3,
    tableau: str = "cash_karp",
    lanes: int = 4,
    spec_kwargs: Optional[dict] = None,
) -> tuple[list[ScalingRow], dict[str, float]]:
    """Mean runtime against ``N + P`` for GLV systems; returns rows and slopes."""
    _check_methods(methods)
    rows = []
    controller = StepController.tol(tol)
    for N in ns:
        problem = glv_generate(GlvSpec(N=N, seed=seed, **(spec_kwargs or {})))
        for method in methods:
            fn = lambda: run_method(method, problem, tableau, controller=controller, lanes=lanes)  # noqa: E731
            fn()  # warm caches; excluded from timing
            _, mean, std = _timed(fn, repeats)
            rows.append(ScalingRow(method, N, problem.P, mean, std))
    slopes = {}
    for method in methods:
        sel = [r for r in rows if r.method == method]
        if len(sel) >= 2:
            slopes[method] = loglog_slope([r.size for r in sel], [r.mean_ms for r in sel])
    return rows, slopes

"""Test problems: 2D heat equation (method of lines), Van der Pol, random GLV."""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .adtape import Tape, record
from .forward import OdeProblem


# ---------------------------------------------------------------- heat 2D


@dataclass(frozen=True)
class Heat2dSpec:
    """Unit-square heat equation with zero Dirichlet data on an ``n_p x n_p`` grid.

    ``u0 = sin(pi x) sin(pi y)``. ``kappa`` is the thermal diffusivity, the
    single parameter of the semi-discrete system.
    """

    n_p: int = 10
    kappa: float = 1.0
    tf: float = 1e-2
    dt: float = 5e-5
    method: str = "euler"
    series_cutoff: int = 1

    def __post_init__(self):
        if self.n_p < 3:
            raise ValueError("need at least 3 grid points per side")
        if not (self.kappa > 0 and self.tf > 0 and self.dt > 0):
            raise ValueError("kappa, tf and dt must be positive")
        if self.series_cutoff != 1:
            raise NotImplementedError("only the single-mode initial condition is supported")
        if self.dt >= self.dx ** 2 / (4.0 * self.kappa):
            warnings.warn(
                f"dt={self.dt} exceeds the explicit stability bound dx^2/(4 kappa)"
                f"={self.dx ** 2 / (4 * self.kappa):.3e}",
                stacklevel=2,
            )

    @property
    def dx(self) -> float:
        return 1.0 / (self.n_p - 1)

    @property
    def N(self) -> int:
        return self.n_p * self.n_p

    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened ``(x_k, y_k)`` with ``k = i + n_p j``."""
        g = np.arange(self.n_p) * self.dx
        x, y = np.meshgrid(g, g, indexing="xy")
        return x.ravel(), y.ravel()

    def boundary_mask(self) -> np.ndarray:
        idx = np.arange(self.n_p)
        i, j = np.meshgrid(idx, idx, indexing="xy")
        edge = (i == 0) | (j == 0) | (i == self.n_p - 1) | (j == self.n_p - 1)
        return edge.ravel()


@functools.lru_cache(maxsize=8)
def heat2d_tape(n_p: int) -> Tape:
    """Five-point Laplacian times the diffusivity; boundary rows are zero."""
    inv_h2 = float((n_p - 1) ** 2)

    def build(u, alpha, t):
        kappa = alpha[0]
        out = [0.0] * (n_p * n_p)
        for j in range(1, n_p - 1):
            for i in range(1, n_p - 1):
                k = i + n_p * j
                lap_x = (u[k - 1] - 2.0 * u[k] + u[k + 1]) * inv_h2
                lap_y = (u[k - n_p] - 2.0 * u[k] + u[k + n_p]) * inv_h2
                out[k] = kappa * (lap_x + lap_y)
        return out

    return record(build, n_p * n_p, 1)


def heat2d_problem(spec: Heat2dSpec) -> OdeProblem:
    x, y = spec.grid()
    u0 = np.sin(np.pi * x) * np.sin(np.pi * y)
    u0[spec.boundary_mask()] = 0.0
    return OdeProblem(heat2d_tape(spec.n_p), u0, [spec.kappa], 0.0, spec.tf)


heat2d_rhs = heat2d_problem


def heat2d_exact(spec: Heat2dSpec, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``u(x, y, tf)`` and ``du(x, y, tf)/dkappa`` for the single-mode start."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    lam = 2.0 * np.pi ** 2
    mode = np.sin(np.pi * x) * np.sin(np.pi * y)
    decay = math.exp(-lam * spec.kappa * spec.tf)
    u = decay * mode
    sens = -lam * spec.tf * decay * mode
    return u, sens


# ---------------------------------------------------------------- Van der Pol


@functools.lru_cache(maxsize=1)
def vanderpol_tape() -> Tape:
    def build(u, alpha, t):
        x, v = u
        mu = alpha[0]
        return [v, mu * (1.0 - x * x) * v - mu * x]

    return record(build, 2, 1)


def vanderpol_initial_velocity(mu: float) -> float:
    return -2.0 / 3.0 + 10.0 / (81.0 * mu) - 292.0 / (2187.0 * mu * mu)


def vanderpol_problem(mu: float = 1e3, tf: float = 0.5) -> OdeProblem:
    """``x'' = mu (1 - x^2) x' - mu x`` as a first-order system, ``P = 1``."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    u0 = [2.0, vanderpol_initial_velocity(mu)]
    return OdeProblem(vanderpol_tape(), u0, [mu], 0.0, tf)


# ---------------------------------------------------------------- GLV


@dataclass(frozen=True)
class GlvSpec:
    """Random generalised Lotka-Volterra community.

    Off-diagonal interactions are present with probability ``connectance``
    and drawn uniformly from ``[-sigma, sigma]`` (``sigma`` defaults to
    ``0.1 / sqrt(N)``); self-interactions are all ``diag``.
    """

    N: int
    seed: int = 0
    connectance: float = 0.5
    sigma: Optional[float] = None
    diag: float = -1.0
    r: float = 0.1
    x0: float = 0.1
    t0: float = 0.0
    tf: float = 10.0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("need at least one species")
        if not 0.0 < self.connectance <= 1.0:
            raise ValueError("connectance must lie in (0, 1]")
        if not self.diag < 0:
            raise ValueError("self-interaction must be negative")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    @property
    def scale(self) -> float:
        return 0.1 / math.sqrt(self.N) if self.sigma is None else self.sigma

    @property
    def P(self) -> int:
        return self.N + self.N * self.N


def glv_param_index(N: int, m: int, n: int) -> int:
    """Slot of ``r_n`` (``m = 0``) or ``A_{mn}`` (``m >= 1``); ``n`` is 1-based."""
    if not (0 <= m <= N and 1 <= n <= N):
        raise IndexError("m must lie in 0..N and n in 1..N")
    return m * N + n - 1


def glv_pack(r, A) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    return np.concatenate([r, A.ravel()])


def glv_unpack(alpha, N: int) -> tuple[np.ndarray, np.ndarray]:
    alpha = np.asarray(alpha, dtype=np.float64)
    return alpha[:N].copy(), alpha[N:].reshape(N, N).copy()


@functools.lru_cache(maxsize=16)
def glv_tape(N: int) -> Tape:
    """``F_i = x_i (r_i + sum_j A_ij x_j)`` with all ``N + N^2`` entries as parameters."""

    def build(x, alpha, t):
        out = []
        for i in range(N):
            acc = alpha[i]
            row = N * (i + 1)
            for j in range(N):
                acc = acc + alpha[row + j] * x[j]
            out.append(x[i] * acc)
        return out

    return record(build, N, N + N * N)


def glv_matrix(spec: GlvSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    N = spec.N
    present = rng.random((N, N)) < spec.connectance
    values = rng.uniform(-spec.scale, spec.scale, size=(N, N))
    A = np.where(present, values, 0.0)
    np.fill_diagonal(A, spec.diag)
    return A


def glv_generate(spec: GlvSpec) -> OdeProblem:
    """Deterministic (in ``spec.seed``) GLV problem with packed parameters."""
    A = glv_matrix(spec)
    alpha = glv_pack(np.full(spec.N, spec.r), A)
    u0 = np.full(spec.N, spec.x0)
    return OdeProblem(glv_tape(spec.N), u0, alpha, spec.t0, spec.tf)

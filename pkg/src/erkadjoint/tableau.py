"""Butcher tableaus for explicit (embedded) Runge-Kutta methods."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


_ROW_TOL = 1e-14


@dataclass(frozen=True)
class ButcherTableau:
    """Coefficients of an explicit Runge-Kutta method.

    ``a`` is strictly lower triangular. ``b`` propagates the solution at
    ``order_high``; ``b_star`` (embedded, ``order_low``) is only present for
    adaptive pairs and is used solely for the local error estimate.
    """

    name: str
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    order_high: int
    b_star: Optional[np.ndarray] = None
    order_low: Optional[int] = None

    def __post_init__(self):
        a = np.array(self.a, dtype=np.float64)
        b = np.array(self.b, dtype=np.float64)
        c = np.array(self.c, dtype=np.float64)
        s = b.shape[0]
        if s < 1 or a.shape != (s, s) or c.shape != (s,):
            raise ValueError(f"inconsistent tableau shapes for {self.name!r}")
        if np.any(np.triu(a) != 0.0):
            raise ValueError(f"tableau {self.name!r} is not explicit")
        if abs(b.sum() - 1.0) > _ROW_TOL:
            raise ValueError(f"weights of {self.name!r} do not sum to one")
        if np.any(np.abs(a.sum(axis=1) - c) > _ROW_TOL):
            raise ValueError(f"row-sum condition violated for {self.name!r}")
        arrays = {"a": a, "b": b, "c": c}
        if self.b_star is not None:
            bs = np.array(self.b_star, dtype=np.float64)
            if bs.shape != (s,):
                raise ValueError(f"embedded weights of {self.name!r} have wrong length")
            if self.order_low is None or self.order_low >= self.order_high:
                raise ValueError("embedded order must be lower than the propagating order")
            arrays["b_star"] = bs
        for key, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, key, arr)

    @property
    def stages(self) -> int:
        return self.b.shape[0]

    @property
    def adaptive(self) -> bool:
        return self.b_star is not None

    @property
    def error_weights(self) -> np.ndarray:
        """``b - b_star``; raises for fixed-step methods."""
        if self.b_star is None:
            raise ValueError(f"tableau {self.name!r} has no embedded error estimate")
        return self.b - self.b_star


def tableau_euler() -> ButcherTableau:
    return ButcherTableau("euler", a=[[0.0]], b=[1.0], c=[0.0], order_high=1)


def tableau_rk4() -> ButcherTableau:
    a = [
        [0.0, 0.0, 0.0, 0.0],
        [1 / 2, 0.0, 0.0, 0.0],
        [0.0, 1 / 2, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
    ]
    return ButcherTableau(
        "rk4", a=a, b=[1 / 6, 1 / 3, 1 / 3, 1 / 6], c=[0.0, 1 / 2, 1 / 2, 1.0], order_high=4
    )


def tableau_cash_karp() -> ButcherTableau:
    """Cash-Karp 5(4) pair (6 stages)."""
    a = np.zeros((6, 6))
    a[1, :1] = [1 / 5]
    a[2, :2] = [3 / 40, 9 / 40]
    a[3, :3] = [3 / 10, -9 / 10, 6 / 5]
    a[4, :4] = [-11 / 54, 5 / 2, -70 / 27, 35 / 27]
    a[5, :5] = [1631 / 55296, 175 / 512, 575 / 13824, 44275 / 110592, 253 / 4096]
    b = [37 / 378, 0.0, 250 / 621, 125 / 594, 0.0, 512 / 1771]
    b_star = [2825 / 27648, 0.0, 18575 / 48384, 13525 / 55296, 277 / 14336, 1 / 4]
    c = [0.0, 1 / 5, 3 / 10, 3 / 5, 1.0, 7 / 8]
    return ButcherTableau(
        "cash_karp", a=a, b=b, c=c, order_high=5, b_star=b_star, order_low=4
    )


def tableau_dopri5() -> ButcherTableau:
    """Dormand-Prince 5(4) pair (7 stages, FSAL row included)."""
    a = np.zeros((7, 7))
    a[1, :1] = [1 / 5]
    a[2, :2] = [3 / 40, 9 / 40]
    a[3, :3] = [44 / 45, -56 / 15, 32 / 9]
    a[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
    a[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
    a[6, :6] = [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]
    b = [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0]
    b_star = [
        5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40,
    ]
    c = [0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0]
    return ButcherTableau(
        "dopri5", a=a, b=b, c=c, order_high=5, b_star=b_star, order_low=4
    )


TABLEAUS: dict[str, Callable[[], ButcherTableau]] = {
    "euler": tableau_euler,
    "rk4": tableau_rk4,
    "cash_karp": tableau_cash_karp,
    "dopri5": tableau_dopri5,
}


def get_tableau(name: str) -> ButcherTableau:
    try:
        return TABLEAUS[name]()
    except KeyError:
        raise ValueError(
            f"unknown tableau {name!r}; choose from {sorted(TABLEAUS)}"
        ) from None

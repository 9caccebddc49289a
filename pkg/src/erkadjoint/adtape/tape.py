"""Record-once / replay-many reverse-mode AD for ODE right-hand sides.

A right-hand side ``F(u, alpha, t)`` is traced once through operator
overloading into a flat instruction list over value slots. Slots
``[0, N)`` hold ``u``, ``[N, N+P)`` hold ``alpha``, slot ``N+P`` holds
``t``; instruction ``i`` writes slot ``N+P+1+i``. The tape is then replayed
numerically by the active kernel backend, and reverse sweeps propagate
``W`` adjoint lanes at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .. import kernels
from ..kernels import opcodes as ops


class RecordingError(Exception):
    """Raised when a right-hand side uses something the tape cannot express."""


class WorkspaceError(RuntimeError):
    pass


class DimensionError(ValueError):
    pass


def _safe(fn, *args):
    try:
        return fn(*args)
    except (ValueError, ZeroDivisionError):
        return math.nan
    except OverflowError:
        return math.inf


_EVAL = {
    ops.NEG: lambda x, y, c: -x,
    ops.ADD: lambda x, y, c: x + y,
    ops.SUB: lambda x, y, c: x - y,
    ops.MUL: lambda x, y, c: x * y,
    ops.DIV: lambda x, y, c: _safe(lambda: x / y),
    ops.EXP: lambda x, y, c: _safe(math.exp, x),
    ops.LOG: lambda x, y, c: _safe(math.log, x),
    ops.SIN: lambda x, y, c: math.sin(x),
    ops.COS: lambda x, y, c: math.cos(x),
    ops.POWC: lambda x, y, c: _safe(math.pow, x, c),
    ops.POW: lambda x, y, c: _safe(math.pow, x, y),
}


class _Recorder:
    def __init__(self, n_inputs: int, input_values: np.ndarray):
        self.first = n_inputs
        self.values = [float(v) for v in input_values]
        self.op: list[int] = []
        self.a0: list[int] = []
        self.a1: list[int] = []
        self.cst: list[float] = []
        self._const_slots: dict[str, int] = {}

    def emit(self, code: int, x: int, y: int = 0, c: float = 0.0) -> "Var":
        slot = self.first + len(self.op)
        if code == ops.CONST:
            value = c
        else:
            value = _EVAL[code](self.values[x], self.values[y], c)
        self.op.append(code)
        self.a0.append(x)
        self.a1.append(y)
        self.cst.append(c)
        self.values.append(value)
        return Var(self, slot)

    def const_slot(self, value: float) -> int:
        key = float(value).hex()
        slot = self._const_slots.get(key)
        if slot is None:
            slot = self.emit(ops.CONST, 0, 0, float(value)).slot
            self._const_slots[key] = slot
        return slot


def _is_number(x) -> bool:
    return isinstance(x, (int, float, np.integer, np.floating)) and not isinstance(x, bool)


class Var:
    """Traced scalar. Arithmetic on it appends instructions to the tape."""

    __slots__ = ("_rec", "slot")

    def __init__(self, rec: _Recorder, slot: int):
        self._rec = rec
        self.slot = slot

    @property
    def value(self) -> float:
        return self._rec.values[self.slot]

    def _operand(self, other) -> int:
        if isinstance(other, Var):
            if other._rec is not self._rec:
                raise RecordingError("operands belong to different recordings")
            return other.slot
        if _is_number(other):
            return self._rec.const_slot(float(other))
        raise RecordingError(f"unsupported operand type {type(other).__name__}")

    def _binary(self, code, other, reflected=False):
        if isinstance(other, np.ndarray):
            return NotImplemented
        y = self._operand(other)
        if reflected:
            return self._rec.emit(code, y, self.slot)
        return self._rec.emit(code, self.slot, y)

    def __add__(self, o):
        return self._binary(ops.ADD, o)

    def __radd__(self, o):
        return self._binary(ops.ADD, o, True)

    def __sub__(self, o):
        return self._binary(ops.SUB, o)

    def __rsub__(self, o):
        return self._binary(ops.SUB, o, True)

    def __mul__(self, o):
        return self._binary(ops.MUL, o)

    def __rmul__(self, o):
        return self._binary(ops.MUL, o, True)

    def __truediv__(self, o):
        return self._binary(ops.DIV, o)

    def __rtruediv__(self, o):
        return self._binary(ops.DIV, o, True)

    def __neg__(self):
        return self._rec.emit(ops.NEG, self.slot)

    def __pos__(self):
        return self

    def __pow__(self, o):
        if _is_number(o):
            return self._rec.emit(ops.POWC, self.slot, 0, float(o))
        return self._binary(ops.POW, o)

    def __rpow__(self, o):
        return self._binary(ops.POW, o, True)

    def exp(self):
        return self._rec.emit(ops.EXP, self.slot)

    def log(self):
        return self._rec.emit(ops.LOG, self.slot)

    def sin(self):
        return self._rec.emit(ops.SIN, self.slot)

    def cos(self):
        return self._rec.emit(ops.COS, self.slot)

    def sqrt(self):
        return self ** 0.5

    def square(self):
        return self * self

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            raise RecordingError(f"unsupported operation '{ufunc.__name__}.{method}'")
        if any(isinstance(x, np.ndarray) for x in inputs):
            boxed = []
            for x in inputs:
                if isinstance(x, Var):
                    box = np.empty((), dtype=object)
                    box[()] = x
                    x = box
                boxed.append(x)
            return ufunc(*boxed)
        fn = _UFUNCS.get(ufunc.__name__)
        if fn is None:
            raise RecordingError(f"unsupported operation '{ufunc.__name__}'")
        return fn(*inputs)

    def __getattr__(self, name):
        # Reached only for attributes Var does not define, e.g. the method
        # numpy looks up when applying an unsupported ufunc to object arrays.
        if name.startswith("_"):
            raise AttributeError(name)
        raise RecordingError(f"unsupported operation '{name}'")

    def _no_branch(self, *_):
        raise RecordingError(
            "value-dependent control flow is not recordable (comparison or "
            "truth test on a traced value)"
        )

    __bool__ = _no_branch
    __lt__ = __le__ = __gt__ = __ge__ = _no_branch
    __eq__ = __ne__ = _no_branch
    __hash__ = object.__hash__

    def __abs__(self):
        raise RecordingError("unsupported operation 'abs'")

    def __float__(self):
        raise RecordingError("unsupported operation 'float' (traced value escapes the tape)")

    def __index__(self):
        raise RecordingError("unsupported operation 'index' (traced value used as an index)")

    def __repr__(self):
        return f"Var(slot={self.slot}, value={self.value!r})"


def _unary(method, mathfn):
    def fn(x):
        if isinstance(x, Var):
            return getattr(Var, method)(x)
        return mathfn(float(x))

    return fn


_UFUNCS: dict[str, Callable] = {
    "add": lambda x, y: x + y,
    "subtract": lambda x, y: x - y,
    "multiply": lambda x, y: x * y,
    "true_divide": lambda x, y: x / y,
    "divide": lambda x, y: x / y,
    "power": lambda x, y: x ** y,
    "negative": lambda x: -x,
    "positive": lambda x: x,
    "square": lambda x: x * x,
    "exp": _unary("exp", math.exp),
    "log": _unary("log", math.log),
    "sin": _unary("sin", math.sin),
    "cos": _unary("cos", math.cos),
    "sqrt": lambda x: x ** 0.5,
}


def exp(x):
    return _UFUNCS["exp"](x)


def log(x):
    return _UFUNCS["log"](x)


def sin(x):
    return _UFUNCS["sin"](x)


def cos(x):
    return _UFUNCS["cos"](x)


@dataclass(frozen=True, eq=False)
class Tape:
    """Immutable recorded program for ``F(u, alpha, t)``."""

    n_state: int
    n_param: int
    op: np.ndarray
    arg0: np.ndarray
    arg1: np.ndarray
    const: np.ndarray
    out_slots: np.ndarray
    recorded_inputs: np.ndarray
    recorded_outputs: np.ndarray

    def __post_init__(self):
        for name in ("op", "arg0", "arg1", "const", "out_slots",
                     "recorded_inputs", "recorded_outputs"):
            getattr(self, name).setflags(write=False)

    @property
    def first_slot(self) -> int:
        return self.n_state + self.n_param + 1

    @property
    def n_slots(self) -> int:
        return self.first_slot + self.op.shape[0]

    @property
    def n_out(self) -> int:
        return self.out_slots.shape[0]

    @property
    def n_instructions(self) -> int:
        return self.op.shape[0]

    def count(self, name: str) -> int:
        """Number of instructions with the given opcode name."""
        code = {v: k for k, v in ops.NAMES.items()}[name.lower()]
        return int(np.count_nonzero(self.op == code))

    @cached_property
    def schedule(self) -> list[list[tuple[int, np.ndarray]]]:
        """Instructions grouped by dependency level, then opcode."""
        n = self.n_instructions
        if n == 0:
            return []
        first = self.first_slot
        level = np.zeros(self.n_slots, dtype=np.int64)
        op, a0, a1 = self.op, self.arg0, self.arg1
        for i in range(n):
            code = op[i]
            if code == ops.CONST:
                lv = 1
            elif code in ops.UNARY:
                lv = level[a0[i]] + 1
            else:
                lv = max(level[a0[i]], level[a1[i]]) + 1
            level[first + i] = lv
        ilevel = level[first:]
        order = np.lexsort((np.arange(n), op, ilevel))
        out: list[list[tuple[int, np.ndarray]]] = []
        lv_sorted = ilevel[order]
        op_sorted = op[order]
        bounds = np.flatnonzero(
            (np.diff(lv_sorted) != 0) | (np.diff(op_sorted) != 0)
        ) + 1
        current = None
        for chunk in np.split(order, bounds):
            lv = ilevel[chunk[0]]
            if lv != current:
                out.append([])
                current = lv
            out[-1].append((int(op[chunk[0]]), chunk.astype(np.int64)))
        return out


def record(
    rhs_builder: Callable,
    n_state: int,
    n_param: int,
    n_out: Optional[int] = None,
    *,
    at: Optional[tuple] = None,
) -> Tape:
    """Trace ``rhs_builder(u, alpha, t)`` into a :class:`Tape`.

    ``u`` and ``alpha`` are passed as object arrays of :class:`Var`, so
    numpy expressions such as ``A @ u`` record naturally. The builder must
    return ``n_out`` (default ``n_state``) outputs; plain numbers are
    allowed and become constants. ``at`` optionally gives the
    ``(u, alpha, t)`` point at which values are traced.
    """
    if n_state < 1 or n_param < 0:
        raise DimensionError("need n_state >= 1 and n_param >= 0")
    n_out = n_state if n_out is None else n_out
    if at is None:
        u_at, a_at, t_at = np.ones(n_state), np.ones(n_param), 0.0
    else:
        u_at, a_at, t_at = at
    inputs = np.concatenate(
        [np.asarray(u_at, float).ravel(), np.asarray(a_at, float).ravel(), [float(t_at)]]
    )
    if inputs.shape[0] != n_state + n_param + 1:
        raise DimensionError("recording point does not match the declared dimensions")
    rec = _Recorder(inputs.shape[0], inputs)
    u = np.empty(n_state, dtype=object)
    for i in range(n_state):
        u[i] = Var(rec, i)
    alpha = np.empty(n_param, dtype=object)
    for k in range(n_param):
        alpha[k] = Var(rec, n_state + k)
    t = Var(rec, n_state + n_param)

    try:
        result = rhs_builder(u, alpha, t)
    except TypeError as exc:
        # numpy reports unsupported ufuncs on object arrays as TypeError
        raise RecordingError(f"unsupported operation during recording: {exc}") from exc
    result = list(np.asarray(result, dtype=object).ravel())
    if len(result) != n_out:
        raise DimensionError(f"builder returned {len(result)} outputs, expected {n_out}")
    out_slots = []
    for r in result:
        if isinstance(r, Var):
            if r._rec is not rec:
                raise RecordingError("output belongs to a different recording")
            out_slots.append(r.slot)
        elif _is_number(r):
            out_slots.append(rec.const_slot(float(r)))
        else:
            raise RecordingError(f"unsupported output type {type(r).__name__}")
    values = np.array(rec.values)
    out_slots = np.array(out_slots, dtype=np.int64)
    return Tape(
        n_state=n_state,
        n_param=n_param,
        op=np.array(rec.op, dtype=np.int8),
        arg0=np.array(rec.a0, dtype=np.int64),
        arg1=np.array(rec.a1, dtype=np.int64),
        const=np.array(rec.cst, dtype=np.float64),
        out_slots=out_slots,
        recorded_inputs=inputs,
        recorded_outputs=values[out_slots],
    )


class Workspace:
    """Value buffer plus ``(n_slots, lanes)`` adjoint buffer for one tape.

    Single-owner mutable state: concurrent sweeps need one workspace each.
    """

    def __init__(self, tape: Tape, lanes: int = 4):
        if not 1 <= lanes <= 8:
            raise ValueError("lane width must be between 1 and 8")
        self.tape = tape
        self.lanes = lanes
        self.values = np.zeros(tape.n_slots)
        self.adjoints = np.zeros((tape.n_slots, lanes))
        self.primed = False

    def _check(self, tape: Tape):
        if tape is not self.tape:
            raise WorkspaceError("workspace was created for a different tape")


def forward_eval(tape: Tape, ws: Workspace, u, alpha, t) -> np.ndarray:
    """Replay the tape at ``(u, alpha, t)`` and return ``F``.

    The value buffer keeps the linearisation point for later reverse sweeps.
    """
    ws._check(tape)
    u = np.asarray(u, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    n, p = tape.n_state, tape.n_param
    if u.shape != (n,) or alpha.shape != (p,):
        raise DimensionError(
            f"expected u of shape ({n},) and alpha of shape ({p},), "
            f"got {u.shape} and {alpha.shape}"
        )
    vals = ws.values
    vals[:n] = u
    vals[n:n + p] = alpha
    vals[n + p] = t
    kernels.active().forward(tape, vals)
    ws.primed = True
    return vals[tape.out_slots]


def reverse_vjp(tape: Tape, ws: Workspace, seeds) -> tuple[np.ndarray, np.ndarray]:
    """One reverse sweep over up to ``ws.lanes`` seed vectors.

    ``seeds`` has shape ``(k, n_out)`` with ``k <= ws.lanes`` (unused lanes
    are zero-seeded) or ``(n_out,)`` for a single lane. Returns
    ``(seeds @ J_u, seeds @ J_alpha)`` with matching leading shape.
    """
    ws._check(tape)
    if not ws.primed:
        raise WorkspaceError("workspace not primed: call forward_eval first")
    seeds = np.asarray(seeds, dtype=np.float64)
    single = seeds.ndim == 1
    if single:
        seeds = seeds[None, :]
    k = seeds.shape[0]
    if seeds.ndim != 2 or seeds.shape[1] != tape.n_out or k > ws.lanes:
        raise DimensionError(
            f"seeds must have shape (<= {ws.lanes}, {tape.n_out}), got {seeds.shape}"
        )
    adj = ws.adjoints
    adj.fill(0.0)
    padded = np.zeros((tape.n_out, ws.lanes))
    padded[:, :k] = seeds.T
    np.add.at(adj, tape.out_slots, padded)
    kernels.active().reverse(tape, ws.values, adj)
    n, p = tape.n_state, tape.n_param
    gx = adj[:n, :k].T.copy()
    ga = adj[n:n + p, :k].T.copy()
    if single:
        return gx[0], ga[0]
    return gx, ga


def vjp_batched(tape: Tape, ws: Workspace, cotangents: np.ndarray):
    """``cotangents @ J`` for any number of rows, ``ws.lanes`` rows per sweep.

    The workspace must already be primed at the linearisation point. Rows
    are processed in consecutive lane batches; each lane gives the same bits
    as a single-lane sweep.
    """
    ws._check(tape)
    if not ws.primed:
        raise WorkspaceError("workspace not primed: call forward_eval first")
    cotangents = np.ascontiguousarray(cotangents, dtype=np.float64)
    if cotangents.ndim != 2 or cotangents.shape[1] != tape.n_out:
        raise DimensionError(
            f"cotangents must have shape (m, {tape.n_out}), got {cotangents.shape}"
        )
    m = cotangents.shape[0]
    gx = np.empty((m, tape.n_state))
    ga = np.empty((m, tape.n_param))
    kernels.active().reverse_batched(tape, ws.values, ws.adjoints, cotangents, gx, ga)
    return gx, ga


def jacobian_dense(tape: Tape, ws: Workspace, u, alpha, t) -> tuple[np.ndarray, np.ndarray]:
    """Dense ``J_u`` (n_out x N) and ``J_alpha`` (n_out x P) via identity seeds."""
    forward_eval(tape, ws, u, alpha, t)
    return vjp_batched(tape, ws, np.eye(tape.n_out))

"""Compiled tape kernels.

Adjoint buffers are ``(n_slots, W)`` C-ordered, so the inner lane loop walks
contiguous memory for every instruction.
"""

import math

import numpy as np
from numba import njit

from .opcodes import ADD, CONST, COS, DIV, EXP, LOG, MUL, NEG, POW, POWC, SIN, SUB

name = "numba"


@njit(cache=True)
def _forward(op, a0, a1, cst, first, vals):
    for i in range(op.shape[0]):
        o = first + i
        k = op[i]
        if k == MUL:
            vals[o] = vals[a0[i]] * vals[a1[i]]
        elif k == ADD:
            vals[o] = vals[a0[i]] + vals[a1[i]]
        elif k == SUB:
            vals[o] = vals[a0[i]] - vals[a1[i]]
        elif k == CONST:
            vals[o] = cst[i]
        elif k == DIV:
            vals[o] = vals[a0[i]] / vals[a1[i]]
        elif k == NEG:
            vals[o] = -vals[a0[i]]
        elif k == EXP:
            vals[o] = math.exp(vals[a0[i]])
        elif k == LOG:
            vals[o] = math.log(vals[a0[i]])
        elif k == SIN:
            vals[o] = math.sin(vals[a0[i]])
        elif k == COS:
            vals[o] = math.cos(vals[a0[i]])
        elif k == POWC:
            vals[o] = vals[a0[i]] ** cst[i]
        elif k == POW:
            vals[o] = vals[a0[i]] ** vals[a1[i]]


@njit(cache=True)
def _reverse(op, a0, a1, cst, first, vals, adj):
    nl = adj.shape[1]
    for i in range(op.shape[0] - 1, -1, -1):
        k = op[i]
        if k == CONST:
            continue
        o = first + i
        x = a0[i]
        y = a1[i]
        if k == MUL:
            dx = vals[y]
            dy = vals[x]
            for w in range(nl):
                g = adj[o, w]
                adj[x, w] += g * dx
                adj[y, w] += g * dy
        elif k == ADD:
            for w in range(nl):
                g = adj[o, w]
                adj[x, w] += g
                adj[y, w] += g
        elif k == SUB:
            for w in range(nl):
                g = adj[o, w]
                adj[x, w] += g
                adj[y, w] -= g
        elif k == NEG:
            for w in range(nl):
                adj[x, w] -= adj[o, w]
        elif k == DIV:
            dx = 1.0 / vals[y]
            dy = -vals[o] / vals[y]
            for w in range(nl):
                g = adj[o, w]
                adj[x, w] += g * dx
                adj[y, w] += g * dy
        elif k == POW:
            dx = vals[y] * vals[x] ** (vals[y] - 1.0)
            dy = vals[o] * math.log(vals[x])
            for w in range(nl):
                g = adj[o, w]
                adj[x, w] += g * dx
                adj[y, w] += g * dy
        else:
            if k == EXP:
                d = vals[o]
            elif k == LOG:
                d = 1.0 / vals[x]
            elif k == SIN:
                d = math.cos(vals[x])
            elif k == COS:
                d = -math.sin(vals[x])
            else:  # POWC
                d = cst[i] * vals[x] ** (cst[i] - 1.0)
            for w in range(nl):
                adj[x, w] += adj[o, w] * d


@njit(cache=True)
def _erk_stages(op, a0, a1, cst, first, outs, vals, u, alpha, t, dt, a, c, U, K):
    n = u.shape[0]
    p = alpha.shape[0]
    for j in range(p):
        vals[n + j] = alpha[j]
    for m in range(c.shape[0]):
        for i in range(n):
            acc = 0.0
            for j in range(m):
                acc += a[m, j] * K[j, i]
            U[m, i] = u[i] + dt * acc
            vals[i] = U[m, i]
        vals[n + p] = t + c[m] * dt
        _forward(op, a0, a1, cst, first, vals)
        for i in range(n):
            K[m, i] = vals[outs[i]]


@njit(cache=True)
def _reverse_batched(op, a0, a1, cst, first, outs, vals, adj, seeds, n, p, gx, ga):
    m_rows = seeds.shape[0]
    nl = adj.shape[1]
    for lo in range(0, m_rows, nl):
        k = min(nl, m_rows - lo)
        adj[:, :] = 0.0
        for o in range(outs.shape[0]):
            for w in range(k):
                adj[outs[o], w] += seeds[lo + w, o]
        _reverse(op, a0, a1, cst, first, vals, adj)
        for w in range(k):
            for i in range(n):
                gx[lo + w, i] = adj[i, w]
            for j in range(p):
                ga[lo + w, j] = adj[n + j, w]


def forward(tape, vals):
    _forward(tape.op, tape.arg0, tape.arg1, tape.const, tape.first_slot, vals)


def reverse(tape, vals, adj):
    _reverse(tape.op, tape.arg0, tape.arg1, tape.const, tape.first_slot, vals, adj)


def reverse_batched(tape, vals, adj, seeds, gx, ga):
    _reverse_batched(
        tape.op, tape.arg0, tape.arg1, tape.const, tape.first_slot, tape.out_slots,
        vals, adj, seeds, tape.n_state, tape.n_param, gx, ga,
    )


def erk_stages(tape, vals, u, alpha, t, dt, a, c, U, K):
    _erk_stages(
        tape.op, tape.arg0, tape.arg1, tape.const, tape.first_slot, tape.out_slots,
        vals, u, alpha, float(t), float(dt), a, c, U, K,
    )


def warmup():
    """Trigger compilation on a one-instruction tape."""
    op = np.array([MUL], dtype=np.int8)
    idx = np.array([0], dtype=np.int64)
    vals = np.ones(4)
    _forward(op, idx, idx + 1, np.zeros(1), 3, vals)
    _reverse(op, idx, idx + 1, np.zeros(1), 3, vals, np.ones((4, 1)))

"""Pure-numpy tape kernels.

Instructions are grouped by dependency level and opcode (``tape.schedule``)
so every group is one vectorised gather/scatter. Reverse scatters use
``np.add.at`` because several instructions of a group may read one slot.
"""

import numpy as np

from .opcodes import ADD, CONST, COS, DIV, EXP, LOG, MUL, NEG, POW, POWC, SIN, SUB

name = "numpy"


def forward(tape, vals):
    first = tape.first_slot
    a0, a1, cst = tape.arg0, tape.arg1, tape.const
    for level in tape.schedule:
        for k, idx in level:
            o = first + idx
            x = vals[a0[idx]]
            if k == MUL:
                vals[o] = x * vals[a1[idx]]
            elif k == ADD:
                vals[o] = x + vals[a1[idx]]
            elif k == SUB:
                vals[o] = x - vals[a1[idx]]
            elif k == CONST:
                vals[o] = cst[idx]
            elif k == DIV:
                vals[o] = x / vals[a1[idx]]
            elif k == NEG:
                vals[o] = -x
            elif k == EXP:
                vals[o] = np.exp(x)
            elif k == LOG:
                vals[o] = np.log(x)
            elif k == SIN:
                vals[o] = np.sin(x)
            elif k == COS:
                vals[o] = np.cos(x)
            elif k == POWC:
                vals[o] = x ** cst[idx]
            elif k == POW:
                vals[o] = x ** vals[a1[idx]]


def reverse(tape, vals, adj):
    first = tape.first_slot
    a0, a1, cst = tape.arg0, tape.arg1, tape.const
    for level in reversed(tape.schedule):
        for k, idx in reversed(level):
            if k == CONST:
                continue
            o = first + idx
            g = adj[o]
            x = a0[idx]
            if k in (ADD, SUB, MUL, DIV, POW):
                y = a1[idx]
                if k == ADD:
                    gx, gy = g, g
                elif k == SUB:
                    gx, gy = g, -g
                elif k == MUL:
                    gx = g * vals[y][:, None]
                    gy = g * vals[x][:, None]
                elif k == DIV:
                    gx = g * (1.0 / vals[y])[:, None]
                    gy = g * (-vals[o] / vals[y])[:, None]
                else:
                    gx = g * (vals[y] * vals[x] ** (vals[y] - 1.0))[:, None]
                    gy = g * (vals[o] * np.log(vals[x]))[:, None]
                np.add.at(adj, x, gx)
                np.add.at(adj, y, gy)
                continue
            if k == NEG:
                np.subtract.at(adj, x, g)
                continue
            if k == EXP:
                d = vals[o]
            elif k == LOG:
                d = 1.0 / vals[x]
            elif k == SIN:
                d = np.cos(vals[x])
            elif k == COS:
                d = -np.sin(vals[x])
            else:
                d = cst[idx] * vals[x] ** (cst[idx] - 1.0)
            np.add.at(adj, x, g * d[:, None])


def reverse_batched(tape, vals, adj, seeds, gx, ga):
    n, p = tape.n_state, tape.n_param
    nl = adj.shape[1]
    for lo in range(0, seeds.shape[0], nl):
        k = min(nl, seeds.shape[0] - lo)
        adj.fill(0.0)
        padded = np.zeros((tape.n_out, nl))
        padded[:, :k] = seeds[lo:lo + k].T
        np.add.at(adj, tape.out_slots, padded)
        reverse(tape, vals, adj)
        gx[lo:lo + k] = adj[:n, :k].T
        ga[lo:lo + k] = adj[n:n + p, :k].T


def erk_stages(tape, vals, u, alpha, t, dt, a, c, U, K):
    n = u.shape[0]
    p = alpha.shape[0]
    vals[n:n + p] = alpha
    outs = tape.out_slots
    for m in range(c.shape[0]):
        acc = np.zeros(n)
        for j in range(m):
            acc += a[m, j] * K[j]
        U[m] = u + dt * acc
        vals[:n] = U[m]
        vals[n + p] = t + c[m] * dt
        forward(tape, vals)
        K[m] = vals[outs]


def warmup():
    pass

"""Shared builders for the test suite."""

import numpy as np

from erkadjoint.adtape import record


def glv2_tape():
    def build(x, a, t):
        r, A = a[:2], a[2:].reshape(2, 2)
        return x * (r + A @ x)

    return record(build, 2, 6)


GLV2_ALPHA = np.array([0.1, 0.1, 0.0, -0.1, 0.1, 0.0])

import numpy as np
import pytest

from erkadjoint import kernels
from erkadjoint.adtape import record
from erkadjoint.forward import OdeProblem

BACKENDS = ["numpy"] + (["numba"] if kernels.numba_available() else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    with kernels.use_backend(request.param):
        yield request.param


@pytest.fixture
def linear_problem():
    """u' = alpha u, u(0) = 1, alpha = 0.5 on [0, 1]."""
    tape = record(lambda u, a, t: [a[0] * u[0]], 1, 1)
    return OdeProblem(tape, [1.0], [0.5], 0.0, 1.0)


@pytest.fixture
def growth_problem():
    """u' = u, u(0) = 1 on [0, 1] with no parameters."""
    tape = record(lambda u, a, t: [u[0]], 1, 0)
    return OdeProblem(tape, [1.0], [], 0.0, 1.0)

"""Compare the compiled numba kernels with the pure-numpy fallback.

Times a forward solve and a full discrete-adjoint solve on GLV systems of
increasing size with each backend, checks that both give the same answer
and prints a small table. Usage::

    python benchmarks/bench_backends.py [--n 5 10 20] [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from erkadjoint import kernels
from erkadjoint.adjoint import solve_endpoint
from erkadjoint.forward import StepController, integrate
from erkadjoint.problems import GlvSpec, glv_generate
from erkadjoint.tableau import get_tableau


def best_of(fn, repeats):
    fn()  # compile / warm caches
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return 1e3 * min(times)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, nargs="+", default=[5, 10, 20])
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--repeats", type=int, default=5)
    args = p.parse_args(argv)

    if not kernels.numba_available():
        raise SystemExit("numba is not installed; nothing to compare")
    tb = get_tableau("cash_karp")
    ctl = StepController.tol(args.tol)
    print(f"{'N':>4} {'task':>8} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8} {'max diff':>10}")
    for N in args.n:
        problem = glv_generate(GlvSpec(N=N))
        tasks = {
            "forward": lambda: integrate(problem, tb, ctl)[0],
            "adjoint": lambda: solve_endpoint(problem, tb, ctl).dalpha,
        }
        for task, fn in tasks.items():
            ms, out = {}, {}
            for backend in ("numpy", "numba"):
                with kernels.use_backend(backend):
                    ms[backend] = best_of(fn, args.repeats)
                    out[backend] = fn()
            diff = float(np.max(np.abs(out["numpy"] - out["numba"])))
            print(f"{N:>4} {task:>8} {ms['numpy']:>10.2f} {ms['numba']:>10.2f} "
                  f"{ms['numpy'] / ms['numba']:>7.1f}x {diff:>10.1e}")


if __name__ == "__main__":
    main()

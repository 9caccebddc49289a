"""``erkadjoint`` command line: experiments that write CSV."""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from datetime import datetime, timezone
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __doc__ as _pkg_doc
from . import kernels
from .bench import (
    DEFAULT_TOLERANCES,
    HEAT_COLUMNS,
    METHODS,
    SCALING_COLUMNS,
    WP_COLUMNS,
    heat2d_run,
    run_method,
    scaling_run,
    wp_run,
)
from .forward import DivergenceError, StepController, StepFailureError
from .problems import GlvSpec, Heat2dSpec, glv_generate, vanderpol_problem
from .tableau import TABLEAUS


def _write_csv(out: Optional[str], meta: dict, columns: Sequence[str], rows: Iterable[list]):
    fh = sys.stdout if out in (None, "-") else open(out, "w", newline="", encoding="utf-8")
    try:
        for key, value in meta.items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(row)
    finally:
        if fh is not sys.stdout:
            fh.close()


def _meta(args, **extra) -> dict:
    meta = {
        "command": args.command,
        "backend": kernels.backend_name(),
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    meta.update(extra)
    return meta


def _controller(args, tol: float) -> StepController:
    atol = args.atol if args.atol is not None else tol
    rtol = args.rtol if args.rtol is not None else tol
    return StepController(atol=atol, rtol=rtol)


def _fail(msg: str) -> int:
    print(f"invariant violated: {msg}", file=sys.stderr)
    return 1


# ---------------------------------------------------------------- commands


def cmd_heat2d(args) -> int:
    methods = args.method or list(METHODS)
    tableau = args.tableau or "euler"
    dt = args.dt if args.dt is not None else 5e-5
    bump = args.bump if args.bump is not None else 1e-9
    rows = []
    for n_p in args.np:
        spec = Heat2dSpec(n_p=n_p, tf=args.tf, dt=dt, method=tableau, kappa=args.kappa)
        rows.extend(heat2d_run(spec, methods, bump=bump, lanes=args.lanes))
    meta = _meta(args, tableau=tableau, dt=dt, tf=args.tf, kappa=args.kappa, bump=bump,
                 lanes=args.lanes, methods=" ".join(methods), np=" ".join(map(str, args.np)))
    _write_csv(args.out, meta, HEAT_COLUMNS, (r.cells() for r in rows))
    for r in rows:
        if r.method not in ("casa",) and r.status != "ok":
            return _fail(f"{r.method} reported {r.status} at n_p={r.n_p}")
    return 0


def cmd_vanderpol(args) -> int:
    methods = args.method or ["adjoint", "nd"]
    tableau = args.tableau or "cash_karp"
    tols = args.tol or [1e-6, 1e-8]
    bump = args.bump if args.bump is not None else 1e-6
    problem = vanderpol_problem(args.mu, args.tf)
    cols = ["method", "tol", "dx_dmu", "dv_dmu", "n_accepted", "n_rejected", "mean_ms", "status"]
    rows = []
    bad = None
    for method in methods:
        for tol in tols:
            ctl = _controller(args, tol)
            t0 = time.perf_counter()
            try:
                out = run_method(method, problem, tableau, controller=ctl, bump=bump,
                                 lanes=args.lanes)
            except (DivergenceError, StepFailureError) as exc:
                rows.append([method, f"{tol:.1e}", "", "", 0, 0, "", f"failed: {exc}"])
                continue
            ms = 1e3 * (time.perf_counter() - t0)
            d = out.dalpha[:, 0]
            ok = bool(np.all(np.isfinite(d)))
            if not ok and method != "casa":
                bad = f"non-finite sensitivity from {method} at tol {tol}"
            rows.append([method, f"{tol:.1e}", f"{d[0]:.12e}", f"{d[1]:.12e}",
                         out.n_accepted, out.n_rejected, f"{ms:.3f}", "ok" if ok else "non-finite"])
    meta = _meta(args, tableau=tableau, mu=args.mu, tf=args.tf, bump=bump,
                 atol=args.atol, rtol=args.rtol, lanes=args.lanes)
    _write_csv(args.out, meta, cols, rows)
    return _fail(bad) if bad else 0


def _glv_spec(args, N: int) -> GlvSpec:
    return GlvSpec(N=N, seed=args.seed, connectance=args.connectance, sigma=args.sigma,
                   diag=args.diag)


def cmd_glv_wp(args) -> int:
    methods = args.method or ["adjoint", "cfsa", "nd"]
    tableau = args.tableau or "cash_karp"
    tols = sorted(args.tol or DEFAULT_TOLERANCES, reverse=True)
    bump = args.bump if args.bump is not None else 1e-6
    meta_rows = []
    all_rows = []
    for N in args.n:
        problem = glv_generate(_glv_spec(args, N))
        idx = None if args.nd_params is None else list(range(min(args.nd_params, problem.P)))
        rows = wp_run(problem, None, methods, tols, args.repeats, tableau=tableau,
                      bump=bump, lanes=args.lanes, param_indices=idx, baseline=args.baseline)
        all_rows.extend([N] + r.cells() for r in rows)
        meta_rows.append((N, rows))
    sigma = "0.1/sqrt(N)" if args.sigma is None else args.sigma
    meta = _meta(args, tableau=tableau, seed=args.seed, connectance=args.connectance,
                 sigma=sigma, diag=args.diag, bump=bump, repeats=args.repeats,
                 baseline=args.baseline, baseline_tol=1e-15, lanes=args.lanes,
                 nd_params=args.nd_params if args.nd_params is not None else "all")
    _write_csv(args.out, meta, ["N"] + WP_COLUMNS, all_rows)
    for N, rows in meta_rows:
        for r in rows:
            if r.status == "baseline" and r.error != 0.0:
                return _fail(f"baseline error nonzero for {r.method}, N={N}")
            if r.status == "ok" and not (r.error >= 0 and r.mean_ms > 0):
                return _fail(f"bad row {r.cells()} at N={N}")
    return 0


def cmd_glv_scaling(args) -> int:
    methods = args.method or ["adjoint", "cfsa"]
    tableau = args.tableau or "cash_karp"
    tol = (args.tol or [1e-7])[0]
    kw = dict(connectance=args.connectance, sigma=args.sigma, diag=args.diag)
    rows, slopes = scaling_run(args.n, tol, methods, seed=args.seed, repeats=args.repeats,
                               tableau=tableau, lanes=args.lanes, spec_kwargs=kw)
    meta = _meta(args, tableau=tableau, tol=tol, seed=args.seed, repeats=args.repeats,
                 lanes=args.lanes, **{f"slope_{m}": f"{s:.4f}" for m, s in slopes.items()})
    _write_csv(args.out, meta, SCALING_COLUMNS, (r.cells() for r in rows))
    if len(rows) != len(args.n) * len(methods):
        return _fail("row count differs from |N list| x |method list|")
    if any(not (r.mean_ms > 0 and math.isfinite(r.mean_ms)) for r in rows):
        return _fail("non-positive runtime")
    return 0


def cmd_validate(args) -> int:
    from .validate import run_all

    checks = run_all()
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
    return 0 if all(c.passed for c in checks) else 1


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--method", nargs="+", choices=METHODS,
                        help="sensitivity methods to run")
    common.add_argument("--tableau", choices=sorted(TABLEAUS), help="Runge-Kutta tableau")
    common.add_argument("--tol", type=float, nargs="+",
                        help="tolerance(s); atol = rtol = tol unless overridden")
    common.add_argument("--atol", type=float, help="absolute tolerance override")
    common.add_argument("--rtol", type=float, help="relative tolerance override")
    common.add_argument("--dt", type=float, help="fixed step size")
    common.add_argument("--bump", type=float, help="finite-difference bump")
    common.add_argument("--seed", type=int, default=0, help="GLV generator seed")
    common.add_argument("--lanes", type=int, default=4, help="adjoint lane width W (1-8)")
    common.add_argument("--repeats", type=int, default=3, help="timing repetitions")
    common.add_argument("--out", help="CSV output file (default: stdout)")

    glv = argparse.ArgumentParser(add_help=False)
    glv.add_argument("--connectance", type=float, default=0.5)
    glv.add_argument("--sigma", type=float, default=None, help="default 0.1/sqrt(N)")
    glv.add_argument("--diag", type=float, default=-1.0)

    p = argparse.ArgumentParser(prog="erkadjoint", description=_pkg_doc)
    sub = p.add_subparsers(dest="command", required=True)

    h = sub.add_parser("heat2d", parents=[common], help="heat equation vs analytic sensitivities")
    h.add_argument("--np", type=int, nargs="+", default=[10], help="grid points per side")
    h.add_argument("--tf", type=float, default=1e-2)
    h.add_argument("--kappa", type=float, default=1.0, help="thermal diffusivity")
    h.set_defaults(func=cmd_heat2d)

    v = sub.add_parser("vanderpol", parents=[common], help="Van der Pol sensitivities to mu")
    v.add_argument("--mu", type=float, default=1e3)
    v.add_argument("--tf", type=float, default=0.5)
    v.set_defaults(func=cmd_vanderpol)

    w = sub.add_parser("glv-wp", parents=[common, glv], help="GLV work-precision rows")
    w.add_argument("--n", type=int, nargs="+", default=[10], help="species counts")
    w.add_argument("--baseline", choices=("self", "adjoint"), default="self")
    w.add_argument("--nd-params", type=int, default=None,
                   help="restrict finite differences to the first K parameters")
    w.set_defaults(func=cmd_glv_wp)

    s = sub.add_parser("glv-scaling", parents=[common, glv], help="runtime against N + P")
    s.add_argument("--n", type=int, nargs="+", default=[10, 20, 40, 80])
    s.set_defaults(func=cmd_glv_scaling)

    val = sub.add_parser("validate", parents=[common], help="run the quick oracle suite")
    val.set_defaults(func=cmd_validate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if not 1 <= args.lanes <= 8:
        print("--lanes must be between 1 and 8", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

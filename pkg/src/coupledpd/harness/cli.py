"""``coupledpd`` command line: validate, run, bench-random, certify."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from ..calculus import max_disagreement, modified_lagrangian
from ..certify import kkt_residual, rate_certificate
from ..dynamics import RunRecord, SolverConfig
from ..errors import CoupledPDError
from ..problem import validate
from . import io
from .bench import bench_random, solve_and_certify
from .examples import build_example1

KKT_GATE = 1e-3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coupledpd", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    v = sub.add_parser("validate", help="check an instance file")
    v.add_argument("instance")

    r = sub.add_parser("run", help="distributed run with certificates, written to a run directory")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("instance", nargs="?")
    src.add_argument("--example1", action="store_true", help="use the built-in four-agent example")
    r.add_argument("--h", type=float, default=1e-3)
    r.add_argument("--T", type=float, default=100.0)
    r.add_argument("--K", type=float, default=None, help="penalty gain (default: automatic rule)")
    r.add_argument("--record-every", type=int, default=100)
    r.add_argument("--scheme", choices=("semi-implicit", "explicit"), default="semi-implicit")
    r.add_argument("--out", default=None, help="run directory (default: run-<instance name>)")

    b = sub.add_parser("bench-random", help="random scalar instances, mean relative error table")
    b.add_argument("--n", type=int, default=10)
    b.add_argument("--m", type=int, default=5)
    b.add_argument("--trials", type=int, default=100)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--h", type=float, default=1e-2)
    b.add_argument("--T", type=float, default=100.0)

    c = sub.add_parser("certify", help="re-check KKT and rate certificates of a saved run")
    c.add_argument("run_dir")
    return p


def _cmd_validate(args) -> int:
    problem = io.load(args.instance)
    report = validate(problem)
    print(report)
    print("valid" if report.ok else "INVALID")
    return 0 if report.ok else 1


def _cmd_run(args) -> int:
    problem = build_example1() if args.example1 else io.load(args.instance)
    report = validate(problem)
    if not report.ok:
        print(report, file=sys.stderr)
        print("instance failed validation", file=sys.stderr)
        return 1
    cfg = SolverConfig(step_h=args.h, horizon_T=args.T, K=args.K, record_every=args.record_every,
                       scheme=args.scheme)
    record, summary, _ = solve_and_certify(problem, cfg)
    out = Path(args.out or f"run-{problem.name or 'instance'}")
    io.write_run(out, problem, record, summary)
    k = summary["kkt"]
    print(f"K = {summary['K']:.6g}, {summary['rounds']} rounds, {summary['wall_seconds']:.1f} s")
    print(f"consensus residual {summary['consensus_residual']:.3e}")
    print("KKT " + ", ".join(f"{n} {v:.2e}" for n, v in k.items()))
    if "x_error_inf" in summary:
        print(f"max |x(T) - x*| = {summary['x_error_inf']:.3e}; "
              f"empirical theta0 {summary['rate']['theta0_empirical']:.4g}")
    print(f"wrote {out}")
    return 0


def _cmd_bench(args) -> int:
    res = bench_random(args.n, args.m, args.trials, args.seed, step_h=args.h, horizon_T=args.T)
    print(res.table())
    return 0


def _cmd_certify(args) -> int:
    problem, traj, avgs, summary = io.read_run(args.run_dir)
    N, M = problem.n_agents, problem.m_constraints
    xcols = [c for c in io.trajectory_header(problem)[1:] if c.startswith("x_")]
    lcols = [c for c in io.trajectory_header(problem)[1:] if c.startswith("lam_")]
    x = np.array([traj[c][-1] for c in xcols])
    lam = np.array([traj[c][-1] for c in lcols]).reshape(N, M)
    rep = kkt_residual(problem, x, lam.mean(axis=0))
    ok = rep.ok(KKT_GATE)
    print(f"final t = {traj['t'][-1]:g}, consensus residual {max_disagreement(lam):.3e}")
    print(f"KKT stationarity {rep.stationarity_residual:.2e}, complementarity {rep.complementarity_residual:.2e}, "
          f"violation {rep.primal_violation:.2e}, dual feasibility {rep.dual_feasibility:.2e} "
          f"-> {'ok' if ok else 'FAIL'}")
    ref = summary.get("reference")
    if ref is not None:
        K = float(summary["K"])
        xh = np.column_stack([avgs["hat_" + c] for c in xcols])
        lh = np.column_stack([avgs["hat_" + c] for c in lcols]).reshape(-1, N, M)
        vals = np.array([modified_lagrangian(problem, a, b, K) for a, b in zip(xh, lh)])
        stub = RunRecord(avgs["t"], xh, lh, xh, lh, {"lagrangian_avg": vals}, None, K, None)
        rate = rate_certificate(stub, float(ref["saddle_value"]))
        print(f"rate: sup t*|gap| = {rate.sup:.4g}, value at t = 1: {rate.at_one:.4g} "
              f"-> {'bounded' if rate.bounded() else 'NOT bounded'}")
        ok &= rate.bounded()
    else:
        print("no reference stored; rate check skipped")
    return 0 if ok else 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handlers = {"validate": _cmd_validate, "run": _cmd_run, "bench-random": _cmd_bench, "certify": _cmd_certify}
    try:
        return handlers[args.cmd](args)
    except (CoupledPDError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


cli_main = main

if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

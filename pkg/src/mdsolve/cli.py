"""Command-line entry point ``mdsolve``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from .config import ConfigError, RunConfig, load_config
from .harness import RunError, convergence_study, eoc, iteration_study, run
from .solver import SolverError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="mdsolve", description="DGSEM with HBPC time stepping")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("run", "single run"), ("convergence", "time-step convergence study"),
                       ("iterations", "linear-solver iteration study")):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("config")
        sp.add_argument("--dt", type=float)
        sp.add_argument("--q", type=int)
        sp.add_argument("--kmax", type=int)
        sp.add_argument("--precond")
        sp.add_argument("--mode")
        sp.add_argument("--threads", type=int)
        sp.add_argument("--out")
    sub.add_parser("selftest", help="run the fast invariant checks")
    return p


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    return cfg.with_overrides(dt=args.dt, q=args.q, k_max=args.kmax, preconditioner=args.precond,
                              mode=args.mode, threads=args.threads, out_dir=args.out)


def _csv_path(cfg: RunConfig, kind: str) -> str:
    return os.path.join(cfg.out_dir, f"{cfg.prefix}_{kind}.csv")


def _cmd_run(cfg):
    _, summary = run(cfg)
    print(summary.text())


def _cmd_convergence(cfg):
    dts = list(cfg.dt_list or (cfg.dt,))
    path = _csv_path(cfg, "convergence")
    rows = convergence_study(cfg, dts, path)
    print(f"{'dt':>12} {'err_sum':>14} {'eoc':>7} {'newton':>8} {'gmres':>8}")
    for r, p in zip(rows, eoc([r["err_sum"] for r in rows], dts)):
        ptxt = f"{p:7.3f}" if p is not None else " " * 7
        print(f"{r['dt']:12.6g} {r['err_sum']:14.6e} {ptxt} {r['newton_total']:8d} {r['gmres_total']:8d}")
    print(f"wrote {path}")


def _cmd_iterations(cfg):
    path = _csv_path(cfg, "iterations")
    rows = iteration_study(cfg, path=path)
    print(f"{'mode':>9} {'precond':>9} {'dt':>10} {'gmres/step':>11} {'newton/step':>12}  status")
    for r in rows:
        status = "ok" if r["converged"] else f"failed ({r['failure']})"
        print(f"{r['mode']:>9} {r['preconditioner']:>9} {r['dt']:10.4g} "
              f"{r['gmres_per_step']:11.1f} {r['newton_per_step']:12.2f}  {status}")
    print(f"wrote {path}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "selftest":
        from .selftest import run_selftest

        return EXIT_OK if run_selftest() else EXIT_FAIL
    try:
        cfg = _apply_flags(load_config(args.config), args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    handler = {"run": _cmd_run, "convergence": _cmd_convergence, "iterations": _cmd_iterations}[args.command]
    try:
        with threadpool_limits(limits=cfg.threads):
            handler(cfg)
    except (RunError, SolverError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

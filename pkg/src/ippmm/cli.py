"""Command-line entry point: ``ippmm solve | bench | profile``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

from .bench import perf_profile, read_records, run_suite, solve_file, write_records
from .mps import ParseError
from .problem import ModelError
from .solver import SolverConfig
from .theory import UnsupportedProblem

TOL_ENV = "IPPMM_TOL"
EXIT_ERROR = 1


def _default_tol() -> float:
    value = os.environ.get(TOL_ENV)
    if value is None:
        return 1e-6
    try:
        return float(value)
    except ValueError:
        raise SystemExit(f"{TOL_ENV}={value!r} is not a number")


def _add_solver_flags(p: argparse.ArgumentParser):
    p.add_argument("--tol", type=float, default=None,
                   help=f"termination tolerance (default 1e-6, or ${TOL_ENV})")
    p.add_argument("--maxit", type=int, default=200, help="maximum IPM iterations")
    p.add_argument("--no-scaling", action="store_true", help="skip row scaling")


def _config(args, mode: str = "practical") -> SolverConfig:
    tol = args.tol if args.tol is not None else _default_tol()
    return SolverConfig(tol=tol, ip_maxit=args.maxit, mode=mode)


def _write_log(path, rows):
    if not rows:
        open(path, "w").close()
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: " ".join(map(str, v)) if isinstance(v, tuple) else v
                        for k, v in row.items()})


def cmd_solve(args) -> int:
    config = _config(args, args.mode)
    try:
        res, seconds = solve_file(args.file, config, scale=not args.no_scaling)
    except (OSError, ParseError, ModelError, UnsupportedProblem) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR
    obj = res.objective_original if res.objective_original is not None else res.objective
    print(f"status: {res.status.value}")
    print(f"objective: {obj:.12g}")
    print(f"primal residual: {res.primal_residual:.3e}")
    print(f"dual residual: {res.dual_residual:.3e}")
    print(f"mu: {res.mu:.3e}")
    print(f"iterations: {res.iterations}")
    print(f"time: {seconds:.3f} s")
    if res.message:
        print(f"message: {res.message}")
    if args.log:
        _write_log(args.log, res.log)
    return res.exit_code


def cmd_bench(args) -> int:
    try:
        records = run_suite(args.directory, _config(args), args.compare,
                            scale=not args.no_scaling, workers=args.workers)
    except NotADirectoryError as err:
        print(f"error: not a directory: {err}", file=sys.stderr)
        return EXIT_ERROR
    for r in records:
        print(f"{r.problem:24s} {r.config:6s} {r.status:14s} {r.iterations:4d} {r.time:8.3f}s")
    if args.out:
        write_records(records, args.out)
    return 0


def cmd_profile(args) -> int:
    try:
        records = read_records(args.records)
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR
    prof = perf_profile(records, args.metric)
    if args.out:
        prof.to_csv(args.out)
    else:
        w = csv.writer(sys.stdout)
        w.writerow(["config", "ratio", "fraction"])
        for label, curve in prof.curves.items():
            for tau, frac in curve:
                w.writerow([label, tau, frac])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ippmm", description="Convex QP solver (IP-PMM).")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one QPS/MPS file")
    p.add_argument("file")
    _add_solver_flags(p)
    p.add_argument("--mode", choices=["practical", "theory"], default="practical")
    p.add_argument("--log", metavar="CSV", help="write the iteration log here")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="solve every file in a directory")
    p.add_argument("directory")
    _add_solver_flags(p)
    p.add_argument("--compare", choices=["ippmm", "noreg", "both"], default="ippmm")
    p.add_argument("--out", metavar="CSV", help="write records here")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("profile", help="performance profile from a records CSV")
    p.add_argument("records")
    p.add_argument("--metric", choices=["time", "iterations"], default="time")
    p.add_argument("--out", metavar="CSV")
    p.set_defaults(func=cmd_profile)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

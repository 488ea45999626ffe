"""Suite runner, CSV records and performance profiles."""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import logging
import math
import time
import warnings
from pathlib import Path

from .mps import ParseError, read_qps
from .problem import ModelError, to_standard_form
from .solver import SolverConfig, Status, solve_problem

__all__ = [
    "BenchRecord",
    "PerfProfile",
    "perf_profile",
    "read_records",
    "run_suite",
    "solve_file",
    "write_records",
]

log = logging.getLogger(__name__)

# status of a record whose problem could not even be set up (bad file, l > u)
ERROR = "Error"
PROBLEM_SUFFIXES = (".qps", ".mps", ".QPS", ".MPS")


@dataclasses.dataclass(frozen=True)
class BenchRecord:
    problem: str
    config: str
    status: str
    iterations: int
    time: float
    primal_residual: float
    dual_residual: float
    mu: float
    objective: float
    message: str = ""

    @property
    def solved(self) -> bool:
        return self.status == Status.OPTIMAL.value


_FIELDS = [f.name for f in dataclasses.fields(BenchRecord)]
_CASTS = {"iterations": int, "time": float, "primal_residual": float,
          "dual_residual": float, "mu": float, "objective": float}


def write_records(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=_FIELDS)
        w.writeheader()
        for r in records:
            # repr keeps every float bit-exact through the round trip
            row = {k: repr(v) if isinstance(v, float) else v
                   for k, v in dataclasses.asdict(r).items()}
            w.writerow(row)


def read_records(path) -> list[BenchRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        missing = set(_FIELDS) - set(row)
        if missing - {"message"}:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        vals = {k: _CASTS[k](row[k]) if k in _CASTS else row.get(k, "") for k in _FIELDS}
        out.append(BenchRecord(**vals))
    return out


def solve_file(path, config: SolverConfig | None = None, scale: bool = True):
    """Parse, standardize and solve one file; returns ``(result, seconds)``
    where the time covers the solve only."""
    raw = read_qps(path)
    qp, vmap = to_standard_form(raw)
    t0 = time.perf_counter()
    res = solve_problem(qp, vmap, config, scale=scale)
    return res, time.perf_counter() - t0


def _record(path: Path, label: str, config: SolverConfig, scale: bool) -> BenchRecord:
    name = path.stem
    try:
        res, seconds = solve_file(path, config, scale)
    except (OSError, ParseError, ModelError, ValueError) as err:
        log.warning("%s: %s", path, err)
        nan = math.nan
        return BenchRecord(name, label, ERROR, 0, 0.0, nan, nan, nan, nan, str(err))
    obj = res.objective_original if res.objective_original is not None else res.objective
    return BenchRecord(
        problem=name,
        config=label,
        status=res.status.value,
        iterations=res.iterations,
        time=seconds,
        primal_residual=res.primal_residual,
        dual_residual=res.dual_residual,
        mu=res.mu,
        objective=obj,
        message=res.message,
    )


def _configs(config: SolverConfig, comparison: str) -> list[tuple[str, SolverConfig]]:
    if comparison == "ippmm":
        return [("ippmm", config)]
    if comparison == "noreg":
        return [("noreg", config.without_regularization())]
    if comparison == "both":
        return [("ippmm", config), ("noreg", config.without_regularization())]
    raise ValueError(f"unknown comparison {comparison!r}")


def problem_files(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise NotADirectoryError(str(d))
    return sorted(p for p in d.iterdir() if p.suffix in PROBLEM_SUFFIXES)


def run_suite(directory, config: SolverConfig | None = None, comparison: str = "ippmm",
              scale: bool = True, workers: int = 1) -> list[BenchRecord]:
    """Solve every QPS/MPS file in ``directory`` under each configuration.

    Failures are recorded, never raised.  Records are ordered by problem
    name, then configuration, whatever the number of workers.
    """
    config = config or SolverConfig()
    jobs = [(p, label, cfg) for p in problem_files(directory)
            for label, cfg in _configs(config, comparison)]
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(_record, p, label, cfg, scale) for p, label, cfg in jobs]
            records = [f.result() for f in futures]
    else:
        records = [_record(p, label, cfg, scale) for p, label, cfg in jobs]
    return sorted(records, key=lambda r: (r.problem, r.config))


@dataclasses.dataclass
class PerfProfile:
    """Cumulative fraction of problems solved within a factor ``tau`` of the
    best configuration, as step functions on a common grid of ratios."""

    metric: str
    curves: dict[str, list[tuple[float, float]]]
    ratios: dict[str, dict[str, float]]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["config", "ratio", "fraction"])
            for label, curve in self.curves.items():
                for tau, frac in curve:
                    w.writerow([label, repr(tau), repr(frac)])

    def fraction(self, label: str, tau: float) -> float:
        """Value of the step function of ``label`` at ``tau``."""
        value = 0.0
        for t, f in self.curves[label]:
            if t <= tau:
                value = f
        return value


def perf_profile(records, metric: str = "time") -> PerfProfile:
    if metric not in ("time", "iterations"):
        raise ValueError("metric must be 'time' or 'iterations'")
    by_config: dict[str, dict[str, BenchRecord]] = {}
    for r in records:
        by_config.setdefault(r.config, {})[r.problem] = r
    problems = sorted({r.problem for r in records})

    best: dict[str, float] = {}
    for p in problems:
        vals = [float(getattr(recs[p], metric)) for recs in by_config.values()
                if p in recs and recs[p].solved]
        if vals:
            best[p] = min(vals)
    if not best:
        warnings.warn("no problem was solved by any configuration; empty profile")
        return PerfProfile(metric, {}, {})

    ratios: dict[str, dict[str, float]] = {}
    for label, recs in by_config.items():
        ratios[label] = {}
        for p in problems:
            r = recs.get(p)
            if r is None or not r.solved:
                ratios[label][p] = math.inf
                continue
            v, b = float(getattr(r, metric)), best[p]
            ratios[label][p] = 1.0 if v == b else (v / b if b > 0 else math.inf)

    grid = sorted({1.0} | {t for rs in ratios.values() for t in rs.values() if math.isfinite(t)})
    n = len(problems)
    curves = {
        label: [(tau, sum(t <= tau for t in rs.values()) / n) for tau in grid]
        for label, rs in ratios.items()
    }
    return PerfProfile(metric, curves, ratios)

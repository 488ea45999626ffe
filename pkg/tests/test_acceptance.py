"""Acceptance checks, one test per criterion, each at its stated tolerance.

Every test records a ``criterion N PASS|FAIL: detail`` line, printed in the
pytest terminal summary.  Expensive runs are shared through module-scoped
fixtures; criteria 5 and 8 inspect the logs of all the other runs.
"""

import math
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES, CORPUS
from oracles import min_norm_semi, random_feasible_qp

from ippmm.bench import solve_file
from ippmm.mps import read_qps
from ippmm.problem import StandardQP, to_standard_form
from ippmm.solver import SolverConfig, Status
from ippmm.theory import iteration_cap, semi_norm, theory_starting_point, theory_step

_norm = np.linalg.norm

# optimal values from oracles.active_set_optimum (all corpus problems have n <= 6)
ORACLE = {
    "lp_diet": 1.5789473684210542,
    "lp_fixed": 17.499999999999986,
    "lp_max_ineq": 10.999999999999993,
    "lp_ranges": 6.999999999999999,
    "lp_transport": 2079.999999999999,
    "lp_vertex": 0.0,
    "qp_box": -6.78125,
    "qp_coupled": -8.222222222222218,
    "qp_free_only": -2.099999999999999,
    "qp_mixed_free": -0.4999999999999999,
    "qp_portfolio": 0.01828384730024077,
    "qp_sym2": 2.000000000000001,
    "rd_balanced_transport": 2239.999999999998,
    "rd_dependent_rows": 2.363636363636359,
    "rd_duplicate_row": 6.999999999999997,
    "rd_scaled_copy": -1.4999999999999991,
}

FEASIBLE = sorted((CORPUS / "feasible").glob("*.qps"))
RANKDEF = sorted((CORPUS / "rankdef").glob("*.qps"))
INFEASIBLE = sorted((CORPUS / "infeasible").glob("*.qps"))
DESK = FEASIBLE + RANKDEF


def report(number, ok, detail):
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


class Run:
    def __init__(self, path, config):
        raw = read_qps(path)
        self.name = path.stem
        self.raw = raw
        self.qp, _ = to_standard_form(raw)
        self.config = config
        self.result, self.seconds = solve_file(path, config)


@pytest.fixture(scope="module")
def runs():
    """Practical runs keyed by (name, tol, label)."""
    out = {}
    t0 = time.perf_counter()
    for p in FEASIBLE:
        out[p.stem, 1e-6, "ippmm"] = Run(p, SolverConfig(tol=1e-6))
    feasible_wall = time.perf_counter() - t0
    for p in RANKDEF:
        out[p.stem, 1e-6, "ippmm"] = Run(p, SolverConfig(tol=1e-6))
        out[p.stem, 1e-6, "noreg"] = Run(p, SolverConfig(tol=1e-6).without_regularization())
    for p in DESK:
        out[p.stem, 1e-10, "ippmm"] = Run(p, SolverConfig(tol=1e-10))
    for p in INFEASIBLE:
        out[p.stem, 1e-6, "ippmm"] = Run(p, SolverConfig(tol=1e-6))
    return out, feasible_wall


def _tc_optimal(run, tol):
    """The optimality test of the termination rule, recomputed from the
    standard-form data and the returned triple."""
    qp, res = run.qp, run.result
    A, Q = qp.A.toarray(), qp.Q.toarray()
    rp = qp.b - A @ res.x
    rd = qp.c - A.T @ res.y + Q @ res.x - res.z
    idx = np.setdiff1d(np.arange(qp.n), qp.free)
    mu = float(res.x[idx] @ res.z[idx] / idx.size) if idx.size else 0.0
    return (_norm(rp) / max(_norm(qp.b), 1.0) <= tol
            and _norm(rd) / max(_norm(qp.c), 1.0) <= tol
            and mu <= tol
            and np.all(res.x[idx] >= 0) and np.all(res.z[idx] >= 0))


def test_criterion_1_corpus_optimality(runs):
    out, wall = runs
    bad = []
    for p in FEASIBLE:
        run = out[p.stem, 1e-6, "ippmm"]
        res = run.result
        obj = res.objective_original
        ref = ORACLE[p.stem]
        ok = (res.status is Status.OPTIMAL and _tc_optimal(run, 1e-6)
              and abs(obj - ref) <= 1e-5 * max(abs(ref), 1.0)
              and run.raw.is_feasible(res.x_original, 1e-5))
        if not ok:
            bad.append(p.stem)
    ok = len(FEASIBLE) >= 10 and not bad and wall < 10.0
    assert report(1, ok, f"{len(FEASIBLE) - len(bad)}/{len(FEASIBLE)} optimal and matching "
                         f"the oracle, corpus time {wall:.2f} s (failures: {bad})")


def test_criterion_2_robustness_ladder(runs):
    out, _ = runs
    ok6 = sum(out[p.stem, 1e-6, "ippmm"].result.status is Status.OPTIMAL for p in DESK)
    ok10 = sum(out[p.stem, 1e-10, "ippmm"].result.status is Status.OPTIMAL
               and _tc_optimal(out[p.stem, 1e-10, "ippmm"], 1e-10) for p in DESK)
    n = len(DESK)
    ok = ok6 == n and ok10 >= 0.9 * n
    assert report(2, ok, f"{ok6}/{n} at tol 1e-6, {ok10}/{n} at tol 1e-10")


def test_criterion_3_regularization_advantage(runs):
    out, _ = runs
    reg = [out[p.stem, 1e-6, "ippmm"].result.status for p in RANKDEF]
    noreg = [out[p.stem, 1e-6, "noreg"].result.status for p in RANKDEF]
    failed = (Status.ILL_CONDITIONED, Status.NO_CONVERGENCE)
    ok = (len(RANKDEF) >= 3 and all(s is Status.OPTIMAL for s in reg)
          and all(s in failed for s in noreg))
    assert report(3, ok, f"regularized {[s.value for s in reg]}, "
                         f"unregularized {[s.value for s in noreg]}")


def test_criterion_4_infeasibility_detection(runs):
    out, _ = runs
    statuses = {p.stem: out[p.stem, 1e-6, "ippmm"].result.status for p in INFEASIBLE}
    detected = sum(s is Status.INFEASIBLE for s in statuses.values())
    misclassified = [k for k, r in out.items()
                     if k[0] in ORACLE and r.result.status is Status.INFEASIBLE]
    ok = len(INFEASIBLE) == 10 and detected >= 8 and not misclassified
    others = sorted({s.value for s in statuses.values() if s is not Status.INFEASIBLE})
    assert report(4, ok, f"{detected}/{len(INFEASIBLE)} infeasible detected "
                         f"(others ended {others}), {len(misclassified)} feasible misclassified")


@pytest.fixture(scope="module")
def theory_runs():
    """50 random feasible QPs solved by theory mode, with the iterates kept."""
    rng = np.random.default_rng(20240601)
    runs = []
    t0 = time.perf_counter()
    tol = 1e-6
    for _ in range(50):
        n = int(rng.integers(3, 21))
        m = int(rng.integers(1, min(10, n - 1) + 1))
        # Q = M^T M / n + 1e-3 I keeps the spectrum of Q of order one for every n
        A, b, c, Q = random_feasible_qp(rng, n, m, q_scale=1.0 / n)
        qp = StandardQP.from_dense(A, b, c, Q=Q)
        state, params = theory_starting_point(qp)
        cap = iteration_cap(n, tol)
        states, entries = [state], []
        while not (_norm(b - A @ state.x) < tol
                   and _norm(c - A.T @ state.y + Q @ state.x - state.z) < tol
                   and state.mu < tol):
            if state.k >= cap:
                break
            state, entry = theory_step(state, params, qp)
            states.append(state)
            entries.append(entry)
        runs.append((qp, params, states, entries, state.mu < tol and state.k <= cap))
    return runs, time.perf_counter() - t0


def _theory_violations(qp, params, states, entries):
    A, Q = qp.A.toarray(), qp.Q.toarray()
    bad = []
    for prev, st, e in zip(states, states[1:], entries):
        mu = st.mu
        ratio = mu / params.mu0
        rp = A @ st.x + mu * (st.y - st.lam) - qp.b - ratio * params.b_bar
        rd = -Q @ st.x + A.T @ st.y + st.z - mu * (st.x - st.zeta) - qp.c - ratio * params.c_bar
        checks = {
            "membership": e.report.member,
            "centrality": bool(np.all(st.x * st.z >= params.gamma_mu * mu)),
            "decrease": mu <= (1 - 0.01 * e.alpha) * prev.mu,
            "residual": math.hypot(_norm(rp), _norm(rd)) <= params.C_N * ratio,
        }
        bad += [name for name, ok in checks.items() if not ok]
    return bad


def test_criterion_6_theory_guarantees(theory_runs):
    runs, seconds = theory_runs
    violations, converged = [], 0
    for qp, params, states, entries, done in runs:
        violations += _theory_violations(qp, params, states, entries)
        converged += done
    iters = [len(r[3]) for r in runs]
    ok = not violations and converged == 50 and seconds < 60
    assert report(6, ok, f"{converged}/50 converged within the cap, "
                         f"{len(violations)} invariant violations, iterations "
                         f"{min(iters)}..{max(iters)}, {seconds:.1f} s")


def test_criterion_7_semi_norm_oracle():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 9))
        m = int(rng.integers(1, n + 1))
        A = rng.standard_normal((m, n))
        M = rng.standard_normal((n, n))
        Q = M.T @ M * rng.random()
        b, c = rng.standard_normal(m), rng.standard_normal(n)
        worst = max(worst, abs(semi_norm(A, Q, b, c) - min_norm_semi(A, Q, b, c)))
    assert report(7, worst <= 1e-8, f"100 cases, worst absolute difference {worst:.2e}")


def test_criterion_5_inertia(runs):
    out, _ = runs
    total, wrong = 0, []
    for key, run in out.items():
        if key[2] != "ippmm":
            continue
        expect = (run.qp.m, run.qp.n, 0)
        for row in run.result.log:
            total += 1
            if tuple(row["inertia"]) != expect:
                wrong.append(key[0])
    ok = total > 0 and not wrong
    assert report(5, ok, f"{total - len(wrong)}/{total} regularized factorizations "
                         f"with inertia (m, n, 0)")


def test_criterion_8_direction_residuals(runs, theory_runs):
    out, _ = runs
    worst, count = 0.0, 0
    for run in out.values():
        for row in run.result.log:
            for key in ("residual_predictor", "residual_corrector"):
                count += 1
                worst = max(worst, row[key])
    for *_, entries, _ in theory_runs[0]:
        for e in entries:
            count += 1
            worst = max(worst, e.newton_residual)
    ok = worst <= 1e-8
    assert report(8, ok, f"{count} solves, worst relative residual {worst:.2e}")

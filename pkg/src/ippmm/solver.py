"""Interior point - proximal method of multipliers for convex QPs.

Each iteration solves the regularized Newton system twice with one
factorization (a predictor and a corrector), takes separate primal and dual
step lengths, and then updates the proximal estimates ``lam`` (dual) and
``zeta`` (primal) together with their penalties ``delta`` and ``rho``.
The penalties shrink at the rate the barrier parameter ``mu`` does and never
drop below ``reg_thr``.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import math
import time

import numpy as np
import scipy.sparse as sp

from . import kkt
from .problem import RowScaling, StandardQP, VarMap, scale_rows

__all__ = [
    "EXIT_CODES",
    "IterationState",
    "SolveResult",
    "SolverConfig",
    "Status",
    "check_termination",
    "corrector",
    "predictor",
    "refresh_estimates",
    "regularization_floor",
    "solve",
    "starting_point",
    "step_fraction",
    "update_penalties",
]

log = logging.getLogger(__name__)
_norm = np.linalg.norm

# rate used for penalty updates when there is no barrier (all variables free)
PURE_PMM_RATE = 0.9


class Status(str, enum.Enum):
    CONTINUE = "Continue"
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    NO_CONVERGENCE = "NoConvergence"
    ILL_CONDITIONED = "IllConditioned"


EXIT_CODES = {
    Status.OPTIMAL: 0,
    Status.INFEASIBLE: 2,
    Status.NO_CONVERGENCE: 3,
    Status.ILL_CONDITIONED: 4,
}


@dataclasses.dataclass(frozen=True)
class SolverConfig:
    """Solver settings.

    ``delta0 = rho0 = 0`` turns every proximal term off and gives a plain
    (unregularized) infeasible IPM running through the same code.
    ``pivot_threshold=None`` picks ``0.1 * reg_thr`` when regularized and
    the factorization's default cancellation test otherwise.
    """

    tol: float = 1e-6
    ip_maxit: int = 200
    pmm_maxit: int = 5
    tau: float = 0.995
    delta0: float = 8.0
    rho0: float = 8.0
    infeasibility_norm: float = 1e10
    max_escalations: int = 5
    mode: str = "practical"
    pivot_threshold: float | None = None
    start_reg: float = 8.0
    dense_limit: int = kkt.DENSE_LIMIT

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if self.delta0 < 0 or self.rho0 < 0:
            raise ValueError("penalties must be nonnegative")
        if self.mode not in ("practical", "theory"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def regularized(self) -> bool:
        return self.delta0 > 0 or self.rho0 > 0

    def without_regularization(self) -> "SolverConfig":
        return dataclasses.replace(self, delta0=0.0, rho0=0.0, pivot_threshold=None)


@dataclasses.dataclass
class IterationState:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    mu: float
    delta: float
    rho: float
    lam: np.ndarray
    zeta: np.ndarray
    reg_thr: float
    k: int = 0
    k_pmm: int = 0
    # iterations since lambda and zeta were last updated, separately
    k_lam: int = 0
    k_zeta: int = 0


@dataclasses.dataclass
class SolveResult:
    status: Status
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    mu: float
    iterations: int
    log: list[dict]
    message: str = ""
    solve_time: float = 0.0
    x_original: np.ndarray | None = None
    objective_original: float | None = None

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.status]


def _mu(x, z, idx) -> float:
    return float(x[idx] @ z[idx] / idx.size) if idx.size else 0.0


def regularization_floor(qp: StandardQP, tol: float) -> float:
    """``max(tol / max(||A||_inf^2, ||Q||_inf^2), 1e-10)``."""
    norm_a = sp.linalg.norm(qp.A, np.inf) if qp.A.nnz else 0.0
    norm_q = sp.linalg.norm(qp.Q, np.inf) if qp.Q.nnz else 0.0
    big = max(norm_a ** 2, norm_q ** 2)
    return max(tol / big if big > 0 else tol, 1e-10)


def starting_point(qp: StandardQP, reg: float = 8.0, tol: float = 1e-8):
    """Least-norm primal/dual guesses shifted into the positive orthant.

    Both normal-equation solves use ``A A^T + reg I`` through Jacobi-PCG.
    """
    A, Q, b, c = qp.A, qp.Q, qp.b, qp.c
    idx = qp.nonneg
    if qp.m:
        w, _, ok = kkt.pcg_normal(A, reg, b, tol=tol)
        x = A.T @ w
        y, _, ok2 = kkt.pcg_normal(A, reg, A @ (c + Q @ x), tol=tol)
        if not (ok and ok2):
            log.info("starting point: PCG stopped at its iteration limit")
    else:
        x = np.zeros(qp.n)
        y = np.zeros(0)
    z = c - A.T @ y + Q @ x
    z[qp.free] = 0.0
    if idx.size == 0:
        return x, y, z

    xi, zi = x[idx], z[idx]
    dx = max(-1.5 * xi.min(), 0.0)
    dz = max(-1.5 * zi.min(), 0.0)
    prod = (xi + dx) @ (zi + dz)
    sx, sz = np.sum(xi + dx), np.sum(zi + dz)
    dx_t = dx + 0.5 * prod / sz if sz > 0 else dx + 1.0
    dz_t = dz + 0.5 * prod / sx if sx > 0 else dz + 1.0
    if np.min(xi + dx_t) <= 0:
        dx_t = dx + 1.0
    if np.min(zi + dz_t) <= 0:
        dz_t = dz + 1.0
    x[idx] = xi + dx_t
    z[idx] = zi + dz_t
    return x, y, z


def step_fraction(v, dv, tau: float = 0.995) -> float:
    """``tau * min(1, min_{dv<0} -v/dv)``."""
    v = np.asarray(v)
    dv = np.asarray(dv)
    neg = dv < 0
    amax = 1.0
    if np.any(neg):
        with np.errstate(over="ignore"):
            amax = min(1.0, float(np.min(-v[neg] / dv[neg])))
    return tau * amax


def _augmented_solve(fact, rhs):
    u = kkt.solve_factored(fact, rhs)
    return u, kkt.relative_residual(fact.system.K, u, rhs)


def predictor(state: IterationState, qp: StandardQP, fact: kkt.KKTFactorization):
    """Affine-scaling direction of the regularized Newton system.

    Returns ``(dx, dy, dz, residual)`` with the relative residual of the
    augmented solve.
    """
    x, y, z = state.x, state.y, state.z
    idx = qp.nonneg
    n = qp.n
    d1 = np.zeros(n)
    d1[idx] = -z[idx]  # -X^{-1}(XZe): drive complementarity to zero
    r_dual = qp.c + qp.Q @ x - qp.A.T @ y - z + state.rho * (x - state.zeta)
    r_primal = qp.b - qp.A @ x - state.delta * (y - state.lam)
    rhs = np.concatenate([r_dual - d1, r_primal])
    u, res = _augmented_solve(fact, rhs)
    dx, dy = u[:n], u[n:]
    dz = np.zeros(n)
    dz[idx] = d1[idx] - fact.system.theta_inv[idx] * dx[idx]
    return dx, dy, dz, res


def corrector(state: IterationState, qp: StandardQP, fact: kkt.KKTFactorization,
              pred, alpha_x: float, alpha_z: float):
    """Centering-correcting direction; returns the combined direction
    ``(dx, dy, dz, residual, mu_target)``."""
    x, z = state.x, state.z
    idx = qp.nonneg
    n = qp.n
    pdx, pdy, pdz = pred[:3]
    xi, zi = x[idx], z[idx]
    g = (xi + alpha_x * pdx[idx]) @ (zi + alpha_z * pdz[idx])
    mu_t = (g / (xi @ zi)) ** 2 * g / idx.size
    d2 = np.zeros(n)
    d2[idx] = (mu_t - pdx[idx] * pdz[idx]) / xi
    rhs = np.concatenate([-d2, np.zeros(qp.m)])
    u, res = _augmented_solve(fact, rhs)
    cdx, cdy = u[:n], u[n:]
    cdz = np.zeros(n)
    cdz[idx] = d2[idx] - fact.system.theta_inv[idx] * cdx[idx]
    return pdx + cdx, pdy + cdy, pdz + cdz, res, mu_t


def _decreased(new, old) -> bool:
    # a residual that is already zero is not "sufficiently reduced" by staying zero
    nn, no = _norm(new), _norm(old)
    return nn <= 0.95 * no and nn < no


def update_penalties(state: IterationState, qp: StandardQP, x, y, z) -> IterationState:
    """Next iterate with proximal estimates and penalties updated.

    An estimate is replaced by the new iterate when its residual fell by at
    least 5%; its penalty then shrinks by ``(1 - r)``, otherwise by
    ``(1 - r/3)``, where ``r`` is the relative decrease of ``mu`` (zero
    when ``mu`` grew).
    """
    idx = qp.nonneg
    mu_new = _mu(x, z, idx)
    if idx.size:
        # rate of decrease; a rise in mu must not shrink the penalties
        r = max(state.mu - mu_new, 0.0) / state.mu if state.mu > 0 else 0.0
    else:
        r = PURE_PMM_RATE
    rp_old, rd_old = qp.residuals(state.x, state.y, state.z)
    rp_new, rd_new = qp.residuals(x, y, z)

    lam, delta = state.lam, state.delta
    if _decreased(rp_new, rp_old):
        lam = y.copy()
        delta = (1 - r) * delta
        lam_updated = True
    else:
        delta = (1 - r / 3) * delta
        lam_updated = False
    delta = max(delta, state.reg_thr)

    zeta, rho = state.zeta, state.rho
    if _decreased(rd_new, rd_old):
        zeta = x.copy()
        rho = (1 - r) * rho
        zeta_updated = True
    else:
        rho = (1 - r / 3) * rho
        zeta_updated = False
    rho = max(rho, state.reg_thr)

    return IterationState(
        x=x, y=y, z=z, mu=mu_new, delta=delta, rho=rho, lam=lam, zeta=zeta,
        reg_thr=state.reg_thr, k=state.k + 1,
        k_pmm=0 if (lam_updated or zeta_updated) else state.k_pmm + 1,
        k_lam=0 if lam_updated else state.k_lam + 1,
        k_zeta=0 if zeta_updated else state.k_zeta + 1,
    )


def check_termination(state: IterationState, qp: StandardQP, config: SolverConfig) -> Status:
    x, y, z = state.x, state.y, state.z
    rp, rd = qp.residuals(x, y, z)
    has_barrier = qp.nonneg.size > 0
    if (
        _norm(rd) / max(_norm(qp.c), 1.0) <= config.tol
        and _norm(rp) / max(_norm(qp.b), 1.0) <= config.tol
        and (state.mu <= config.tol or not has_barrier)
    ):
        return Status.OPTIMAL
    if state.k_pmm >= config.pmm_maxit:
        reg_dual = rd + state.rho * (x - state.zeta)
        if _norm(reg_dual) <= config.tol and _norm(x - state.zeta) > config.infeasibility_norm:
            return Status.INFEASIBLE
        reg_primal = rp - state.delta * (y - state.lam)
        if _norm(reg_primal) <= config.tol and _norm(y - state.lam) > config.infeasibility_norm:
            return Status.INFEASIBLE
    if state.k >= config.ip_maxit:
        return Status.NO_CONVERGENCE
    return Status.CONTINUE


def refresh_estimates(state: IterationState, qp: StandardQP, config: SolverConfig) -> bool:
    """Move a stalled estimate to the current iterate.

    An estimate qualifies when it has not changed for ``pmm_maxit``
    iterations and its proximal subproblem is solved to ``tol``, so the
    remaining residual is all proximal term.  Such a residual cannot fall
    any further and the 5% rule would keep the estimate forever; this is
    the plain multiplier step of the proximal method instead.  Meant to
    run after the infeasibility test has declined.  Returns whether
    anything changed.
    """
    x, y, z = state.x, state.y, state.z
    rp, rd = qp.residuals(x, y, z)
    changed = False
    if (state.k_lam >= config.pmm_maxit
            and _norm(rp - state.delta * (y - state.lam)) <= config.tol
            and _norm(rp) / max(_norm(qp.b), 1.0) > config.tol):
        state.lam = y.copy()
        state.k_lam = 0
        changed = True
    if (state.k_zeta >= config.pmm_maxit
            and _norm(rd + state.rho * (x - state.zeta)) <= config.tol
            and _norm(rd) / max(_norm(qp.c), 1.0) > config.tol):
        state.zeta = x.copy()
        state.k_zeta = 0
        changed = True
    if changed:
        state.k_pmm = 0
    return changed


def _escalate(state: IterationState):
    """Raise both penalties tenfold, and the floor too when either sits on it."""
    at_floor = state.delta <= state.reg_thr or state.rho <= state.reg_thr
    state.delta *= 10
    state.rho *= 10
    if at_floor:
        state.reg_thr *= 10


def _factor(qp, state, config, budget):
    """Factorize, raising the regularization on breakdown.

    Returns ``(factorization, attempts)``; the factorization is None once
    ``budget`` attempts have failed.
    """
    attempts = 0
    while attempts < budget:
        attempts += 1
        system = kkt.assemble(qp, state.x, state.z, state.rho, state.delta)
        thr = config.pivot_threshold
        if thr is None and config.regularized:
            thr = 0.1 * state.reg_thr
        try:
            return kkt.factorize(system, thr, config.dense_limit), attempts
        except kkt.FactorError as err:
            log.debug("k=%d factorization failed (%s)", state.k, err)
            _escalate(state)
    return None, attempts


def _directions(qp, state, config):
    """Factorize and compute the predictor-corrector directions.

    A direction whose linear-system residual misses ``kkt.SOLVE_TOL`` after
    refinement counts as a failed factorization: the regularization is
    raised and the system rebuilt.  Returns ``(fact, attempts, pred,
    (dx, dy, dz, res_c, ax, az))`` with ``fact`` None after
    ``max_escalations`` consecutive failures.
    """
    idx = qp.nonneg
    attempts = 0
    while attempts < config.max_escalations:
        fact, used = _factor(qp, state, config, config.max_escalations - attempts)
        attempts += used
        if fact is None:
            break
        pred = predictor(state, qp, fact)
        if idx.size:
            ax = step_fraction(state.x[idx], pred[0][idx], config.tau)
            az = step_fraction(state.z[idx], pred[2][idx], config.tau)
            dx, dy, dz, res_c, _ = corrector(state, qp, fact, pred, ax, az)
            ax = step_fraction(state.x[idx], dx[idx], config.tau)
            az = step_fraction(state.z[idx], dz[idx], config.tau)
        else:
            # no barrier: a plain proximal-multiplier Newton step
            dx, dy, dz = pred[:3]
            res_c = 0.0
            ax = az = 1.0
        if max(pred[3], res_c) <= kkt.SOLVE_TOL:
            return fact, attempts, pred, (dx, dy, dz, res_c, ax, az)
        log.debug("k=%d inaccurate direction (residuals %.1e, %.1e)", state.k, pred[3], res_c)
        _escalate(state)
    return None, attempts, None, None


def _result(status, qp, state, history, message="", t0=None):
    rp, rd = qp.residuals(state.x, state.y, state.z)
    return SolveResult(
        status=status,
        x=state.x,
        y=state.y,
        z=state.z,
        objective=qp.objective(state.x),
        primal_residual=float(_norm(rp) / max(_norm(qp.b), 1.0)),
        dual_residual=float(_norm(rd) / max(_norm(qp.c), 1.0)),
        mu=state.mu,
        iterations=state.k,
        log=history,
        message=message,
        solve_time=0.0 if t0 is None else time.perf_counter() - t0,
    )


def solve(qp: StandardQP, config: SolverConfig | None = None) -> SolveResult:
    """Solve a standard-form QP (already scaled, if scaling is wanted)."""
    config = config or SolverConfig()
    if config.mode == "theory":
        from .theory import solve_as_result

        return solve_as_result(qp, tol=config.tol)

    t0 = time.perf_counter()
    idx = qp.nonneg
    x, y, z = starting_point(qp, config.start_reg)
    reg_thr = regularization_floor(qp, config.tol) if config.regularized else 0.0
    state = IterationState(
        x=x, y=y, z=z, mu=_mu(x, z, idx),
        delta=config.delta0, rho=config.rho0,
        lam=y.copy(), zeta=x.copy(), reg_thr=reg_thr,
    )
    history: list[dict] = []

    while True:
        status = check_termination(state, qp, config)
        if status is not Status.CONTINUE:
            return _result(status, qp, state, history, t0=t0)
        refresh_estimates(state, qp, config)

        try:
            fact, attempts, pred, step = _directions(qp, state, config)
        except kkt.DomainError as err:
            return _result(Status.ILL_CONDITIONED, qp, state, history, str(err), t0)
        if fact is None:
            return _result(
                Status.ILL_CONDITIONED, qp, state, history,
                f"factorization failed {attempts} consecutive times", t0,
            )
        dx, dy, dz, res_c, ax, az = step

        new = update_penalties(
            state, qp,
            state.x + ax * dx, state.y + az * dy, state.z + az * dz,
        )
        rp, rd = qp.residuals(new.x, new.y, new.z)
        history.append({
            "k": new.k,
            "mu": new.mu,
            "primal_residual": float(_norm(rp)),
            "dual_residual": float(_norm(rd)),
            "alpha_x": ax,
            "alpha_z": az,
            "delta": new.delta,
            "rho": new.rho,
            "reg_thr": new.reg_thr,
            "k_pmm": new.k_pmm,
            "factor_attempts": attempts,
            "inertia": fact.inertia,
            "quasi_definite": fact.system.quasi_definite,
            "residual_predictor": pred[3],
            "residual_corrector": res_c,
        })
        if not (np.all(np.isfinite(new.x)) and np.all(np.isfinite(new.y))):
            return _result(Status.ILL_CONDITIONED, qp, state, history, "non-finite iterate", t0)
        state = new


def solve_problem(qp: StandardQP, vmap: VarMap | None = None,
                  config: SolverConfig | None = None, scale: bool = True) -> SolveResult:
    """Scale rows, solve, and undo the scaling (and the standardization when
    ``vmap`` is given)."""
    scaling = RowScaling(np.ones(qp.m))
    work = qp
    if scale and qp.m:
        A, b, scaling = scale_rows(qp.A, qp.b)
        work = dataclasses.replace(qp, A=A, b=b)
    res = solve(work, config)
    res.y = res.y * scaling.d
    rp, rd = qp.residuals(res.x, res.y, res.z)
    res.primal_residual = float(_norm(rp) / max(_norm(qp.b), 1.0))
    res.dual_residual = float(_norm(rd) / max(_norm(qp.c), 1.0))
    if vmap is not None:
        res.x_original = vmap.original_x(res.x)
        res.objective_original = vmap.original_objective(res.objective)
    return res

"""Reference implementation of the neighborhood-following IP-PMM.

This is the short-step method whose iterates stay inside a family of
neighborhoods of regularized central paths.  Penalties equal the barrier
parameter (``delta = rho = mu``), every Newton system is the full 3x3 block
system solved densely, and each accepted point is checked for membership,
so a run doubles as an empirical check of the convergence theory.  It is
meant for small problems only.
"""

from __future__ import annotations

import csv
import dataclasses
import math

import numpy as np

from .problem import StandardQP

__all__ = [
    "NeighborhoodReport",
    "SemiNorm",
    "StepFailure",
    "TheoryParams",
    "TheoryState",
    "TheoryTrace",
    "TraceEntry",
    "UnsupportedProblem",
    "neighborhood_check",
    "newton_system",
    "semi_norm",
    "solve_as_result",
    "theory_solve",
    "theory_starting_point",
    "theory_step",
]

_norm = np.linalg.norm

ALPHA_SHRINK = 0.9
ALPHA_FLOOR = 1e-10


class UnsupportedProblem(ValueError):
    """Theory mode needs every variable to be sign-constrained."""


class StepFailure(RuntimeError):
    """No step length on the backtracking grid was admissible."""


def _dense(M) -> np.ndarray:
    return M.toarray() if hasattr(M, "toarray") else np.asarray(M, dtype=float)


class SemiNorm:
    """Evaluator of ``||(b, c)||_A = min ||(x, z)||`` subject to
    ``A x = b`` and ``-Q x + A^T y + z = c``.

    Writing ``x = x_p + N t`` with ``x_p`` the least-norm solution of
    ``A x = b`` and ``N`` an orthonormal null-space basis, and eliminating
    ``z``, the problem becomes an ordinary least-squares problem in
    ``(t, y)``.  The SVD of ``A`` and the pseudo-inverse of that
    least-squares matrix depend only on ``(A, Q)`` and are computed once.
    Returns ``inf`` when ``b`` is not in the range of ``A``.
    """

    def __init__(self, A, Q, consistency_tol: float = 1e-9):
        A = _dense(A)
        Q = _dense(Q)
        m, n = A.shape
        self.A, self.Q = A, Q
        self.consistency_tol = consistency_tol
        if m:
            U, s, Vt = np.linalg.svd(A, full_matrices=True)
            cut = max(m, n) * np.finfo(float).eps * (s[0] if s.size else 0.0)
            r = int(np.sum(s > cut))
        else:
            U, s, Vt, r = np.zeros((0, 0)), np.zeros(0), np.eye(n), 0
        self.rank = r
        self._pinv = Vt[:r].T @ (U[:, :r].T / s[:r, None])
        self.N = Vt[r:].T
        M = np.block([
            [self.N, np.zeros((n, m))],
            [Q @ self.N, -A.T],
        ])
        W = -np.linalg.pinv(M)
        k = self.N.shape[1]
        # the minimizer is linear in (b, c): (x, z) = L @ (b, c)
        P = self._pinv
        Wx, Wc = W[:, :n], W[:, n:]
        Tb = (Wx + Wc @ Q) @ P
        Tc = Wc
        Xb = P + self.N @ Tb[:k]
        Xc = self.N @ Tc[:k]
        Yb, Yc = Tb[k:], Tc[k:]
        Zb = Q @ Xb - A.T @ Yb
        Zc = np.eye(n) + Q @ Xc - A.T @ Yc
        self._X = np.hstack([Xb, Xc])
        self._Y = np.hstack([Yb, Yc])
        self._Z = np.hstack([Zb, Zc])
        self._L = np.vstack([self._X, self._Z])
        self._R = np.eye(m) - A @ P  # residual of the range projection
        # iterate-independent part of the 3x3 block Newton matrix
        self.newton_base = np.block([
            [-Q, A.T, np.eye(n)],
            [A, np.zeros((m, m)), np.zeros((m, n))],
            [np.zeros((n, n + m + n))],
        ])

    def _consistent(self, B):
        gap = np.linalg.norm(self._R @ B, axis=0)
        return gap <= self.consistency_tol * (1 + np.linalg.norm(B, axis=0))

    def minimizer(self, b_arg, c_arg):
        """Return ``(x, y, z)`` attaining the semi-norm, or None when the
        constraints are inconsistent."""
        v = np.concatenate([np.asarray(b_arg, dtype=float), np.asarray(c_arg, dtype=float)])
        if not self._consistent(v[: self.A.shape[0], None])[0]:
            return None
        return self._X @ v, self._Y @ v, self._Z @ v

    def batch(self, B, C) -> np.ndarray:
        """Semi-norms of the column pairs ``(B[:, j], C[:, j])``."""
        V = np.vstack([B, C])
        vals = np.linalg.norm(self._L @ V, axis=0)
        return np.where(self._consistent(B), vals, np.inf)

    def __call__(self, b_arg, c_arg) -> float:
        sol = self.minimizer(b_arg, c_arg)
        if sol is None:
            return math.inf
        x, _, z = sol
        return float(math.hypot(_norm(x), _norm(z)))


def semi_norm(A, Q, b_arg, c_arg) -> float:
    return SemiNorm(A, Q)(b_arg, c_arg)


@dataclasses.dataclass(frozen=True)
class TheoryParams:
    C_N: float
    gamma_A: float
    gamma_mu: float
    sigma_min: float
    sigma_max: float
    sigma: float
    rho_start: float
    b_bar: np.ndarray
    c_bar: np.ndarray
    mu0: float
    semi: SemiNorm | None = dataclasses.field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.C_N > 0:
            raise ValueError("C_N must be positive")
        for name in ("gamma_A", "gamma_mu"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not 0 < self.sigma_min <= self.sigma_max <= 0.5:
            raise ValueError("need 0 < sigma_min <= sigma_max <= 0.5")
        if not self.rho_start > 0 or not self.mu0 > 0:
            raise ValueError("rho_start and mu0 must be positive")

    def clamp_sigma(self, sigma: float) -> float:
        return min(max(sigma, self.sigma_min), self.sigma_max)


@dataclasses.dataclass
class TheoryState:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    zeta: np.ndarray
    k: int = 0

    @property
    def mu(self) -> float:
        return float(self.x @ self.z / self.x.size)


@dataclasses.dataclass
class NeighborhoodReport:
    b_tilde: np.ndarray
    c_tilde: np.ndarray
    norm2: float
    semi: float
    min_ratio: float
    positive: bool
    norm_ok: bool
    semi_ok: bool
    centrality_ok: bool

    @property
    def member(self) -> bool:
        return self.positive and self.norm_ok and self.semi_ok and self.centrality_ok

    @property
    def failures(self) -> list[str]:
        tests = [
            ("positivity", self.positive),
            ("norm", self.norm_ok),
            ("semi-norm", self.semi_ok),
            ("centrality", self.centrality_ok),
        ]
        return [name for name, ok in tests if not ok]


def _require_sign_constrained(qp: StandardQP):
    if qp.free.size:
        raise UnsupportedProblem("theory mode does not support free variables")


def theory_starting_point(qp: StandardQP, rho_start: float | None = None, *,
                          C_N: float | None = None, gamma_A: float = 0.9,
                          gamma_mu: float = 0.1, sigma: float = 0.3,
                          sigma_min: float | None = None, sigma_max: float = 0.5):
    """``x0 = z0 = rho_start * e``, ``y0 = e``; returns ``(state, params)``."""
    _require_sign_constrained(qp)
    A, Q = _dense(qp.A), _dense(qp.Q)
    if rho_start is None:
        scale = max(np.max(np.abs(qp.b), initial=0.0), np.max(np.abs(qp.c), initial=0.0))
        rho_start = max(10.0, 1.5 * scale)
    x0 = np.full(qp.n, float(rho_start))
    z0 = x0.copy()
    y0 = np.ones(qp.m)
    b_bar = A @ x0 - qp.b
    c_bar = -Q @ x0 + A.T @ y0 + z0 - qp.c
    if C_N is None:
        C_N = 1e4 * max(1.0, float(math.hypot(_norm(b_bar), _norm(c_bar))))
    if sigma_min is None:
        sigma_min = min(sigma, 0.1)
    params = TheoryParams(
        C_N=C_N, gamma_A=gamma_A, gamma_mu=gamma_mu,
        sigma_min=sigma_min, sigma_max=sigma_max, sigma=sigma,
        rho_start=float(rho_start), b_bar=b_bar, c_bar=c_bar,
        mu0=float(rho_start) ** 2, semi=SemiNorm(A, Q),
    )
    state = TheoryState(x=x0, y=y0, z=z0, lam=y0.copy(), zeta=x0.copy())
    return state, params


def _semi(params: TheoryParams, qp: StandardQP) -> SemiNorm:
    return params.semi if params.semi is not None else SemiNorm(qp.A, qp.Q)


def _scaled_residuals(x, y, z, lam, zeta, mu, params, qp, A, Q):
    ratio = mu / params.mu0
    rp = A @ x + mu * (y - lam) - qp.b - ratio * params.b_bar
    rd = -Q @ x + A.T @ y + z - mu * (x - zeta) - qp.c - ratio * params.c_bar
    return rp / ratio, rd / ratio


def neighborhood_check(state: TheoryState, params: TheoryParams, qp: StandardQP,
                       mu: float | None = None) -> NeighborhoodReport:
    """Membership of ``state`` in the neighborhood for barrier ``mu``
    (default: the state's own ``mu``) around its estimates."""
    x, y, z = state.x, state.y, state.z
    mu = state.mu if mu is None else mu
    semi = _semi(params, qp)
    bt, ct = _scaled_residuals(x, y, z, state.lam, state.zeta, mu, params, qp, semi.A, semi.Q)
    return _report(x, z, mu, bt, ct, semi(bt, ct), params)


def _report(x, z, mu, bt, ct, value, params) -> NeighborhoodReport:
    norm2 = float(math.hypot(_norm(bt), _norm(ct)))
    positive = bool(np.all(x > 0) and np.all(z > 0))
    min_ratio = float(np.min(x * z) / mu) if x.size else math.inf
    return NeighborhoodReport(
        b_tilde=bt,
        c_tilde=ct,
        norm2=norm2,
        semi=value,
        min_ratio=min_ratio,
        positive=positive,
        norm_ok=norm2 <= params.C_N,
        semi_ok=value <= params.gamma_A * params.rho_start,
        centrality_ok=bool(np.all(x * z >= params.gamma_mu * mu)),
    )


# candidate step lengths, largest first: 1, 0.9, 0.81, ... down to the floor
ALPHA_GRID = ALPHA_SHRINK ** np.arange(int(math.log(ALPHA_FLOOR) / math.log(ALPHA_SHRINK)) + 1)


def _first_admissible(state, dx, dy, dz, params, qp, semi):
    """Largest admissible step on ``ALPHA_GRID``, or None.

    Every test of the step rule is evaluated for all grid points at once;
    the result is the one sequential backtracking would stop at.  Returns
    ``(index, b_tilde, c_tilde, semi_norm)`` of the accepted point.
    """
    al = ALPHA_GRID
    n = qp.n
    mu = state.mu
    X = state.x[:, None] + dx[:, None] * al
    Z = state.z[:, None] + dz[:, None] * al
    XZ = X * Z
    mu_a = XZ.sum(axis=0) / n
    ok = (mu_a > 0) & (mu_a <= (1 - 0.01 * al) * mu)
    ok &= np.all(X > 0, axis=0) & np.all(Z > 0, axis=0)
    ok &= np.all(XZ >= params.gamma_mu * mu_a, axis=0)
    if not ok.any():
        return None
    idx = np.flatnonzero(ok)
    al, X, Z, mu_a = al[idx], X[:, idx], Z[:, idx], mu_a[idx]
    Y = state.y[:, None] + dy[:, None] * al
    ratio = mu_a / params.mu0
    A, Q = semi.A, semi.Q
    rp = A @ X + mu_a * (Y - state.lam[:, None]) - qp.b[:, None] - np.outer(params.b_bar, ratio)
    rd = (-Q @ X + A.T @ Y + Z - mu_a * (X - state.zeta[:, None])
          - qp.c[:, None] - np.outer(params.c_bar, ratio))
    bt, ct = rp / ratio, rd / ratio
    norms = np.sqrt(np.sum(bt ** 2, axis=0) + np.sum(ct ** 2, axis=0))
    values = semi.batch(bt, ct)
    good = (norms <= params.C_N) & (values <= params.gamma_A * params.rho_start)
    if not good.any():
        return None
    j = int(np.argmax(good))
    return int(idx[j]), bt[:, j], ct[:, j], float(values[j])


def newton_system(state: TheoryState, params: TheoryParams, qp: StandardQP, sigma: float):
    """Dense matrix and right-hand side of the perturbed Newton system."""
    semi = _semi(params, qp)
    A, Q = semi.A, semi.Q
    m, n = A.shape
    x, y, z = state.x, state.y, state.z
    mu = state.mu
    smu = sigma * mu
    K = semi.newton_base.copy()
    i, j = np.arange(n), np.arange(n, n + m)
    K[i, i] -= mu
    K[j, j] = mu
    K[n + m + i, i] = z
    K[n + m + i, n + m + i] = x
    rhs = -np.concatenate([
        -(qp.c + smu / params.mu0 * params.c_bar) - Q @ x + A.T @ y + z - smu * (x - state.zeta),
        A @ x + smu * (y - state.lam) - (qp.b + smu / params.mu0 * params.b_bar),
        x * z - smu,
    ])
    return K, rhs


@dataclasses.dataclass
class TraceEntry:
    k: int
    mu_prev: float
    mu: float
    alpha: float
    sigma: float
    report: NeighborhoodReport
    estimate_updated: bool
    newton_residual: float

    def row(self) -> dict:
        r = self.report
        return {
            "k": self.k,
            "mu": self.mu,
            "alpha": self.alpha,
            "sigma": self.sigma,
            "b_tilde_norm": float(_norm(r.b_tilde)),
            "c_tilde_norm": float(_norm(r.c_tilde)),
            "semi_norm": r.semi,
            "min_ratio": r.min_ratio,
            "positive": r.positive,
            "norm_ok": r.norm_ok,
            "semi_ok": r.semi_ok,
            "centrality_ok": r.centrality_ok,
            "member": r.member,
            "estimate_updated": self.estimate_updated,
            "newton_residual": self.newton_residual,
        }


def theory_step(state: TheoryState, params: TheoryParams, qp: StandardQP,
                sigma: float | None = None) -> tuple[TheoryState, TraceEntry]:
    """One iteration: Newton direction, backtracking step, estimate update."""
    sigma = params.clamp_sigma(params.sigma if sigma is None else sigma)
    K, rhs = newton_system(state, params, qp, sigma)
    d = np.linalg.solve(K, rhs)
    res = float(_norm(K @ d - rhs) / (1 + _norm(rhs)))
    n, m = qp.n, qp.m
    dx, dy, dz = d[:n], d[n:n + m], d[n + m:]
    mu = state.mu

    semi = _semi(params, qp)
    found = _first_admissible(state, dx, dy, dz, params, qp, semi)
    if found is None:
        raise StepFailure(f"no admissible step at iteration {state.k} (mu={mu:.3e})")
    j, bt, ct, value = found
    alpha = float(ALPHA_GRID[j])
    x, y, z = state.x + alpha * dx, state.y + alpha * dy, state.z + alpha * dz
    mu_a = float(x @ z / n)
    cand = TheoryState(x=x, y=y, z=z, lam=state.lam, zeta=state.zeta, k=state.k + 1)
    report = _report(x, z, mu_a, bt, ct, value, params)

    ratio = mu_a / params.mu0
    rp = semi.A @ x - qp.b - ratio * params.b_bar
    rd = qp.c + ratio * params.c_bar + semi.Q @ x - semi.A.T @ y - z
    update = (
        math.hypot(_norm(rp), _norm(rd)) <= params.C_N * ratio
        and semi(rp, rd) <= params.gamma_A * params.rho_start * ratio
    )
    if update:
        cand.zeta, cand.lam = cand.x.copy(), cand.y.copy()
    entry = TraceEntry(
        k=cand.k, mu_prev=mu, mu=mu_a, alpha=alpha, sigma=sigma, report=report,
        estimate_updated=bool(update), newton_residual=res,
    )
    return cand, entry


@dataclasses.dataclass
class TheoryTrace:
    params: TheoryParams
    start: NeighborhoodReport
    entries: list[TraceEntry]
    state: TheoryState
    converged: bool
    message: str = ""

    def rows(self) -> list[dict]:
        return [e.row() for e in self.entries]

    def to_csv(self, path):
        rows = self.rows()
        fields = list(rows[0]) if rows else ["k"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            w.writerows(rows)


def iteration_cap(n: int, tol: float) -> int:
    return int(math.ceil(10 * n ** 4 * abs(math.log(tol))))


def _converged(state: TheoryState, qp: StandardQP, semi: SemiNorm, tol: float) -> bool:
    rp = qp.b - semi.A @ state.x
    rd = qp.c - semi.A.T @ state.y + semi.Q @ state.x - state.z
    return _norm(rp) < tol and _norm(rd) < tol and state.mu < tol


def theory_solve(qp: StandardQP, params: TheoryParams | None = None, tol: float = 1e-6,
                 state: TheoryState | None = None, max_iter: int | None = None) -> TheoryTrace:
    if params is None or state is None:
        start_state, start_params = theory_starting_point(
            qp, None if params is None else params.rho_start
        )
        state = state or start_state
        params = params or start_params
    cap = iteration_cap(qp.n, tol) if max_iter is None else max_iter
    start = neighborhood_check(state, params, qp)
    entries: list[TraceEntry] = []
    semi = _semi(params, qp)
    while not _converged(state, qp, semi, tol):
        if state.k >= cap:
            return TheoryTrace(params, start, entries, state, False,
                               f"iteration cap {cap} reached")
        try:
            state, entry = theory_step(state, params, qp)
        except StepFailure as err:
            return TheoryTrace(params, start, entries, state, False, str(err))
        entries.append(entry)
    return TheoryTrace(params, start, entries, state, True)


def solve_as_result(qp: StandardQP, tol: float = 1e-6):
    """Run theory mode and package the outcome like the practical solver."""
    from .solver import SolveResult, Status

    trace = theory_solve(qp, tol=tol)
    s = trace.state
    rp, rd = qp.residuals(s.x, s.y, s.z)
    return SolveResult(
        status=Status.OPTIMAL if trace.converged else Status.NO_CONVERGENCE,
        x=s.x,
        y=s.y,
        z=s.z,
        objective=qp.objective(s.x),
        primal_residual=float(_norm(rp) / max(_norm(qp.b), 1.0)),
        dual_residual=float(_norm(rd) / max(_norm(qp.c), 1.0)),
        mu=s.mu,
        iterations=s.k,
        log=trace.rows(),
        message=trace.message,
    )

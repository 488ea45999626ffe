"""Regularized augmented systems and their LDL^T factorization.

The augmented matrix is

    K = [ -(Q + Theta^{-1} + rho I)   A^T     ]
        [            A               delta I  ]

with ``Theta^{-1} = Z/X`` on nonnegative variables and zero on free ones.
With rho, delta > 0 it is quasi-definite, so an LDL^T factorization with
1x1 pivots exists for every symmetric ordering and has exactly n negative
and m positive pivots.  Only diagonal pivots are used here.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import spsolve_triangular

from .problem import StandardQP

__all__ = [
    "AugmentedSystem",
    "DomainError",
    "FactorError",
    "KKTFactorization",
    "assemble",
    "factorize",
    "pcg_normal",
    "relative_residual",
    "solve_factored",
]

DENSE_LIMIT = 500
ZERO_PIVOT = 1e-30
# pivot test used when no threshold is supplied: a pivot that cancels to
# this fraction of the magnitudes that formed it is treated as zero
CANCELLATION_TOL = 1e-13
SOLVE_TOL = 1e-8
REFINE_STEPS = 3
# fraction of rho (primal) or delta (dual) below which a pivot is rejected
PIVOT_FLOOR = 0.5

try:  # the sparse kernel is plain Python; numba only speeds it up
    from numba import njit as _njit

    _jit = _njit(cache=True)
except ImportError:  # pragma: no cover
    def _jit(f):
        return f


class DomainError(ValueError):
    """Nonpositive x or z entry on a nonnegative variable."""


class FactorError(RuntimeError):
    """LDL^T breakdown.

    ``kind`` is ``"singular"`` when a zero or tiny pivot shows up without
    regularization and ``"instability"`` when it shows up with rho, delta > 0
    (the caller is expected to raise the regularization and retry).
    """

    def __init__(self, kind: str, pivot: int, value: float):
        self.kind = kind
        self.pivot = pivot
        self.value = value
        super().__init__(f"{kind}: pivot {pivot} = {value:.3e}")


@dataclasses.dataclass(frozen=True)
class AugmentedSystem:
    K: sp.csc_matrix
    n: int
    m: int
    rho: float
    delta: float
    theta_inv: np.ndarray

    @property
    def quasi_definite(self) -> bool:
        return self.rho > 0 and self.delta > 0


@dataclasses.dataclass(frozen=True)
class KKTFactorization:
    """``K[perm][:, perm] = L @ diag(d) @ L.T`` with unit lower triangular L."""

    perm: np.ndarray
    L: np.ndarray | sp.csc_matrix
    d: np.ndarray
    inertia: tuple[int, int, int]  # (positive, negative, zero)
    system: AugmentedSystem

    @property
    def dense(self) -> bool:
        return isinstance(self.L, np.ndarray)

    def reconstruct(self) -> np.ndarray:
        L = self.L if self.dense else self.L.toarray()
        Kp = (L * self.d) @ L.T
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        return Kp[np.ix_(inv, inv)]


def assemble(qp: StandardQP, x, z, rho: float, delta: float) -> AugmentedSystem:
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if rho < 0 or delta < 0:
        raise ValueError("regularization must be nonnegative")
    idx = qp.nonneg
    if np.any(x[idx] <= 0) or np.any(z[idx] <= 0):
        raise DomainError("x and z must be positive on nonnegative variables")
    theta_inv = np.zeros(qp.n)
    with np.errstate(over="ignore", divide="ignore"):
        theta_inv[idx] = z[idx] / x[idx]
    H = qp.Q + sp.diags(theta_inv + rho)
    if qp.m:
        K = sp.bmat([[-H, qp.A.T], [qp.A, delta * sp.eye(qp.m)]], format="csc")
    else:
        K = sp.csc_matrix(-H)
    K.sum_duplicates()
    return AugmentedSystem(K, qp.n, qp.m, float(rho), float(delta), theta_inv)


def _ordering(sys: AugmentedSystem) -> np.ndarray:
    """Primal pivots first, each block in reverse Cuthill-McKee order.

    Eliminating a dual pivot of size delta before its primal neighbours
    produces multipliers of order 1/delta; without regularization the dual
    diagonal is zero and the primal pivots must come first anyway.
    """
    K = sys.K
    pattern = sp.csr_matrix((np.ones(K.nnz), K.indices, K.indptr), shape=K.shape)
    n = sys.n
    return np.concatenate([_rcm(pattern[:n, :n]), _rcm(pattern[n:, n:]) + n]).astype(np.int64)


def _rcm(block) -> np.ndarray:
    if block.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return reverse_cuthill_mckee(sp.csr_matrix(block), symmetric_mode=True)


class _PivotCheck:
    def __init__(self, sys: AugmentedSystem, perm: np.ndarray, threshold: float | None):
        self.sys = sys
        self.threshold = threshold
        # expected sign of each permuted pivot for a quasi-definite matrix
        self.expect = np.where(perm < sys.n, -1.0, 1.0)
        # in exact arithmetic primal pivots are at least rho and dual pivots
        # at least delta in magnitude; far below that means cancellation
        self.floor = np.where(perm < sys.n, sys.rho, sys.delta) * PIVOT_FLOOR

    def __call__(self, j: int, dj: float, scale: float):
        sys = self.sys
        kind = "instability" if sys.quasi_definite else "singular"
        if self.threshold is not None:
            tiny = abs(dj) < self.threshold
        else:
            tiny = abs(dj) <= CANCELLATION_TOL * scale or abs(dj) <= ZERO_PIVOT
        if tiny or not np.isfinite(dj):
            raise FactorError(kind, j, dj)
        if sys.quasi_definite and (dj * self.expect[j] <= 0 or abs(dj) < self.floor[j]):
            raise FactorError("instability", j, dj)


def _ldl_dense(Kp: np.ndarray, check: _PivotCheck):
    N = Kp.shape[0]
    L = np.eye(N)
    d = np.zeros(N)
    for j in range(N):
        lj = L[j, :j]
        v = lj * d[:j]
        dj = Kp[j, j] - lj @ v
        scale = abs(Kp[j, j]) + np.abs(lj * v).sum()
        check(j, dj, scale)
        d[j] = dj
        if j + 1 < N:
            L[j + 1:, j] = (Kp[j + 1:, j] - L[j + 1:, :j] @ v) / dj
    return L, d


@_jit
def _etree(N, Ap, Ai):
    etree = np.full(N, -1, dtype=np.int64)
    lnz = np.zeros(N, dtype=np.int64)
    work = np.full(N, -1, dtype=np.int64)
    for j in range(N):
        work[j] = j
        for p in range(Ap[j], Ap[j + 1]):
            i = Ai[p]
            while i != j and work[i] != j:
                if etree[i] == -1:
                    etree[i] = j
                lnz[i] += 1
                work[i] = j
                i = etree[i]
    return etree, lnz


@_jit
def _ldl_numeric(N, Ap, Ai, Ax, etree, Lp, expect, floor, threshold, quasi):
    """Up-looking LDL^T.  Returns (Li, Lx, d, bad) with bad = -1 on success
    or the index of the first rejected pivot."""
    Li = np.zeros(Lp[N], dtype=np.int64)
    Lx = np.zeros(Lp[N])
    nxt = Lp[:N].copy()
    d = np.zeros(N)
    dinv = np.zeros(N)
    y = np.zeros(N)
    marked = np.zeros(N, dtype=np.bool_)
    reach = np.zeros(N, dtype=np.int64)
    stack = np.zeros(N, dtype=np.int64)
    for k in range(N):
        nreach = 0
        dk = 0.0
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            if i == k:
                dk = Ax[p]
                continue
            y[i] = Ax[p]
            ns = 0
            while i != -1 and i < k and not marked[i]:
                marked[i] = True
                stack[ns] = i
                ns += 1
                i = etree[i]
            while ns > 0:
                ns -= 1
                reach[nreach] = stack[ns]
                nreach += 1
        scale = abs(dk)
        for t in range(nreach - 1, -1, -1):
            c = reach[t]
            yc = y[c]
            for p in range(Lp[c], nxt[c]):
                y[Li[p]] -= Lx[p] * yc
            lkc = yc * dinv[c]
            Li[nxt[c]] = k
            Lx[nxt[c]] = lkc
            nxt[c] += 1
            dk -= yc * lkc
            scale += abs(yc * lkc)
            y[c] = 0.0
            marked[c] = False
        d[k] = dk
        if threshold >= 0.0:
            tiny = abs(dk) < threshold
        else:
            tiny = abs(dk) <= CANCELLATION_TOL * scale or abs(dk) <= ZERO_PIVOT
        if tiny or not np.isfinite(dk) or (quasi and (dk * expect[k] <= 0.0 or abs(dk) < floor[k])):
            return Li, Lx, d, k
        dinv[k] = 1.0 / dk
    return Li, Lx, d, -1


def _ldl_sparse(Kp: sp.csc_matrix, check: _PivotCheck):
    """Sparse LDL^T driven by the elimination tree of the upper triangle."""
    N = Kp.shape[0]
    U = sp.triu(Kp, format="csc")
    U.sort_indices()
    Ap = U.indptr.astype(np.int64)
    Ai = U.indices.astype(np.int64)
    Ax = U.data.astype(float)
    etree, lnz = _etree(N, Ap, Ai)
    Lp = np.zeros(N + 1, dtype=np.int64)
    np.cumsum(lnz, out=Lp[1:])
    threshold = -1.0 if check.threshold is None else float(check.threshold)
    Li, Lx, d, bad = _ldl_numeric(N, Ap, Ai, Ax, etree, Lp, check.expect, check.floor, threshold,
                                  check.sys.quasi_definite)
    if bad >= 0:
        # re-raise through the shared pivot rule for a uniform error
        check(int(bad), float(d[bad]), np.inf if threshold < 0 else 0.0)
        raise FactorError("instability", int(bad), float(d[bad]))
    L = sp.csc_matrix((Lx, Li, Lp), shape=(N, N)) + sp.eye(N, format="csc")
    L = sp.csc_matrix(L)
    L.sort_indices()
    return L, d


def factorize(sys: AugmentedSystem, pivot_threshold: float | None = None,
              dense_limit: int = DENSE_LIMIT) -> KKTFactorization:
    """LDL^T of the augmented matrix with 1x1 pivots only.

    With ``pivot_threshold`` set, any pivot smaller in magnitude is a
    breakdown; otherwise a pivot is rejected when it cancels to a negligible
    fraction of the terms it was formed from.  Small systems
    (``n + m <= dense_limit``) use a dense factorization in natural order,
    larger ones a sparse factorization in blockwise reverse Cuthill-McKee
    order.
    """
    N = sys.n + sys.m
    if N <= dense_limit:
        perm = np.arange(N, dtype=np.int64)
        check = _PivotCheck(sys, perm, pivot_threshold)
        L, d = _ldl_dense(sys.K.toarray(), check)
    else:
        perm = _ordering(sys)
        check = _PivotCheck(sys, perm, pivot_threshold)
        Kp = sp.csc_matrix(sys.K[perm][:, perm])
        L, d = _ldl_sparse(Kp, check)
    inertia = (
        int(np.sum(d > ZERO_PIVOT)),
        int(np.sum(d < -ZERO_PIVOT)),
        int(np.sum(np.abs(d) <= ZERO_PIVOT)),
    )
    return KKTFactorization(perm, L, d, inertia, sys)


def _backsolve(f: KKTFactorization, rhs: np.ndarray) -> np.ndarray:
    w = rhs[f.perm]
    if f.dense:
        w = scipy.linalg.solve_triangular(f.L, w, lower=True, unit_diagonal=True, check_finite=False)
        w = w / f.d
        w = scipy.linalg.solve_triangular(f.L, w, lower=True, trans="T", unit_diagonal=True,
                                          check_finite=False)
    else:
        w = spsolve_triangular(sp.csr_matrix(f.L), w, lower=True, unit_diagonal=True)
        w = w / f.d
        w = spsolve_triangular(sp.csr_matrix(f.L.T), w, lower=False, unit_diagonal=True)
    u = np.empty_like(w)
    u[f.perm] = w
    return u


def relative_residual(K, u, rhs) -> float:
    """``||K u - rhs|| / (1 + ||rhs||)``."""
    return float(np.linalg.norm(K @ u - rhs) / (1.0 + np.linalg.norm(rhs)))


def solve_factored(f: KKTFactorization, rhs, tol: float = SOLVE_TOL,
                   refine: int = REFINE_STEPS) -> np.ndarray:
    """Solve ``K u = rhs``; up to ``refine`` refinement steps when the
    relative residual exceeds ``tol``."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (f.system.n + f.system.m,):
        raise ValueError(f"rhs has shape {rhs.shape}, expected ({f.system.n + f.system.m},)")
    K = f.system.K
    u = _backsolve(f, rhs)
    for _ in range(refine):
        r = rhs - K @ u
        if np.linalg.norm(r) <= tol * (1.0 + np.linalg.norm(rhs)):
            break
        u = u + _backsolve(f, r)
    return u


def pcg_normal(A, delta: float, rhs, tol: float = 1e-8, maxit: int | None = None):
    """Jacobi-preconditioned CG on ``(A A^T + delta I) w = rhs``.

    ``A A^T`` is never formed.  Returns ``(w, iterations, converged)``; on
    hitting ``maxit`` (default ``2 m + 10``) the last iterate is returned
    with ``converged=False``.
    """
    A = sp.csr_matrix(A)
    rhs = np.asarray(rhs, dtype=float)
    m = A.shape[0]
    if maxit is None:
        maxit = 2 * m + 10
    w = np.zeros(m)
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return w, 0, True
    AT = A.T.tocsr()
    minv = 1.0 / (np.asarray(A.multiply(A).sum(axis=1)).ravel() + delta)
    r = rhs.copy()
    s = minv * r
    p = s.copy()
    rs = r @ s
    for it in range(1, maxit + 1):
        Ap = A @ (AT @ p) + delta * p
        alpha = rs / (p @ Ap)
        w += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * bnorm:
            return w, it, True
        s = minv * r
        rs_new = r @ s
        p = s + (rs_new / rs) * p
        rs = rs_new
    return w, maxit, False

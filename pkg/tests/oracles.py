"""Independent reference computations used by the tests.

Nothing here calls into the solver, the standardization code or the
factorization; only the parsed file data is shared.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def inequality_form(raw):
    """``min c0 @ x + 0.5 x @ Q0 @ x`` s.t. ``E x = e``, ``G x <= h`` for
    the problem as written in the file (minimization sense)."""
    sign = -1.0 if raw.sense == "max" else 1.0
    A = raw.constraint_matrix().toarray()
    Q0 = sign * raw.quadratic_matrix().toarray()
    c0 = sign * np.asarray(raw.objective, dtype=float)
    E, e, G, h = [], [], [], []
    for i in range(raw.m):
        lo, hi = raw.row_bounds(i)
        if lo == hi:
            E.append(A[i])
            e.append(lo)
            continue
        if math.isfinite(hi):
            G.append(A[i])
            h.append(hi)
        if math.isfinite(lo):
            G.append(-A[i])
            h.append(-lo)
    eye = np.eye(raw.n)
    for j in range(raw.n):
        lo, hi = raw.lower[j], raw.upper[j]
        if lo == hi:
            E.append(eye[j])
            e.append(lo)
            continue
        if math.isfinite(hi):
            G.append(eye[j])
            h.append(hi)
        if math.isfinite(lo):
            G.append(-eye[j])
            h.append(-lo)
    n = raw.n
    as_mat = lambda rows: np.array(rows).reshape(-1, n)
    return c0, Q0, as_mat(E), np.array(e), as_mat(G), np.array(h), sign


def active_set_optimum(raw, feas_tol=1e-9):
    """Brute-force optimum by enumerating active inequality sets.

    For each candidate set the inequalities in it are imposed as
    equalities and the stationarity system of that face is solved.  Every
    consistent, feasible solution is a feasible point, and the optimum is a
    stationary point of the face whose relative interior contains it, so
    the smallest objective found is the optimal value.  Returns
    ``(objective in the file's sense, x)`` or ``(None, None)``.
    """
    c0, Q0, E, e, G, h, sign = inequality_form(raw)
    n = raw.n
    best, best_x = math.inf, None
    for k in range(0, min(n, G.shape[0]) + 1):
        for S in itertools.combinations(range(G.shape[0]), k):
            C = np.vstack([E, G[list(S)]])
            d = np.concatenate([e, h[list(S)]])
            p = C.shape[0]
            K = np.block([[Q0, C.T], [C, np.zeros((p, p))]])
            rhs = np.concatenate([-c0, d])
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            if np.linalg.norm(K @ sol - rhs) > 1e-9 * (1 + np.linalg.norm(rhs)):
                continue
            x = sol[:n]
            if G.size and np.any(G @ x > h + feas_tol * (1 + np.abs(h))):
                continue
            val = c0 @ x + 0.5 * x @ Q0 @ x
            if val < best - 1e-12 * (1 + abs(best) if math.isfinite(best) else 0):
                best, best_x = val, x
    if best_x is None:
        return None, None
    return raw.evaluate(best_x), best_x


def min_norm_semi(A, Q, b, c):
    """``min ||(x, z)||`` s.t. ``A x = b``, ``-Q x + A^T y + z = c`` from the
    KKT system of ``0.5 ||x||^2 + 0.5 ||z||^2`` over ``(x, y, z)``."""
    m, n = A.shape
    N = 2 * n + m
    H = np.zeros((N, N))
    H[:n, :n] = np.eye(n)
    H[n + m:, n + m:] = np.eye(n)
    C = np.zeros((m + n, N))
    C[:m, :n] = A
    C[m:, :n] = -Q
    C[m:, n:n + m] = A.T
    C[m:, n + m:] = np.eye(n)
    K = np.block([[H, C.T], [C, np.zeros((m + n, m + n))]])
    rhs = np.concatenate([np.zeros(N), b, c])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    if np.linalg.norm(K @ sol - rhs) > 1e-8 * (1 + np.linalg.norm(rhs)):
        return math.inf
    return float(math.hypot(np.linalg.norm(sol[:n]), np.linalg.norm(sol[n + m:N])))


def eig_inertia(K, tol=1e-12):
    w = np.linalg.eigvalsh(np.asarray(K))
    scale = max(1.0, np.abs(w).max())
    return (int(np.sum(w > tol * scale)), int(np.sum(w < -tol * scale)),
            int(np.sum(np.abs(w) <= tol * scale)))


def random_feasible_qp(rng, n, m, q_scale=0.1, diag=1e-3):
    """Dense data of a QP with a strictly feasible primal-dual pair built in:
    ``Q = M^T M * q_scale + diag I``."""
    A = rng.standard_normal((m, n))
    x = rng.random(n) + 0.1
    z = rng.random(n) + 0.1
    y = rng.standard_normal(m)
    M = rng.standard_normal((n, n))
    Q = q_scale * M.T @ M + diag * np.eye(n)
    return A, A @ x, A.T @ y + z - Q @ x, Q

"""Standard-form QP data, conversion from raw MPS data, and row scaling.

The solver works on

    min  c @ x + 0.5 * x @ Q @ x   s.t.  A @ x = b,  x[I] >= 0,  x[F] free.

``to_standard_form`` rewrites a :class:`~ippmm.mps.RawProblem` into that
shape: finite lower bounds are shifted to zero, upper-only variables are
reflected, doubly bounded variables get an extra row ``s + t = u - l``,
fixed variables are substituted out, inequality rows receive slacks and
ranged rows are split in two.
"""

from __future__ import annotations

import dataclasses
import logging
import math

import numpy as np
import scipy.sparse as sp

from .mps import RawProblem

__all__ = [
    "ModelError",
    "RowScaling",
    "StandardQP",
    "VarMap",
    "scale_rows",
    "standardization_report",
    "to_standard_form",
]

log = logging.getLogger(__name__)


class ModelError(ValueError):
    """The raw problem cannot be put in standard form (e.g. lower > upper)."""


@dataclasses.dataclass(frozen=True)
class StandardQP:
    A: sp.csc_matrix
    Q: sp.csc_matrix
    b: np.ndarray
    c: np.ndarray
    free: np.ndarray  # sorted indices of free variables
    name: str = ""

    def __post_init__(self):
        A = sp.csc_matrix(self.A, dtype=float)
        A.eliminate_zeros()
        Q = sp.csc_matrix(self.Q, dtype=float)
        Q.eliminate_zeros()
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).ravel())
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).ravel())
        free = np.unique(np.asarray(self.free, dtype=np.int64))
        object.__setattr__(self, "free", free)
        m, n = A.shape
        if Q.shape != (n, n) or self.b.shape != (m,) or self.c.shape != (n,):
            raise ValueError(
                f"inconsistent dimensions: A {A.shape}, Q {Q.shape}, "
                f"b {self.b.shape}, c {self.c.shape}"
            )
        if free.size and (free[0] < 0 or free[-1] >= n):
            raise ValueError("free index out of range")

    @classmethod
    def from_dense(cls, A, b, c, Q=None, free=(), name=""):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[1]
        Q = np.zeros((n, n)) if Q is None else np.asarray(Q, dtype=float)
        return cls(sp.csc_matrix(A), sp.csc_matrix(Q), b, c, np.asarray(free, dtype=np.int64), name)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def nonneg(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.free] = False
        return np.flatnonzero(mask)

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x + 0.5 * x @ (self.Q @ x))

    def residuals(self, x, y, z) -> tuple[np.ndarray, np.ndarray]:
        """Primal ``b - A x`` and dual ``c - A^T y + Q x - z`` residuals."""
        return self.b - self.A @ x, self.c - self.A.T @ y + self.Q @ x - z


@dataclasses.dataclass(frozen=True)
class VarMap:
    """Recovers original variables from standard-form ones.

    ``x_orig = offset + transform @ x_std[:n_struct]``; ``transform`` has a
    single +1/-1 per non-fixed original variable.  ``row_slack[i]`` lists the
    slack columns of original row ``i`` (none for equalities, two for ranged
    rows).  ``constant`` is the objective constant of the minimisation form and
    ``sense`` is -1 for maximisation problems.
    """

    offset: np.ndarray
    transform: sp.csr_matrix
    n_struct: int
    row_slack: tuple[tuple[int, ...], ...]
    bound_slack: dict[int, int]
    constant: float
    sense: int
    n_bound_rows: int

    def original_x(self, x_std: np.ndarray) -> np.ndarray:
        return self.offset + self.transform @ np.asarray(x_std)[: self.n_struct]

    def original_objective(self, std_objective: float) -> float:
        return self.sense * (std_objective + self.constant)


def to_standard_form(p: RawProblem) -> tuple[StandardQP, VarMap]:
    n0 = p.n
    lower = np.asarray(p.lower, dtype=float)
    upper = np.asarray(p.upper, dtype=float)
    bad = np.flatnonzero(lower > upper)
    if bad.size:
        j = bad[0]
        raise ModelError(
            f"variable {p.col_names[j]!r} has lower bound {lower[j]} > upper bound {upper[j]}"
        )

    sign = -1 if p.sense == "max" else 1
    c0 = sign * np.asarray(p.objective, dtype=float)
    Q0 = sign * p.quadratic_matrix()
    const0 = sign * p.objective_constant
    A0 = p.constraint_matrix()

    # affine substitution x = offset + T s for the structural variables
    offset = np.zeros(n0)
    cols: list[int] = []
    signs: list[float] = []
    free: list[int] = []
    double_bounded: list[tuple[int, float]] = []  # (std column, u - l)
    for j in range(n0):
        lo, hi = lower[j], upper[j]
        if lo == hi:
            offset[j] = lo
            continue
        k = len(cols)
        cols.append(j)
        if math.isfinite(lo):
            offset[j] = lo
            signs.append(1.0)
            if math.isfinite(hi):
                double_bounded.append((k, hi - lo))
        elif math.isfinite(hi):
            offset[j] = hi
            signs.append(-1.0)
        else:
            signs.append(1.0)
            free.append(k)
    n_struct = len(cols)
    T = sp.csr_matrix(
        (signs, (cols, np.arange(n_struct))), shape=(n0, n_struct)
    )
    c_s = T.T @ (c0 + Q0 @ offset)
    Q_s = sp.csr_matrix(T.T @ Q0 @ T)
    const = float(c0 @ offset + 0.5 * offset @ (Q0 @ offset) + const0)
    A_s_csr = sp.csr_matrix(A0 @ T)
    shift = A0 @ offset

    # constraint rows: equalities keep their row, inequalities get a slack,
    # ranged rows become a >= row plus a <= row
    row_specs: list[tuple[int, str, float]] = []  # (orig row, relation, rhs)
    for i, rel in enumerate(p.relations):
        lo, hi = p.row_bounds(i)
        if lo == hi:
            row_specs.append((i, "=", lo))
        elif i in p.ranges:
            row_specs.append((i, ">=", lo))
            row_specs.append((i, "<=", hi))
        elif rel == "<=":
            row_specs.append((i, "<=", hi))
        else:
            row_specs.append((i, ">=", lo))

    n_slack = sum(1 for _, rel, _ in row_specs if rel != "=")
    n_bound = len(double_bounded)
    m = len(row_specs) + n_bound
    n = n_struct + n_slack + n_bound
    rows, colidx, vals = [], [], []
    b = np.zeros(m)
    row_slack: list[list[int]] = [[] for _ in range(p.m)]
    next_col = n_struct
    for r, (i, rel, rhs) in enumerate(row_specs):
        start, end = A_s_csr.indptr[i], A_s_csr.indptr[i + 1]
        rows.extend([r] * (end - start))
        colidx.extend(A_s_csr.indices[start:end])
        vals.extend(A_s_csr.data[start:end])
        b[r] = rhs - shift[i]
        if rel != "=":
            rows.append(r)
            colidx.append(next_col)
            vals.append(1.0 if rel == "<=" else -1.0)
            row_slack[i].append(next_col)
            next_col += 1
    bound_slack = {}
    for t, (k, width) in enumerate(double_bounded):
        r = len(row_specs) + t
        rows += [r, r]
        colidx += [k, next_col]
        vals += [1.0, 1.0]
        b[r] = width
        bound_slack[cols[k]] = next_col
        next_col += 1
    A = sp.csc_matrix((vals, (rows, colidx)), shape=(m, n))
    c = np.zeros(n)
    c[:n_struct] = c_s
    Q = sp.block_diag([Q_s, sp.csr_matrix((n - n_struct, n - n_struct))], format="csc")
    qp = StandardQP(A, Q, b, c, np.asarray(free, dtype=np.int64), p.name)

    zero_rows = np.flatnonzero(np.diff(sp.csr_matrix(qp.A).indptr) == 0)
    if zero_rows.size:
        log.warning("%s: %d empty constraint row(s)", p.name or "problem", zero_rows.size)

    vmap = VarMap(
        offset=offset,
        transform=T,
        n_struct=n_struct,
        row_slack=tuple(tuple(s) for s in row_slack),
        bound_slack=bound_slack,
        constant=const,
        sense=sign,
        n_bound_rows=n_bound,
    )
    return qp, vmap


def standardization_report(p: RawProblem, qp: StandardQP, vmap: VarMap) -> str:
    n_fixed = int(np.sum(p.lower == p.upper))
    n_shift = int(np.count_nonzero(vmap.offset)) - n_fixed
    lines = [
        f"problem: {p.name or '-'}",
        f"original: rows={p.m} cols={p.n} sense={p.sense}",
        f"standard: rows={qp.m} cols={qp.n} free={qp.free.size}",
        f"slack columns: {sum(len(s) for s in vmap.row_slack)}",
        f"bound rows added: {vmap.n_bound_rows}",
        f"fixed variables removed: {n_fixed}",
        f"shifted variables: {n_shift}",
        f"objective constant: {vmap.constant:.17g}",
    ]
    return "\n".join(lines)


@dataclasses.dataclass(frozen=True)
class RowScaling:
    d: np.ndarray

    @property
    def exponents(self) -> np.ndarray:
        return np.array([math.frexp(v)[1] - 1 for v in self.d], dtype=np.int64)

    @property
    def is_identity(self) -> bool:
        return bool(np.all(self.d == 1.0))


def _pow2_floor(v: float) -> float:
    """Largest power of two not exceeding ``v`` (v > 0)."""
    mant, exp = math.frexp(v)
    return math.ldexp(1.0, exp - 1)


def scale_rows(A, b) -> tuple[sp.csc_matrix, np.ndarray, RowScaling]:
    """Geometric row scaling with power-of-two factors.

    Nothing is done when every nonzero magnitude of A lies in (0.1, 10).
    Otherwise row i is multiplied by the largest power of two not above
    ``1 / sqrt(max|A_i| * min_nonzero|A_i|)``.  Empty rows keep factor 1.
    """
    A = sp.csr_matrix(A, dtype=float)
    A.eliminate_zeros()
    b = np.asarray(b, dtype=float)
    m = A.shape[0]
    d = np.ones(m)
    mags = np.abs(A.data)
    if mags.size == 0 or (mags.max() < 10.0 and mags.min() > 0.1):
        return sp.csc_matrix(A), b.copy(), RowScaling(d)
    for i in range(m):
        row = mags[A.indptr[i]: A.indptr[i + 1]]
        if row.size:
            d[i] = _pow2_floor(1.0 / math.sqrt(row.max() * row.min()))
    A_scaled = sp.diags(d) @ A
    return sp.csc_matrix(A_scaled), b * d, RowScaling(d)

"""Reader for MPS / QPS problem files.

Both free format (whitespace separated) and fixed format (column positions)
are understood.  Quadratic objective terms may be given in a ``QUADOBJ``
section (one triangle, symmetric counterpart implied) or a ``QMATRIX`` /
``QSECTION`` section (every entry listed).  Integer markers are ignored.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = ["ParseError", "RawProblem", "parse_qps", "read_qps"]

_RELATIONS = {"E": "=", "L": "<=", "G": ">="}
_SECTIONS = {
    "NAME", "OBJSENSE", "ROWS", "COLUMNS", "RHS", "RANGES",
    "BOUNDS", "QUADOBJ", "QMATRIX", "QSECTION", "ENDATA",
}
_NO_VALUE_BOUNDS = {"FR", "MI", "PL", "BV"}
_VALUE_BOUNDS = {"UP", "LO", "FX", "LI", "UI"}


class ParseError(ValueError):
    """Malformed problem text.  ``lineno`` is 1-based (0 when not tied to a line)."""

    def __init__(self, message: str, lineno: int = 0):
        self.lineno = lineno
        prefix = f"line {lineno}: " if lineno else ""
        super().__init__(prefix + message)


@dataclasses.dataclass
class RawProblem:
    """Problem data exactly as stated in the file.

    The objective is ``c @ x + 0.5 * x @ Q @ x + objective_constant`` where Q
    is assembled from ``quad_entries`` (row, col, value); when
    ``quad_symmetric`` is true each off-diagonal entry stands for both
    triangles.  Rows carry relation ``'='``, ``'<='`` or ``'>='``.
    """

    name: str
    sense: str  # "min" or "max"
    row_names: list[str]
    relations: list[str]
    col_names: list[str]
    entries: list[tuple[int, int, float]]
    objective: np.ndarray
    rhs: np.ndarray
    ranges: dict[int, float]
    lower: np.ndarray
    upper: np.ndarray
    quad_entries: list[tuple[int, int, float]]
    quad_symmetric: bool = True
    objective_constant: float = 0.0
    bound_records: list[tuple[str, int, float]] = dataclasses.field(default_factory=list)
    warnings: list[str] = dataclasses.field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.row_names)

    @property
    def n(self) -> int:
        return len(self.col_names)

    def constraint_matrix(self) -> sp.csr_matrix:
        if not self.entries:
            return sp.csr_matrix((self.m, self.n))
        i, j, v = zip(*self.entries)
        return sp.csr_matrix((v, (i, j)), shape=(self.m, self.n))

    def quadratic_matrix(self) -> sp.csr_matrix:
        """Symmetric Q (duplicates summed, then symmetrised)."""
        rows, cols, vals = [], [], []
        for i, j, v in self.quad_entries:
            rows.append(i)
            cols.append(j)
            vals.append(v)
            if self.quad_symmetric and i != j:
                rows.append(j)
                cols.append(i)
                vals.append(v)
        q = sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))
        return sp.csr_matrix(0.5 * (q + q.T))

    def evaluate(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(
            self.objective @ x
            + 0.5 * x @ self.quadratic_matrix() @ x
            + self.objective_constant
        )

    def is_feasible(self, x: np.ndarray, tol: float = 1e-7) -> bool:
        x = np.asarray(x, dtype=float)
        if np.any(x < self.lower - tol) or np.any(x > self.upper + tol):
            return False
        ax = self.constraint_matrix() @ x
        for i, rel in enumerate(self.relations):
            lo, hi = self.row_bounds(i)
            scale = tol * max(1.0, abs(self.rhs[i]))
            if ax[i] < lo - scale or ax[i] > hi + scale:
                return False
        return True

    def row_bounds(self, i: int) -> tuple[float, float]:
        """Activity interval of row ``i`` after applying its range, if any."""
        rel, b = self.relations[i], self.rhs[i]
        r = self.ranges.get(i)
        if rel == "=":
            if r is None:
                return b, b
            return (b, b + abs(r)) if r >= 0 else (b - abs(r), b)
        if rel == "<=":
            return (-math.inf if r is None else b - abs(r)), b
        return b, (math.inf if r is None else b + abs(r))


def read_qps(path: str | Path, fixed: bool = False) -> RawProblem:
    return parse_qps(Path(path).read_text(), fixed=fixed)


def _fixed_fields(line: str) -> list[str]:
    cols = [(1, 3), (4, 12), (14, 22), (24, 36), (39, 47), (49, 61)]
    out = [line[a:b].strip() for a, b in cols]
    while out and not out[-1]:
        out.pop()
    # a blank name field in the middle is legal (e.g. unnamed RHS set)
    return out


def _number(tok: str, lineno: int) -> float:
    try:
        return float(tok.replace("D", "E").replace("d", "e"))
    except ValueError:
        raise ParseError(f"non-numeric field {tok!r}", lineno) from None


def parse_qps(text: str, fixed: bool = False) -> RawProblem:
    """Parse MPS/QPS text into a :class:`RawProblem`.

    Raises :class:`ParseError` naming the offending line for unknown
    sections, duplicate row or column names, references to undeclared names
    and non-numeric fields.
    """
    name = ""
    sense = "min"
    obj_row: str | None = None
    row_index: dict[str, int] = {}
    row_names: list[str] = []
    relations: list[str] = []
    col_index: dict[str, int] = {}
    col_names: list[str] = []
    entries: list[tuple[int, int, float]] = []
    obj: dict[int, float] = {}
    rhs: dict[int, float] = {}
    ranges: dict[int, float] = {}
    bound_records: list[tuple[str, int, float]] = []
    quad: list[tuple[int, int, float]] = []
    quad_symmetric = True
    obj_constant = 0.0
    warnings: list[str] = []
    free_rows: set[str] = set()

    section = None
    seen_end = False
    last_col: str | None = None

    def col_of(tok: str, lineno: int) -> int:
        try:
            return col_index[tok]
        except KeyError:
            raise ParseError(f"undeclared column {tok!r}", lineno) from None

    def row_of(tok: str, lineno: int) -> int | None:
        """Index of a constraint row, or None for the objective row."""
        if tok == obj_row:
            return None
        if tok in free_rows:
            return -1
        try:
            return row_index[tok]
        except KeyError:
            raise ParseError(f"undeclared row {tok!r}", lineno) from None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n\r")
        if not line.strip() or line.lstrip().startswith("*"):
            continue
        if not line[0].isspace():
            head = line.split()
            keyword = head[0].upper()
            if keyword not in _SECTIONS:
                raise ParseError(f"unknown section header {head[0]!r}", lineno)
            if seen_end:
                raise ParseError("data after ENDATA", lineno)
            section = keyword
            if keyword == "NAME":
                name = " ".join(head[1:])
            elif keyword == "OBJSENSE" and len(head) > 1:
                sense = _sense(head[1], lineno)
            elif keyword == "QMATRIX":
                quad_symmetric = False
            elif keyword == "ENDATA":
                seen_end = True
            elif keyword in ("RHS", "RANGES", "BOUNDS", "COLUMNS", "QUADOBJ",
                             "QMATRIX", "QSECTION") and len(head) > 1:
                raise ParseError(f"unexpected tokens after {keyword}", lineno)
            continue

        if section is None:
            raise ParseError("data line before any section header", lineno)
        toks = _fixed_fields(line) if fixed else line.split()
        if fixed and section in ("COLUMNS", "RHS", "RANGES") and toks and toks[0] == "":
            toks = toks[1:]

        if section == "OBJSENSE":
            sense = _sense(toks[0], lineno)
        elif section == "ROWS":
            if len(toks) != 2:
                raise ParseError("ROWS record needs a type and a name", lineno)
            kind, rname = toks[0].upper(), toks[1]
            if rname in row_index or rname == obj_row or rname in free_rows:
                raise ParseError(f"duplicate row {rname!r}", lineno)
            if kind == "N":
                if obj_row is None:
                    obj_row = rname
                else:
                    free_rows.add(rname)
                    warnings.append(f"extra free row {rname!r} dropped")
            elif kind in _RELATIONS:
                row_index[rname] = len(row_names)
                row_names.append(rname)
                relations.append(_RELATIONS[kind])
            else:
                raise ParseError(f"unknown row type {kind!r}", lineno)
        elif section == "COLUMNS":
            if len(toks) >= 3 and toks[1].strip("'\"").upper() == "MARKER":
                continue
            if len(toks) not in (3, 5):
                raise ParseError("COLUMNS record needs 3 or 5 fields", lineno)
            cname = toks[0]
            if cname != last_col:
                if cname in col_index:
                    raise ParseError(f"duplicate column {cname!r}", lineno)
                col_index[cname] = len(col_names)
                col_names.append(cname)
                last_col = cname
            j = col_index[cname]
            for rtok, vtok in zip(toks[1::2], toks[2::2]):
                val = _number(vtok, lineno)
                i = row_of(rtok, lineno)
                if i is None:
                    obj[j] = obj.get(j, 0.0) + val
                elif i >= 0 and val != 0.0:
                    entries.append((i, j, val))
        elif section in ("RHS", "RANGES"):
            pairs = toks[1:] if len(toks) % 2 == 1 else toks
            if len(pairs) not in (2, 4):
                raise ParseError(f"{section} record has wrong field count", lineno)
            for rtok, vtok in zip(pairs[0::2], pairs[1::2]):
                val = _number(vtok, lineno)
                i = row_of(rtok, lineno)
                if section == "RHS":
                    if i is None:
                        obj_constant = -val
                    elif i >= 0:
                        rhs[i] = val
                else:
                    if i is None:
                        raise ParseError("RANGES on the objective row", lineno)
                    if i >= 0:
                        ranges[i] = val
        elif section == "BOUNDS":
            kind = toks[0].upper()
            if kind in _NO_VALUE_BOUNDS:
                if len(toks) not in (2, 3):
                    raise ParseError(f"{kind} bound has wrong field count", lineno)
                j = col_of(toks[-1], lineno)
                bound_records.append((kind, j, math.nan))
            elif kind in _VALUE_BOUNDS:
                if len(toks) not in (3, 4):
                    raise ParseError(f"{kind} bound has wrong field count", lineno)
                j = col_of(toks[-2], lineno)
                bound_records.append((kind, j, _number(toks[-1], lineno)))
            else:
                raise ParseError(f"unsupported bound type {kind!r}", lineno)
        elif section in ("QUADOBJ", "QMATRIX", "QSECTION"):
            if len(toks) != 3:
                raise ParseError(f"{section} record needs 3 fields", lineno)
            i = col_of(toks[0], lineno)
            j = col_of(toks[1], lineno)
            val = _number(toks[2], lineno)
            if section == "QUADOBJ" and i != j:
                # keep one triangle; the counterpart is implied
                i, j = min(i, j), max(i, j)
            quad.append((i, j, val))
        elif section == "NAME":
            name = " ".join(toks)
        else:
            raise ParseError(f"data line in {section} section", lineno)

    if obj_row is None:
        raise ParseError("no objective (N) row declared")
    if section != "ENDATA":
        warnings.append("missing ENDATA")

    n = len(col_names)
    lower = np.zeros(n)
    upper = np.full(n, math.inf)
    lower_set = np.zeros(n, dtype=bool)
    for kind, j, val in bound_records:
        if kind in ("UP", "UI"):
            upper[j] = val
            if val < 0 and not lower_set[j] and lower[j] == 0.0:
                lower[j] = -math.inf
                warnings.append(f"negative upper bound on {col_names[j]!r}: lower set to -inf")
        elif kind in ("LO", "LI"):
            lower[j] = val
            lower_set[j] = True
        elif kind == "FX":
            lower[j] = upper[j] = val
            lower_set[j] = True
        elif kind == "FR":
            lower[j], upper[j] = -math.inf, math.inf
            lower_set[j] = True
        elif kind == "MI":
            lower[j] = -math.inf
            lower_set[j] = True
        elif kind == "PL":
            upper[j] = math.inf
        elif kind == "BV":
            lower[j], upper[j] = 0.0, 1.0
            lower_set[j] = True

    c = np.zeros(n)
    for j, v in obj.items():
        c[j] = v
    b = np.zeros(len(row_names))
    for i, v in rhs.items():
        b[i] = v

    if quad_symmetric and section is not None:
        quad = _merge_triangle(quad)

    return RawProblem(
        name=name,
        sense=sense,
        row_names=row_names,
        relations=relations,
        col_names=col_names,
        entries=entries,
        objective=c,
        rhs=b,
        ranges=ranges,
        lower=lower,
        upper=upper,
        quad_entries=quad,
        quad_symmetric=quad_symmetric,
        objective_constant=obj_constant,
        bound_records=bound_records,
        warnings=warnings,
    )


def _merge_triangle(quad):
    merged: dict[tuple[int, int], float] = {}
    for i, j, v in quad:
        merged[(i, j)] = merged.get((i, j), 0.0) + v
    return [(i, j, v) for (i, j), v in merged.items()]


def _sense(tok: str, lineno: int) -> str:
    t = tok.upper()
    if t in ("MIN", "MINIMIZE", "MINIMISE"):
        return "min"
    if t in ("MAX", "MAXIMIZE", "MAXIMISE"):
        return "max"
    raise ParseError(f"unknown objective sense {tok!r}", lineno)

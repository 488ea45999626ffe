import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ippmm.mps import ParseError, parse_qps, read_qps

SMALL = """NAME tiny
ROWS
 N obj
 E c1
COLUMNS
 x1 obj 1 c1 1
 x2 c1 1
RHS
 rhs c1 1
ENDATA
"""


def test_small_problem_parsed_by_hand():
    p = parse_qps(SMALL)
    assert p.m == 1 and p.n == 2
    assert p.col_names == ["x1", "x2"]
    assert p.relations == ["="]
    np.testing.assert_array_equal(p.rhs, [1.0])
    np.testing.assert_array_equal(p.objective, [1.0, 0.0])
    np.testing.assert_array_equal(p.constraint_matrix().toarray(), [[1.0, 1.0]])
    np.testing.assert_array_equal(p.lower, [0.0, 0.0])
    assert np.all(np.isinf(p.upper))


def test_undeclared_row_is_error_with_line_number():
    text = SMALL.replace(" x2 c1 1", " x2 nope 1")
    with pytest.raises(ParseError) as err:
        parse_qps(text)
    assert "7" in str(err.value)


def test_duplicate_row_name_rejected():
    text = SMALL.replace(" E c1\n", " E c1\n L c1\n")
    with pytest.raises(ParseError):
        parse_qps(text)


def test_non_numeric_field_rejected():
    with pytest.raises(ParseError):
        parse_qps(SMALL.replace(" rhs c1 1", " rhs c1 one"))


def test_bad_section_rejected():
    with pytest.raises(ParseError):
        parse_qps(SMALL.replace("RHS", "RHX"))


def test_free_bound_marks_variable_free():
    text = SMALL.replace("ENDATA", "BOUNDS\n FR BND x1\nENDATA")
    p = parse_qps(text)
    assert p.lower[0] == -np.inf and p.upper[0] == np.inf
    assert p.lower[1] == 0.0


def test_bound_types():
    text = SMALL.replace("ENDATA", "BOUNDS\n UP BND x1 4\n MI BND x2\nENDATA")
    p = parse_qps(text)
    assert p.upper[0] == 4.0 and p.lower[0] == 0.0
    assert p.lower[1] == -np.inf


def test_quadobj_stands_for_both_triangles():
    text = SMALL.replace("ENDATA", "QUADOBJ\n x1 x1 2\n x1 x2 1\nENDATA")
    Q = parse_qps(text).quadratic_matrix().toarray()
    np.testing.assert_array_equal(Q, [[2.0, 1.0], [1.0, 0.0]])


def test_ranges_give_interval():
    text = SMALL.replace(" E c1", " L c1").replace("ENDATA", "RANGES\n rng c1 3\nENDATA")
    p = parse_qps(text)
    assert p.row_bounds(0) == (-2.0, 1.0)


def test_evaluate_and_feasibility():
    p = parse_qps(SMALL)
    assert p.evaluate([0.25, 0.75]) == 0.25
    assert p.is_feasible([0.25, 0.75])
    assert not p.is_feasible([0.5, 0.75])
    assert not p.is_feasible([-0.5, 1.5])


def test_corpus_files_parse(corpus):
    files = sorted(corpus.glob("*/*.qps"))
    assert len(files) >= 26
    for f in files:
        p = read_qps(f)
        assert p.n > 0 and p.m > 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False).filter(lambda v: v != 0), min_size=2, max_size=2),
       st.floats(-1e6, 1e6, allow_nan=False))
def test_parser_is_deterministic_and_reads_exact_values(coefs, rhs):
    text = f"""NAME t
ROWS
 N obj
 L r
COLUMNS
 x1 r {coefs[0]!r}
 x2 r {coefs[1]!r}
RHS
 rhs r {rhs!r}
ENDATA
"""
    a, b = parse_qps(text), parse_qps(text)
    for f in dataclasses.fields(a):
        va, vb = getattr(a, f.name), getattr(b, f.name)
        if isinstance(va, np.ndarray):
            np.testing.assert_array_equal(va, vb)
        else:
            assert va == vb
    np.testing.assert_array_equal(a.constraint_matrix().toarray(), [coefs])
    assert a.rhs[0] == rhs

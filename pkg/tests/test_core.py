import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depfusion.core import (
    DataGraph,
    DegenerateInputError,
    ResponseMatrix,
    SequencePartition,
    ValidationError,
    argmax_labels,
    check_confusions,
    log_normalize,
    normalize_columns,
    safe_log,
    validate,
)


def test_validate_clean_matrix():
    assert validate([[1, 2, 1], [2, 2, 1]], 2) == []


def test_validate_item_without_responses():
    problems = validate([[1, 0, 2], [2, 0, 1]], 2)
    assert any("item with no responses" in p for p in problems)


def test_validate_out_of_range():
    problems = validate([[1, 3], [2, 1]], 2)
    assert any("entry out of range" in p for p in problems)


def test_validate_learner_without_responses():
    problems = validate([[1, 2], [0, 0]], 2)
    assert any("learner with no responses" in p for p in problems)


def test_response_matrix_rejects_invalid():
    with pytest.raises(ValidationError):
        ResponseMatrix(np.array([[1, 0], [2, 0]]), 2)
    with pytest.raises(ValidationError):
        ResponseMatrix(np.array([[1, 1]]), 1)


def test_response_matrix_is_immutable():
    r = ResponseMatrix(np.array([[1, 2]]), 2)
    with pytest.raises(ValueError):
        r.entries[0, 0] = 2
    assert r.one_hot.shape == (1, 2, 2)


@st.composite
def mutated_matrices(draw):
    k = draw(st.integers(2, 4))
    m = draw(st.integers(1, 4))
    n = draw(st.integers(1, 5))
    cells = draw(st.lists(st.integers(-1, k + 1), min_size=m * n, max_size=m * n))
    return np.array(cells).reshape(m, n), k


@settings(max_examples=200, deadline=None)
@given(mutated_matrices())
def test_validate_matches_invariants(case):
    entries, k = case
    ok = (
        np.all((entries >= 0) & (entries <= k))
        and np.all((entries != 0).any(axis=0))
        and np.all((entries != 0).any(axis=1))
    )
    assert (validate(entries, k) == []) == bool(ok)


def test_safe_log_examples():
    assert safe_log(1.0, 1e-12) == 0.0
    assert safe_log(0.0, 1e-12) == math.log(1e-12)
    assert safe_log(0.5, 1e-12) == pytest.approx(-0.693147, abs=1e-6)


@pytest.mark.parametrize("p", [-0.1, 1.5, float("nan")])
def test_safe_log_domain(p):
    with pytest.raises(ValueError):
        safe_log(p)


def test_log_normalize_examples():
    np.testing.assert_allclose(log_normalize([0.0, 0.0]), [0.5, 0.5])
    np.testing.assert_allclose(log_normalize([math.log(1), math.log(3)]), [0.25, 0.75])


def test_log_normalize_large_negative_matches_exact():
    # weights e^0, e^-1, e^-2 normalized with high-precision rationals
    w = [Fraction(math.e) ** 0, 1 / Fraction(math.e), 1 / Fraction(math.e) ** 2]
    exact = [float(x / sum(w)) for x in w]
    np.testing.assert_allclose(log_normalize([-1000.0, -1001.0, -1002.0]), exact, rtol=1e-13)


def test_log_normalize_all_neg_inf():
    with pytest.raises(DegenerateInputError):
        log_normalize([-np.inf, -np.inf])


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=1, max_size=6),
    st.floats(-1e3, 1e3),
)
def test_log_normalize_shift_invariant(v, c):
    a = log_normalize(np.array(v))
    b = log_normalize(np.array(v) + c)
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert a.sum() == pytest.approx(1.0)


def test_argmax_ties_lowest():
    np.testing.assert_array_equal(argmax_labels(np.array([[0.5, 0.5], [0.2, 0.8]])), [1, 2])


def test_normalize_columns_zero_column_uniform():
    out = normalize_columns(np.array([[2.0, 0.0], [2.0, 0.0]]))
    np.testing.assert_allclose(out, [[0.5, 0.5], [0.5, 0.5]])


def test_check_confusions_rejects_nonstochastic():
    with pytest.raises(ValidationError):
        check_confusions(np.array([[[0.5, 0.5], [0.6, 0.5]]]))


def test_partition_pairs_skip_boundaries():
    p = SequencePartition(np.array([2, 1, 3]))
    prev, nxt = p.consecutive_pairs()
    np.testing.assert_array_equal(prev, [0, 3, 4])
    np.testing.assert_array_equal(nxt, [1, 4, 5])
    np.testing.assert_array_equal(p.starts, [0, 2, 3])
    with pytest.raises(ValidationError):
        SequencePartition(np.array([2, 0]))


def test_graph_validation():
    with pytest.raises(ValidationError):
        DataGraph(3, [[0, 0]], 1.0)
    with pytest.raises(ValidationError):
        DataGraph(3, [[0, 1], [1, 0]], 1.0)
    with pytest.raises(ValidationError):
        DataGraph(3, [[0, 1]], 0.0)
    g = DataGraph(3, [[2, 1], [0, 1]], [2.0, 3.0])
    np.testing.assert_array_equal(g.edges, [[0, 1], [1, 2]])
    np.testing.assert_array_equal(g.delta, [3.0, 2.0])
    w = g.adjacency().toarray()
    np.testing.assert_allclose(w, w.T)
    assert w[1, 2] == 2.0

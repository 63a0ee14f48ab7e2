import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spbl.errors import Asymmetric, NonConvergence, NotSPD, TooLarge
from spbl.linops import (
    ClassTag,
    ProblemSpec,
    SynthesisOperator,
    check_compatibility,
    fbi_check,
    matrix_from_csv,
    matrix_from_json,
    matrix_to_csv,
    matrix_to_json,
    operator_norm,
    whiten,
)


def _spd(seed, n):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, n))
    return X @ X.T + n * np.eye(n)


# whiten


def test_whiten_identity():
    np.testing.assert_allclose(whiten(np.eye(2)), np.eye(2), atol=1e-15)


def test_whiten_diagonal():
    np.testing.assert_allclose(whiten(np.diag([4.0, 1.0])), np.diag([0.5, 1.0]), atol=1e-15)


def test_whiten_scalar():
    np.testing.assert_allclose(whiten(np.array([[4.0]])), [[0.5]])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 7))
def test_whiten_inverts_covariance(seed, n):
    S = _spd(seed, n)
    W = whiten(S)
    assert np.max(np.abs(W @ S @ W - np.eye(n))) <= 1e-8
    np.testing.assert_allclose(W, W.T, atol=1e-14)


def test_whiten_rejects_indefinite():
    with pytest.raises(NotSPD):
        whiten(np.diag([1.0, -1.0]))
    with pytest.raises(NotSPD):
        whiten(np.diag([1.0, 1e-14]))


def test_whiten_rejects_asymmetric():
    with pytest.raises(Asymmetric):
        whiten(np.array([[2.0, 1.0], [0.0, 2.0]]))


# operator_norm


@pytest.mark.parametrize("M, expected", [
    (np.diag([3.0, 1.0]), 3.0),
    (np.zeros((3, 2)), 0.0),
    (np.array([[0.0, 2.0], [0.0, 0.0]]), 2.0),
])
def test_operator_norm_examples(M, expected):
    assert operator_norm(M) == pytest.approx(expected, rel=1e-10, abs=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 8), st.integers(1, 8))
def test_operator_norm_matches_svd_and_transpose(seed, n, p):
    M = np.random.default_rng(seed).standard_normal((n, p))
    ref = np.linalg.svd(M, compute_uv=False)[0]
    assert abs(operator_norm(M) - ref) <= 1e-8 * ref
    assert abs(operator_norm(M) - operator_norm(M.T)) <= 1e-8 * ref


def test_operator_norm_deterministic():
    M = np.random.default_rng(3).standard_normal((6, 9))
    assert operator_norm(M) == operator_norm(M.copy())


def test_operator_norm_nonconvergence():
    # two nearly equal top singular values stall power iteration
    M = np.diag([1.0, 1.0 - 1e-13, 0.5])
    with pytest.raises(NonConvergence):
        operator_norm(M, tol=1e-16, max_iter=3)


# fbi_check


def test_fbi_identity_passes():
    rep = fbi_check(np.eye(3), 3)
    assert rep.passed and rep.worst_value == pytest.approx(1.0)


def test_fbi_duplicate_columns_fail_on_pair():
    G = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
    rep = fbi_check(G, 2)
    assert not rep.passed
    assert tuple(rep.worst_subset) == (0, 2)


def test_fbi_random_matches_direct_svd():
    G = np.random.default_rng(0).standard_normal((4, 6))
    rep = fbi_check(G, 4)
    # independent: loop over every subset with a per-subset SVD
    direct = min(
        np.linalg.svd(G[:, list(S)], compute_uv=False)[-1]
        for k in range(1, 5)
        for S in itertools.combinations(range(6), k)
    )
    assert rep.passed
    assert rep.worst_value == pytest.approx(direct, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 5))
def test_fbi_full_card_equals_smallest_singular_value(seed, p):
    G = np.random.default_rng(seed).standard_normal((p + 2, p))
    smin = np.linalg.svd(G, compute_uv=False)[-1]
    assert fbi_check(G, p).passed == (smin > 1e-10)


def test_fbi_enumeration_guard():
    with pytest.raises(TooLarge):
        fbi_check(np.ones((60, 60)), 30)


# compatibility and ProblemSpec


def test_compatibility_examples():
    assert check_compatibility(np.eye(3))
    assert not check_compatibility(np.diag([1.0, 1e-14]), floor=1e-10)
    n = np.arange(1, 5, dtype=float)
    assert check_compatibility(np.diag(n ** -2.0), floor=1e-10)
    assert check_compatibility(ProblemSpec(np.eye(2), np.eye(2)))


def test_problem_spec_caches_whitened_operator():
    A = np.random.default_rng(1).standard_normal((3, 4))
    S = _spd(2, 3)
    spec = ProblemSpec(A, S)
    assert spec.n_y == 3 and spec.n_x == 4
    np.testing.assert_allclose(spec.WA, spec.W @ A)
    B = SynthesisOperator(np.eye(4))
    np.testing.assert_allclose(spec.system_matrix(B), spec.W @ A)


def test_problem_spec_dimension_checks():
    with pytest.raises(ValueError):
        ProblemSpec(np.eye(3), np.eye(2))


def test_synthesis_operator_is_immutable():
    B = SynthesisOperator(np.eye(2), ClassTag.EXPLICIT)
    with pytest.raises(ValueError):
        B.M[0, 0] = 5.0
    with pytest.raises(ValueError):
        SynthesisOperator(np.array([[np.nan]]))
    assert B.norm() == pytest.approx(1.0)


# serialization


def test_matrix_roundtrips():
    M = np.random.default_rng(5).standard_normal((3, 4))
    np.testing.assert_array_equal(matrix_from_json(matrix_to_json(M)), M)
    text = matrix_to_csv(M)
    assert text.splitlines()[0] == "# 3,4"
    np.testing.assert_array_equal(matrix_from_csv(text), M)

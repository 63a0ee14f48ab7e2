import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spbl.errors import DimensionMismatch, IllConditioned, TooLarge
from spbl.inner import (
    InnerSolution,
    SolverConfig,
    StepRule,
    brute_force_lasso,
    certificate_residual,
    fista_batch,
    objective,
    soft_threshold,
    solve_analysis,
    solve_inner,
)
from spbl.linops import ProblemSpec, SynthesisOperator, fbi_check

I2 = ProblemSpec(np.eye(2), np.eye(2))


def _instance(seed, n=None, p=None):
    r = np.random.default_rng(seed)
    n = n or int(r.integers(2, 9))
    p = p or int(r.integers(2, 11))
    G = r.standard_normal((n, p)) / np.sqrt(n)
    z = r.standard_normal(n) * 3.0
    return G, z


# soft threshold / objective / certificate


@pytest.mark.parametrize("v, lam, out", [(3.0, 1.0, 2.0), (-0.5, 1.0, 0.0), (-3.0, 1.0, -2.0)])
def test_soft_threshold_examples(v, lam, out):
    assert soft_threshold(v, lam) == out


def test_soft_threshold_rejects_negative_threshold():
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)


def test_objective_examples():
    assert objective(np.eye(3), np.ones(3), np.zeros(3)) == 0.0
    assert objective(np.eye(1), [3.0], [2.0]) == -2.0
    assert objective(np.eye(2), [3.0, 0.5], [2.0, 0.0]) == -2.0


def test_certificate_examples():
    assert certificate_residual(np.eye(2), [3.0, 0.5], [2.0, 0.0]) == 0.0
    assert certificate_residual(np.eye(2), [0.0, 0.0], [0.0, 0.0]) == 0.0
    assert certificate_residual(np.eye(1), [3.0], [3.0]) == 1.0


# solve_inner


def test_identity_problem_is_soft_threshold():
    sol = solve_inner(I2, SynthesisOperator(np.eye(2)), np.array([3.0, 0.5]))
    np.testing.assert_array_equal(sol.u_hat, [2.0, 0.0])
    np.testing.assert_array_equal(sol.x_hat, [2.0, 0.0])
    assert sol.converged and sol.cert_residual == 0.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=12))
def test_identity_case_equals_elementwise_threshold(y):
    y = np.array(y)
    n = y.size
    spec = ProblemSpec(np.eye(n), np.eye(n))
    sol = solve_inner(spec, SynthesisOperator(np.eye(n)), y)
    assert np.max(np.abs(sol.u_hat - np.sign(y) * np.maximum(np.abs(y) - 1.0, 0.0))) <= 1e-10


def test_zero_data_gives_zero_solution():
    r = np.random.default_rng(4)
    spec = ProblemSpec(r.standard_normal((3, 4)), np.eye(3))
    sol = solve_inner(spec, SynthesisOperator(r.standard_normal((4, 6))), np.zeros(3))
    np.testing.assert_array_equal(sol.u_hat, 0.0)
    assert sol.objective == 0.0


def test_scalar_example_reconstruction():
    # a = 0.5, sigma = 1, B = 1/b with b = 0.1, y = 1.5: threshold 0.4 applied to 3
    spec = ProblemSpec(np.array([[0.5]]), np.array([[1.0]]))
    sol = solve_inner(spec, SynthesisOperator(np.array([[10.0]])), np.array([1.5]))
    assert sol.x_hat[0] == pytest.approx(2.6, abs=1e-12)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        solve_inner(I2, SynthesisOperator(np.eye(2)), np.ones(3))


def test_solution_json_roundtrip_keeps_certificate():
    G, z = _instance(11, 5, 7)
    spec = ProblemSpec(G, np.eye(5))
    B = SynthesisOperator(np.eye(7))
    sol = solve_inner(spec, B, z)
    back = InnerSolution.from_json(sol.to_json())
    np.testing.assert_array_equal(back.u_hat, sol.u_hat)
    assert certificate_residual(G, z, back.u_hat) <= 1e-8
    np.testing.assert_array_equal(back.x_hat, B.M @ back.u_hat)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_solutions_satisfy_invariants(seed):
    G, z = _instance(seed)
    res = fista_batch(G, z)
    assert res.converged[0]
    assert certificate_residual(G, z, res.U) <= 1e-8
    assert res.objective[0] <= 1e-10
    assert res.objective[0] == pytest.approx(objective(G, z, res.U), abs=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_monitored_objective_is_non_increasing(seed):
    G, z = _instance(100 + seed, 6, 10)
    res = fista_batch(G, z, SolverConfig(polish_every=0), monitor=True)
    J = np.array([t[0] for t in res.trace])
    assert np.all(np.diff(J) <= 1e-12)


def test_backtracking_agrees_with_fixed_step():
    G, z = _instance(21, 6, 9)
    a = fista_batch(G, z, SolverConfig(step_rule=StepRule.FIXED)).U
    b = fista_batch(G, z, SolverConfig(step_rule=StepRule.BACKTRACKING)).U
    assert np.max(np.abs(a - b)) <= 1e-6


def test_batched_columns_match_single_solves():
    G, _ = _instance(31, 5, 8)
    Z = np.random.default_rng(32).standard_normal((5, 6)) * 3
    batch = fista_batch(G, Z).U
    for j in range(6):
        np.testing.assert_allclose(batch[:, j], fista_batch(G, Z[:, j]).U, atol=1e-7)


def test_iteration_cap_reports_nonconvergence():
    G, z = _instance(41, 8, 10)
    res = fista_batch(G, z, SolverConfig(max_iters=1, polish_every=0))
    assert res.iterations[0] == 1
    assert not res.converged[0] or res.cert_residual[0] <= 1e-8


# brute-force oracle


def test_oracle_examples():
    assert np.array_equal(brute_force_lasso(np.eye(2), [3.0, 0.5]).u, [2.0, 0.0])
    assert np.array_equal(brute_force_lasso(np.eye(1), [0.5]).u, [0.0])


def test_oracle_reports_ties_when_injectivity_fails():
    G = np.array([[1.0, 1.0]])
    res = brute_force_lasso(G, [3.0])
    assert not res.unique
    for u in res.ties:
        assert np.abs(u).sum() == pytest.approx(2.0)
        assert (G @ u)[0] == pytest.approx(2.0)
    assert (0, 1) in res.singular_supports


def test_oracle_guard():
    with pytest.raises(TooLarge):
        brute_force_lasso(np.eye(15), np.ones(15))


def _exhaustive_grid_min(G, z):
    # crude independent check on tiny instances: objective on a fine grid
    axis = np.linspace(-4, 4, 161)
    pts = np.array(list(itertools.product(axis, repeat=G.shape[1])))
    Gu = pts @ G.T
    vals = 0.5 * (Gu * Gu).sum(1) - Gu @ z + np.abs(pts).sum(1)
    return vals.min()


@pytest.mark.parametrize("seed", range(4))
def test_oracle_beats_grid_minimum(seed):
    G, z = _instance(seed + 500, 3, 2)
    res = brute_force_lasso(G, z)
    assert res.objective <= _exhaustive_grid_min(G, z) + 1e-12


@pytest.mark.parametrize("seed", range(25))
def test_fista_matches_oracle(seed):
    G, z = _instance(seed)
    if not fbi_check(G, min(G.shape), tol=1e-6).passed:
        pytest.skip("injectivity fails; minimizer need not be unique")
    o = brute_force_lasso(G, z)
    assert o.unique
    f = fista_batch(G, z)
    assert np.max(np.abs(f.U - o.u)) <= 1e-6
    assert abs(f.objective[0] - o.objective) <= 1e-10


# analysis form


def test_analysis_identity():
    x = solve_analysis(I2, SynthesisOperator(np.eye(2)), [3.0, 0.5])
    np.testing.assert_allclose(x, [2.0, 0.0], atol=1e-12)


def test_analysis_scalar_matches_synthesis():
    spec = ProblemSpec(np.eye(1), np.eye(1))
    B = SynthesisOperator(np.array([[2.0]]))
    x = solve_analysis(spec, B, [3.0])
    assert x[0] == pytest.approx(solve_inner(spec, B, np.array([3.0])).x_hat[0], abs=1e-10)


def test_analysis_rotation_matches_synthesis():
    c = s = np.sqrt(0.5)
    B = SynthesisOperator(np.array([[c, -s], [s, c]]))
    y = np.random.default_rng(0).standard_normal(2) * 3
    x = solve_analysis(I2, B, y)
    np.testing.assert_allclose(x, solve_inner(I2, B, y).x_hat, atol=1e-6)


def test_analysis_ill_conditioned():
    with pytest.raises(IllConditioned):
        solve_analysis(I2, SynthesisOperator(np.diag([1.0, 1e-12])), [1.0, 1.0])

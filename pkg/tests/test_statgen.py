import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spbl.errors import BoundViolated
from spbl.linops import ProblemSpec, SynthesisOperator
from spbl.statgen import (
    Dataset,
    NoiseKind,
    NoiseModel,
    SignalKind,
    SignalModel,
    make_dataset,
    sample_noise,
    sample_signal,
    weighted_white_problem,
)


def test_rademacher_spike_is_pm_one_equiprobable():
    sig = SignalModel(SignalKind.RADEMACHER_SPIKE, n_x=1, sparsity=1, amplitude=1.0)
    x = sig.sample(0, 100_000)[:, 0]
    assert set(np.unique(x)) == {-1.0, 1.0}
    # binomial proportion within 4 standard errors of 1/2
    assert abs(np.mean(x > 0) - 0.5) <= 4 * 0.5 / np.sqrt(x.size)


def test_zero_sparsity_gives_zero_signal():
    sig = SignalModel(SignalKind.RADEMACHER_SPIKE, n_x=5, sparsity=0)
    assert not np.any(sample_signal(sig, 3))


def test_sparse_synthesis_support_is_reproducible():
    sig = SignalModel(SignalKind.SPARSE_SYNTHESIS, n_x=6, sparsity=2, amplitude=1.5,
                      B_true=SynthesisOperator(np.eye(6)))
    a, b = sample_signal(sig, 0), sample_signal(sig, 0)
    np.testing.assert_array_equal(a, b)
    assert np.count_nonzero(a) == 2
    assert set(np.abs(a[a != 0])) == {1.5}


def test_signal_bound_violation_is_an_error():
    sig = SignalModel(SignalKind.RADEMACHER_SPIKE, n_x=4, sparsity=2, amplitude=1.0, Q0=1.0)
    with pytest.raises(BoundViolated):
        sig.sample(0, 10)


def test_bounded_discrete_noise():
    noise = NoiseModel(NoiseKind.BOUNDED_DISCRETE, n_y=1, sigma=1.0)
    e = noise.sample(1, 100_000)[:, 0]
    assert set(np.unique(e)) == {-1.0, 1.0}
    assert abs(np.mean(e > 0) - 0.5) <= 4 * 0.5 / np.sqrt(e.size)


@pytest.mark.parametrize("kind", list(NoiseKind))
def test_zero_sigma_gives_zero_noise(kind):
    assert not np.any(sample_noise(NoiseModel(kind, n_y=3, sigma=0.0), 5))


def test_weighted_white_covariance():
    sigma = 0.7
    noise = NoiseModel(NoiseKind.WEIGHTED_WHITE, n_y=3, sigma=sigma, s=1.0)
    E = noise.sample(2, 100_000)
    target = sigma**2 * np.diag([1.0, 1 / 4, 1 / 9])
    emp = np.cov(E.T)
    assert np.all(np.abs(np.diag(emp) - np.diag(target)) <= 0.05 * np.diag(target))
    np.testing.assert_array_equal(noise.covariance, target)


def test_truncated_gaussian_covariance_and_bound():
    cov = np.array([[1.0, 0.3], [0.3, 0.5]])
    noise = NoiseModel(NoiseKind.TRUNCATED_GAUSSIAN, n_y=2, cov=cov)
    E = noise.sample(3, 100_000)
    assert np.all(np.linalg.norm(E, axis=1) <= noise.Q0)
    assert np.linalg.norm(np.cov(E.T) - cov) / np.linalg.norm(cov) <= 0.05
    # zero mean within 4 standard errors per coordinate
    assert np.all(np.abs(E.mean(0)) <= 4 * np.sqrt(np.diag(cov) / E.shape[0]))


def test_truncation_rejects_rather_than_clips():
    noise = NoiseModel(NoiseKind.TRUNCATED_GAUSSIAN, n_y=1, sigma=1.0, Q0=0.5)
    e = noise.sample(4, 20_000)[:, 0]
    assert np.all(np.abs(e) <= 0.5)
    # clipping would pile mass at the boundary
    assert np.mean(np.abs(e) > 0.499) < 0.01


def test_make_dataset_zero_noise_is_exact():
    A = np.array([[1.0, 2.0], [0.0, 1.0], [3.0, -1.0]])
    spec = ProblemSpec(A, np.eye(3))
    sig = SignalModel(SignalKind.RADEMACHER_SPIKE, n_x=2, sparsity=2)
    noise = NoiseModel(NoiseKind.BOUNDED_DISCRETE, n_y=3, sigma=0.0)
    d = make_dataset(spec, sig, noise, 1, 0)
    np.testing.assert_array_equal(d.Y[0], A @ d.X[0])


def test_make_dataset_deterministic():
    spec = ProblemSpec(np.eye(3), np.eye(3))
    sig = SignalModel(SignalKind.RADEMACHER_SPIKE, n_x=3, sparsity=1)
    noise = NoiseModel(NoiseKind.TRUNCATED_GAUSSIAN, n_y=3, sigma=0.3)
    a = make_dataset(spec, sig, noise, 100, 7)
    b = make_dataset(spec, sig, noise, 100, 7)
    assert a.X.tobytes() == b.X.tobytes() and a.Y.tobytes() == b.Y.tobytes()


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3000), st.integers(1, 3000), st.integers(0, 2**31))
def test_prefix_property(m1, m2, seed):
    spec = ProblemSpec(np.eye(2), np.eye(2))
    sig = SignalModel(SignalKind.RADEMACHER_SPIKE, n_x=2, sparsity=1)
    noise = NoiseModel(NoiseKind.TRUNCATED_GAUSSIAN, n_y=2, sigma=1.0)
    a = make_dataset(spec, sig, noise, m1, seed)
    b = make_dataset(spec, sig, noise, m2, seed)
    k = min(m1, m2)
    assert a.X[:k].tobytes() == b.X[:k].tobytes()
    assert a.Y[:k].tobytes() == b.Y[:k].tobytes()


def test_scalar_model_data_mean():
    spec = ProblemSpec(np.array([[0.5]]), np.array([[1.0]]))
    sig = SignalModel(SignalKind.RADEMACHER_SPIKE, n_x=1)
    noise = NoiseModel(NoiseKind.BOUNDED_DISCRETE, n_y=1, sigma=1.0)
    y = make_dataset(spec, sig, noise, 100_000, 11).Y[:, 0]
    assert abs(y.mean()) <= 3 * y.std(ddof=1) / np.sqrt(y.size)


def test_weighted_white_problem_lifts_operator():
    A = np.ones((3, 2))
    spec, noise = weighted_white_problem(A, 0.5, 1.0)
    np.testing.assert_allclose(spec.A, np.diag([1.0, 0.5, 1 / 3]) @ A)
    np.testing.assert_allclose(spec.sigma_eps, 0.25 * np.diag([1.0, 0.25, 1 / 9]))
    assert noise.kind is NoiseKind.WEIGHTED_WHITE


def test_dataset_serialization_roundtrip():
    spec = ProblemSpec(np.eye(2), np.eye(2))
    sig = SignalModel(SignalKind.RADEMACHER_SPIKE, n_x=2)
    noise = NoiseModel(NoiseKind.TRUNCATED_GAUSSIAN, n_y=2, sigma=0.1)
    d = make_dataset(spec, sig, noise, 5, 9)
    for back in (Dataset.from_csv(d.to_csv()), Dataset.from_json(d.to_json())):
        np.testing.assert_array_equal(back.X, d.X)
        np.testing.assert_array_equal(back.Y, d.Y)
        assert back.seed == 9
    assert d.to_csv().startswith("# seed=9 m=5")

"""Closed-form scalar example: A x = a x, noise +-sigma, signal +-1, synthesis B = 1/b.

The reconstruction is a soft threshold, x_hat = S_{b/gamma^2}(x + eps/gamma)
with gamma = a / sigma and eps in {-1, +1}, so the mean squared error over
the four equiprobable outcomes has a piecewise closed form minimized at
b = gamma.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from spbl.errors import DomainError
from spbl.inner import soft_threshold
from spbl.linops import ProblemSpec
from spbl.statgen import Dataset, NoiseKind, NoiseModel, SignalKind, SignalModel


@dataclass(frozen=True)
class Scalar1DModel:
    a: float
    sigma: float
    b: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")
        if not 0 < self.a <= self.sigma:
            raise DomainError("need 0 < a <= sigma")
        if not self.b > 0:
            raise DomainError("b must be positive")

    @property
    def gamma(self) -> float:
        return self.a / self.sigma

    @classmethod
    def from_gamma(cls, gamma: float, b: float, sigma: float = 1.0) -> "Scalar1DModel":
        return cls(gamma * sigma, sigma, b)


def analytic_mse(model: Scalar1DModel) -> float:
    g, b = model.gamma, model.b
    g4 = g**4
    if b < g - g * g:
        return (b - g) ** 2 / g4
    if b < g + g * g:
        return 0.5 * (1.0 + (b - g) ** 2 / g4)
    return 1.0


def enumerate_mse(model: Scalar1DModel) -> float:
    g = model.gamma
    lam = model.b / g**2
    total = 0.0
    for x in (-1.0, 1.0):
        for e in (-1.0, 1.0):
            total += (soft_threshold(x + e / g, lam) - x) ** 2
    return float(total / 4.0)


def optimal_b(gamma: float) -> float:
    if not 0 < gamma <= 1:
        raise DomainError("gamma must lie in (0, 1]")
    return float(gamma)


def scalar_problem(a: float, sigma: float) -> tuple[ProblemSpec, SignalModel, NoiseModel]:
    """The inverse problem, signal law and noise law of the scalar example."""
    spec = ProblemSpec(np.array([[a]]), np.array([[sigma**2]]))
    sig = SignalModel(SignalKind.RADEMACHER_SPIKE, n_x=1, sparsity=1, amplitude=1.0)
    noise = NoiseModel(NoiseKind.BOUNDED_DISCRETE, n_y=1, sigma=sigma)
    return spec, sig, noise


def outcome_dataset(a: float, sigma: float) -> Dataset:
    """The four equiprobable (x, eps) outcomes as an exact-expectation dataset."""
    xs, ys = [], []
    for x in (-1.0, 1.0):
        for e in (-1.0, 1.0):
            xs.append([x])
            ys.append([a * x + sigma * e])
    return Dataset(np.array(xs), np.array(ys))

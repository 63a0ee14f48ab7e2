"""Risk evaluation and the outer (bilevel) search over an operator class."""

from __future__ import annotations

import enum
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from spbl.classes import ParamGrid, enumerate_grid
from spbl.errors import ConstraintViolated
from spbl.inner import SolverConfig, reconstruct
from spbl.linops import ProblemSpec, SynthesisOperator, operator_norm
from spbl.statgen import Dataset, NoiseModel, SignalModel, make_dataset

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class SearchMethod(str, enum.Enum):
    GRID = "GridSearch"
    COORDINATE = "CoordinateSearch"


@dataclass(frozen=True)
class RiskReport:
    value: float
    per_sample: np.ndarray
    n_unconverged: int
    stderr: float = 0.0

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "stderr": self.stderr,
            "n_unconverged": self.n_unconverged,
            "per_sample": self.per_sample.tolist(),
        }


@dataclass
class BilevelResult:
    theta_hat: tuple[float, ...]
    B_hat: SynthesisOperator
    risk_hat: float
    trace: list[tuple[tuple[float, ...], float]]
    method: SearchMethod
    rejected: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "theta_hat": list(self.theta_hat),
            "risk_hat": self.risk_hat,
            "method": self.method.value,
            "trace": [{"theta": list(t), "risk": r} for t, r in self.trace],
            "rejected": [list(t) for t in self.rejected],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def trace_csv(self) -> str:
        k = len(self.theta_hat)
        lines = [",".join([f"theta{i}" for i in range(k)] + ["risk"])]
        lines += [",".join(repr(v) for v in (*t, r)) for t, r in self.trace]
        return "\n".join(lines) + "\n"


def sample_losses(spec: ProblemSpec, B: SynthesisOperator, X, Y, cfg: SolverConfig = SolverConfig()):
    """Squared reconstruction errors ||R_B(y_j) - x_j||^2 and the number of unconverged solves."""
    Xh, res = reconstruct(spec, B, np.asarray(Y, float).T, cfg)
    err = Xh - np.asarray(X, float).T
    return np.einsum("ij,ij->j", err, err), int(np.count_nonzero(~res.converged))


def empirical_risk(spec: ProblemSpec, B: SynthesisOperator, dataset: Dataset,
                   cfg: SolverConfig = SolverConfig()) -> RiskReport:
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    losses, bad = sample_losses(spec, B, dataset.X, dataset.Y, cfg)
    return RiskReport(float(np.mean(losses)), losses, bad, _stderr(losses))


def _stderr(losses) -> float:
    if losses.size < 2:
        return 0.0
    return float(np.std(losses, ddof=1) / np.sqrt(losses.size))


def expected_risk_mc(spec: ProblemSpec, B: SynthesisOperator, sig: SignalModel, noise: NoiseModel,
                     n_mc: int, seed: int, cfg: SolverConfig = SolverConfig()) -> RiskReport:
    """Monte Carlo estimate of the expected loss on a fresh sample of size n_mc."""
    if n_mc < 1:
        raise ValueError("n_mc must be positive")
    return empirical_risk(spec, B, make_dataset(spec, sig, noise, n_mc, seed), cfg)


def lex_argmin(thetas, risks) -> int:
    """Index of the smallest risk; ties go to the lexicographically smallest theta."""
    best = None
    for i, (t, r) in enumerate(zip(thetas, risks)):
        if not np.isfinite(r):
            continue
        if best is None or r < risks[best] or (r == risks[best] and tuple(t) < tuple(thetas[best])):
            best = i
    if best is None:
        raise ConstraintViolated("no admissible parameter in the search set")
    return best


def _risk_at(args):
    spec, cls, theta, X, Y, cfg = args
    if hasattr(cls, "admissible") and not cls.admissible(theta):
        return math.inf
    try:
        B = cls.build(theta)
    except ConstraintViolated:
        return math.inf
    losses, _ = sample_losses(spec, B, X, Y, cfg)
    return float(np.mean(losses))


def _map(fn, items, jobs):
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


def _golden(f, lo, hi, tol):
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return


def learn_operator(spec: ProblemSpec, cls, grid: ParamGrid, dataset: Dataset,
                   cfg: SolverConfig = SolverConfig(), method: SearchMethod = SearchMethod.GRID,
                   jobs: int = 1, theta_tol: float = 1e-4, sweeps: int = 2) -> BilevelResult:
    """Minimize the empirical risk over the class.

    Every grid point is evaluated; inadmissible points (constraint failures)
    are recorded in ``rejected``. With ``CoordinateSearch`` the grid optimum
    is refined one coordinate at a time by golden-section search over that
    axis' interval. The returned parameter is the best point visited.
    """
    method = SearchMethod(method)
    thetas = enumerate_grid(grid)
    X, Y = dataset.X, dataset.Y
    risks = _map(_risk_at, [(spec, cls, t, X, Y, cfg) for t in thetas], jobs)
    trace = [(tuple(t), r) for t, r in zip(thetas, risks) if np.isfinite(r)]
    rejected = [tuple(t) for t, r in zip(thetas, risks) if not np.isfinite(r)]

    if method is SearchMethod.COORDINATE:
        i = lex_argmin([t for t, _ in trace], [r for _, r in trace])
        cur = list(trace[i][0])
        for _ in range(sweeps):
            for ax, (lo, hi) in enumerate(grid.bounds()):
                if hi <= lo:
                    continue

                def f(v, ax=ax):
                    th = tuple(cur[:ax] + [v] + cur[ax + 1:])
                    r = _risk_at((spec, cls, th, X, Y, cfg))
                    if np.isfinite(r):
                        trace.append((th, r))
                    return r

                _golden(f, lo, hi, theta_tol)
                j = lex_argmin([t for t, _ in trace], [r for _, r in trace])
                cur = list(trace[j][0])

    ts = [t for t, _ in trace]
    rs = [r for _, r in trace]
    best = lex_argmin(ts, rs)
    theta_hat = ts[best]
    return BilevelResult(theta_hat, cls.build(theta_hat), rs[best], trace, method, rejected)


def learn_dictionary(cls, grid: ParamGrid, X, cfg: SolverConfig = SolverConfig(),
                     method: SearchMethod = SearchMethod.GRID, jobs: int = 1) -> BilevelResult:
    """Supervised search with A = Id and no whitening, training on the signals themselves."""
    X = np.asarray(X.X if isinstance(X, Dataset) else X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[1]
    ident = ProblemSpec(np.eye(n), np.eye(n))
    return learn_operator(ident, cls, grid, Dataset(X, X), cfg, method, jobs)


def stability_probe(spec: ProblemSpec, B1: SynthesisOperator, B2: SynthesisOperator, y,
                    cfg: SolverConfig = SolverConfig()) -> tuple[float, float]:
    """(||R_B1(y) - R_B2(y)||, ||B1 - B2||)."""
    y = np.asarray(y, dtype=float)
    Y = y[:, None] if y.ndim == 1 else y
    x1, _ = reconstruct(spec, B1, Y, cfg)
    x2, _ = reconstruct(spec, B2, Y, cfg)
    dx = np.linalg.norm(x1 - x2, axis=0)
    dB = operator_norm(B1.M - B2.M)
    return (float(dx[0]) if y.ndim == 1 else dx), dB

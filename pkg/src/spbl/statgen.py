"""Seeded generators for bounded training pairs (x, y = A x + eps).

Every sample is a deterministic function of (seed, stream, index): samples
are drawn in fixed-size blocks, each block from its own child seed
sequence, so the first n samples of a dataset do not depend on how many
samples were requested in total. The signal and noise streams use
independent children of the same seed.
"""

from __future__ import annotations

import enum
import io
import json
from dataclasses import dataclass, field

import numpy as np

from spbl.errors import BoundViolated, RejectionOverflow
from spbl.linops import ProblemSpec, SynthesisOperator, matrix_to_csv

BLOCK = 1024
X_STREAM, EPS_STREAM = 0, 1
MAX_REJECTIONS = 10**6
WHITE_TRUNC = 5.0


class SignalKind(str, enum.Enum):
    SPARSE_SYNTHESIS = "SparseSynthesis"
    RADEMACHER_SPIKE = "RademacherSpike"


class NoiseKind(str, enum.Enum):
    TRUNCATED_GAUSSIAN = "TruncatedGaussian"
    BOUNDED_DISCRETE = "BoundedDiscrete"
    WEIGHTED_WHITE = "WeightedWhite"


def block_rng(seed: int, stream: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, block)))


def _blocked(draw_block, seed, stream, start, count):
    out = []
    first, last = start // BLOCK, (start + count - 1) // BLOCK
    for b in range(first, last + 1):
        blk = draw_block(block_rng(seed, stream, b))
        lo = max(start - b * BLOCK, 0)
        hi = min(start + count - b * BLOCK, BLOCK)
        out.append(blk[lo:hi])
    return np.concatenate(out, axis=0)


@dataclass(frozen=True)
class SignalModel:
    kind: SignalKind
    n_x: int
    sparsity: int = 1
    amplitude: float = 1.0
    B_true: SynthesisOperator | None = None
    Q0: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SignalKind(self.kind))
        if self.kind is SignalKind.SPARSE_SYNTHESIS:
            if self.B_true is None:
                raise ValueError("SparseSynthesis needs a generating operator")
            if self.B_true.shape[0] != self.n_x:
                raise ValueError("generating operator does not map into R^n_x")
        if not 0 <= self.sparsity <= self.n_coeffs:
            raise ValueError("sparsity out of range")
        if self.Q0 is None:
            gain = 1.0 if self.B_true is None else float(np.linalg.norm(self.B_true.M, 2))
            object.__setattr__(self, "Q0", self.amplitude * np.sqrt(self.sparsity) * gain * (1 + 1e-12))

    @property
    def n_coeffs(self) -> int:
        if self.kind is SignalKind.SPARSE_SYNTHESIS:
            return self.B_true.shape[1]
        return self.n_x

    def _draw_block(self, rng):
        n = self.n_coeffs
        k = self.sparsity
        C = np.zeros((BLOCK, n))
        if k:
            supp = np.argsort(rng.random((BLOCK, n)), axis=1)[:, :k]
            signs = np.where(rng.random((BLOCK, k)) < 0.5, -1.0, 1.0)
            np.put_along_axis(C, supp, self.amplitude * signs, axis=1)
        if self.kind is SignalKind.SPARSE_SYNTHESIS:
            return C @ self.B_true.M.T
        return C

    def sample(self, seed: int, count: int, start: int = 0) -> np.ndarray:
        """Signals with indices start..start+count-1 as rows."""
        X = _blocked(self._draw_block, seed, X_STREAM, start, count)
        norms = np.linalg.norm(X, axis=1)
        if np.any(norms > self.Q0):
            raise BoundViolated(f"signal norm {norms.max():.4g} exceeds Q0 = {self.Q0:.4g}")
        return X

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "n_x": self.n_x,
            "sparsity": self.sparsity,
            "amplitude": self.amplitude,
            "Q0": self.Q0,
            "B_true_params": list(self.B_true.params) if self.B_true is not None else None,
        }


@dataclass(frozen=True)
class NoiseModel:
    kind: NoiseKind
    n_y: int
    sigma: float = 1.0
    s: float = 1.0
    cov: np.ndarray | None = None
    Q0: float | None = None
    _chol: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.kind is NoiseKind.TRUNCATED_GAUSSIAN:
            cov = self.sigma**2 * np.eye(self.n_y) if self.cov is None else np.asarray(self.cov, float)
            object.__setattr__(self, "cov", cov)
            if np.any(cov):
                object.__setattr__(self, "_chol", np.linalg.cholesky(cov))
        if self.Q0 is None:
            object.__setattr__(self, "Q0", self._default_bound())

    def _default_bound(self) -> float:
        if self.kind is NoiseKind.TRUNCATED_GAUSSIAN:
            return 5.0 * float(np.sqrt(np.trace(self.cov)))
        if self.kind is NoiseKind.BOUNDED_DISCRETE:
            return self.sigma * np.sqrt(self.n_y) * (1 + 1e-12)
        return WHITE_TRUNC * float(np.linalg.norm(self.weights)) * (1 + 1e-12)

    @property
    def weights(self) -> np.ndarray:
        """Per-coordinate standard deviations of the weighted white noise, sigma / n^s."""
        return self.sigma * np.arange(1, self.n_y + 1, dtype=float) ** (-self.s)

    @property
    def covariance(self) -> np.ndarray:
        """Nominal covariance handed to the solver."""
        if self.kind is NoiseKind.TRUNCATED_GAUSSIAN:
            return self.cov
        if self.kind is NoiseKind.BOUNDED_DISCRETE:
            return self.sigma**2 * np.eye(self.n_y)
        return np.diag(self.weights**2)

    def _draw_block(self, rng):
        n = self.n_y
        if self.sigma == 0.0 and self.kind is not NoiseKind.TRUNCATED_GAUSSIAN:
            return np.zeros((BLOCK, n))
        if self.kind is NoiseKind.BOUNDED_DISCRETE:
            return self.sigma * np.where(rng.random((BLOCK, n)) < 0.5, -1.0, 1.0)
        if self.kind is NoiseKind.WEIGHTED_WHITE:
            g = rng.standard_normal((BLOCK, n))
            bad = np.abs(g) > WHITE_TRUNC
            while np.any(bad):
                g[bad] = rng.standard_normal(int(bad.sum()))
                bad = np.abs(g) > WHITE_TRUNC
            return g * self.weights
        if self._chol is None:
            return np.zeros((BLOCK, n))
        E = rng.standard_normal((BLOCK, n)) @ self._chol.T
        for i in range(BLOCK):
            tries = 0
            while np.linalg.norm(E[i]) > self.Q0:
                tries += 1
                if tries > MAX_REJECTIONS:
                    raise RejectionOverflow("too many consecutive rejections")
                E[i] = self._chol @ rng.standard_normal(n)
        return E

    def sample(self, seed: int, count: int, start: int = 0) -> np.ndarray:
        E = _blocked(self._draw_block, seed, EPS_STREAM, start, count)
        if np.any(np.linalg.norm(E, axis=1) > self.Q0):
            raise BoundViolated("noise sample exceeds Q0")
        return E

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "n_y": self.n_y, "sigma": self.sigma, "s": self.s, "Q0": self.Q0}


def sample_signal(model: SignalModel, rng_seed: int) -> np.ndarray:
    return model.sample(rng_seed, 1)[0]


def sample_noise(model: NoiseModel, rng_seed: int) -> np.ndarray:
    return model.sample(rng_seed, 1)[0]


def weighted_white_problem(A, sigma: float, s: float) -> tuple[ProblemSpec, NoiseModel]:
    """Lift y = A x + white noise by diag(n^-s) so the noise has trace-class covariance."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    noise = NoiseModel(NoiseKind.WEIGHTED_WHITE, A.shape[0], sigma=sigma, s=s)
    lift = np.arange(1, A.shape[0] + 1, dtype=float) ** (-s)
    return ProblemSpec(lift[:, None] * A, noise.covariance), noise


@dataclass(frozen=True)
class Dataset:
    """Training pairs stored as rows: X is m x n_x, Y is m x n_y."""

    X: np.ndarray
    Y: np.ndarray
    seed: int | None = None

    def __len__(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.Y[idx], self.seed)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# seed={self.seed} m={len(self)} n_x={self.X.shape[1]} n_y={self.Y.shape[1]}\n")
        body = matrix_to_csv(np.hstack([self.X, self.Y])).split("\n", 1)[1]
        buf.write(body)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Dataset":
        lines = text.splitlines()
        head = dict(tok.split("=") for tok in lines[0].lstrip("# ").split())
        n_x = int(head["n_x"])
        rows = [[float(v) for v in ln.split(",")] for ln in lines[1:] if ln.strip()]
        D = np.array(rows, dtype=float)
        seed = None if head["seed"] == "None" else int(head["seed"])
        return cls(D[:, :n_x], D[:, n_x:], seed)

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "X": self.X.tolist(), "Y": self.Y.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Dataset":
        d = json.loads(text)
        return cls(np.asarray(d["X"], float), np.asarray(d["Y"], float), d["seed"])


def make_dataset(spec: ProblemSpec, sig: SignalModel, noise: NoiseModel, m: int, seed: int) -> Dataset:
    if m < 1:
        raise ValueError("need at least one sample")
    if sig.n_x != spec.n_x or noise.n_y != spec.n_y:
        raise ValueError("signal/noise dimensions do not match the problem")
    X = sig.sample(seed, m)
    E = noise.sample(seed, m)
    return Dataset(X, X @ spec.A.T + E, seed)

"""Finite-dimensional operator algebra: whitening, spectral norms, FBI diagnostics."""

from __future__ import annotations

import csv
import enum
import io
import itertools
import json
from dataclasses import dataclass, field
from math import comb
from pathlib import Path

import numpy as np

from spbl.errors import (
    Asymmetric,
    DimensionMismatch,
    NonConvergence,
    NotSPD,
    TooLarge,
)

SPD_FLOOR = 1e-10
SYMMETRY_RTOL = 1e-12
FBI_ENUM_CAP = 10**6


def _check_symmetric(S: np.ndarray) -> None:
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {S.shape}")
    scale = max(np.abs(S).max(), np.finfo(float).tiny)
    if np.abs(S - S.T).max() > SYMMETRY_RTOL * scale:
        raise Asymmetric("covariance is not symmetric")


def whiten(sigma_eps, floor: float = SPD_FLOOR) -> np.ndarray:
    """Symmetric inverse square root of an SPD covariance.

    Raises `NotSPD` when an eigenvalue falls below `floor`.
    """
    S = np.atleast_2d(np.asarray(sigma_eps, dtype=float))
    _check_symmetric(S)
    S = 0.5 * (S + S.T)
    evals, evecs = np.linalg.eigh(S)
    if evals.min() < floor:
        raise NotSPD(f"smallest eigenvalue {evals.min():.3e} below floor {floor:.1e}")
    return (evecs / np.sqrt(evals)) @ evecs.T


def operator_norm(M, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest singular value of `M` by power iteration on M^T M.

    The start vector is fixed (all ones plus a deterministic ramp), so the
    result is reproducible bit for bit.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    n = M.shape[1]
    if n == 0 or M.shape[0] == 0 or not np.any(M):
        return 0.0
    v = 1.0 + np.arange(n) / (2.0 * n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = M.T @ (M @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector in the null space; perturb deterministically
            v = np.roll(v, 1) + np.linspace(0.0, 1.0, n)
            v /= np.linalg.norm(v)
            continue
        lam_new = float(v @ w)
        v = w / nw
        if abs(lam_new - lam) <= tol * lam_new:
            return float(np.sqrt(nw))
        lam = lam_new
    raise NonConvergence(f"power iteration did not converge in {max_iter} steps")


@dataclass(frozen=True)
class FBIReport:
    passed: bool
    worst_subset: tuple[int, ...]
    worst_value: float
    n_checked: int
    tol: float


def fbi_check(G, max_card: int, tol: float = 1e-10) -> FBIReport:
    """Smallest singular value of `G` restricted to every column subset of size <= `max_card`."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    rows, cols = G.shape
    if max_card < 1 or max_card > min(rows, cols):
        raise ValueError(f"max_card must lie in [1, {min(rows, cols)}], got {max_card}")
    total = sum(comb(cols, k) for k in range(1, max_card + 1))
    if comb(cols, max_card) > FBI_ENUM_CAP or total > 10 * FBI_ENUM_CAP:
        raise TooLarge(f"{total} column subsets exceed the enumeration cap")

    worst_val = np.inf
    worst_set: tuple[int, ...] = ()
    for k in range(1, max_card + 1):
        subsets = np.array(list(itertools.combinations(range(cols), k)), dtype=int)
        # batched SVD over all subsets of this size
        blocks = np.transpose(G[:, subsets], (1, 0, 2))
        smin = np.linalg.svd(blocks, compute_uv=False)[:, -1]
        i = int(np.argmin(smin))
        if smin[i] < worst_val:
            worst_val = float(smin[i])
            worst_set = tuple(int(c) for c in subsets[i])
    return FBIReport(worst_val > tol, worst_set, worst_val, total, tol)


class ClassTag(str, enum.Enum):
    EXPLICIT = "Explicit"
    PERTURBATION = "Perturbation"
    WAVELET = "Wavelet"


@dataclass(frozen=True)
class SynthesisOperator:
    """A truncated synthesis operator: an n_x x p matrix mapping coefficients to signals."""

    M: np.ndarray
    class_tag: ClassTag = ClassTag.EXPLICIT
    params: tuple[float, ...] = ()
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        if not np.all(np.isfinite(M)):
            raise ValueError("synthesis matrix has non-finite entries")
        M.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "class_tag", ClassTag(self.class_tag))
        object.__setattr__(self, "params", tuple(float(t) for t in self.params))

    @property
    def shape(self) -> tuple[int, int]:
        return self.M.shape

    def norm(self) -> float:
        return operator_norm(self.M)


@dataclass(frozen=True)
class ProblemSpec:
    """Forward operator and noise covariance, with the whitening cached."""

    A: np.ndarray
    sigma_eps: np.ndarray
    floor: float = SPD_FLOOR
    W: np.ndarray = field(init=False, repr=False)
    WA: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        S = np.atleast_2d(np.asarray(self.sigma_eps, dtype=float))
        if S.shape != (A.shape[0], A.shape[0]):
            raise DimensionMismatch(
                f"covariance shape {S.shape} does not match A with {A.shape[0]} rows"
            )
        W = whiten(S, self.floor)
        if np.abs(W @ W @ S - np.eye(len(S))).max() > 1e-8:
            raise NotSPD("covariance too ill-conditioned to whiten accurately")
        for arr in (A, S, W):
            arr.setflags(write=False)
        WA = W @ A
        WA.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "sigma_eps", S)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "WA", WA)

    @property
    def n_y(self) -> int:
        return self.A.shape[0]

    @property
    def n_x(self) -> int:
        return self.A.shape[1]

    @classmethod
    def identity(cls, n: int, sigma: float = 1.0) -> "ProblemSpec":
        return cls(np.eye(n), sigma**2 * np.eye(n))

    def system_matrix(self, B: SynthesisOperator) -> np.ndarray:
        """Whitened composite G = Sigma^{-1/2} A B."""
        if B.shape[0] != self.n_x:
            raise DimensionMismatch(
                f"operator maps into R^{B.shape[0]}, forward operator expects R^{self.n_x}"
            )
        return self.WA @ B.M


def check_compatibility(spec_or_cov, floor: float = SPD_FLOOR) -> bool:
    """Range inclusion Im(A) in Im(Sigma), which in finite dimensions is the SPD floor."""
    S = spec_or_cov.sigma_eps if isinstance(spec_or_cov, ProblemSpec) else spec_or_cov
    S = np.atleast_2d(np.asarray(S, dtype=float))
    try:
        whiten(S, floor)
    except (NotSPD, Asymmetric, DimensionMismatch):
        return False
    return True


# serialization -----------------------------------------------------------


def matrix_to_json(M) -> dict:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return {"rows": M.shape[0], "cols": M.shape[1], "data": M.ravel().tolist()}


def matrix_from_json(obj) -> np.ndarray:
    if isinstance(obj, str):
        obj = json.loads(obj)
    rows, cols = int(obj["rows"]), int(obj["cols"])
    data = np.asarray(obj["data"], dtype=float)
    if data.size != rows * cols:
        raise DimensionMismatch(f"{data.size} entries for a {rows}x{cols} matrix")
    return data.reshape(rows, cols)


def matrix_to_csv(M, path=None) -> str:
    """Row-major CSV; the first line is ``# rows,cols``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    buf = io.StringIO()
    buf.write(f"# {M.shape[0]},{M.shape[1]}\n")
    writer = csv.writer(buf, lineterminator="\n")
    for row in M:
        writer.writerow([repr(float(v)) for v in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def matrix_from_csv(source) -> np.ndarray:
    text = source
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text()
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError("matrix CSV must start with a '# rows,cols' header")
    rows, cols = (int(t) for t in lines[0].lstrip("#").split(","))
    data = [[float(v) for v in r] for r in csv.reader(lines[1:]) if r]
    M = np.array(data, dtype=float).reshape(len(data), -1) if data else np.zeros((0, cols))
    if M.shape != (rows, cols):
        raise DimensionMismatch(f"header says {rows}x{cols}, body is {M.shape}")
    return M

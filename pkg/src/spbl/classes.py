"""Parametrized compact operator classes and the parameter grids searched over them."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from math import prod

import numpy as np

from spbl.errors import ConstraintViolated, SupportOverflow, TooLarge
from spbl.linops import ClassTag, SynthesisOperator, fbi_check, operator_norm

log = logging.getLogger(__name__)

GRID_CAP = 10**5


# parameter grids ---------------------------------------------------------


@dataclass(frozen=True)
class ParamGrid:
    axes: tuple[tuple[float, ...], ...]
    cap: int = GRID_CAP

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(tuple(float(v) for v in ax) for ax in self.axes))

    @property
    def size(self) -> int:
        return prod(len(ax) for ax in self.axes) if self.axes else 0

    def bounds(self) -> list[tuple[float, float]]:
        return [(min(ax), max(ax)) for ax in self.axes]


def enumerate_grid(grid: ParamGrid) -> list[tuple[float, ...]]:
    """All parameter vectors in lexicographic order."""
    if not grid.axes or any(len(ax) == 0 for ax in grid.axes):
        raise TooLarge("grid has an empty axis")
    if grid.size > grid.cap:
        raise TooLarge(f"grid of size {grid.size} exceeds cap {grid.cap}")
    return list(itertools.product(*grid.axes))


# compact perturbations of a reference operator ---------------------------


def upper_entries(block: int) -> tuple[tuple[int, int], ...]:
    return tuple((i, j) for i in range(block) for j in range(i, block))


@dataclass(frozen=True)
class PerturbationClass:
    """B = B0 (I + E T E) with E = diag(c n^{-s}) and T a symmetric block with ||T|| <= 1.

    ``entries`` lists the (row, col) positions of the leading block filled by
    the parameter vector, mirrored to keep T symmetric.
    """

    B0: np.ndarray
    s: float = 1.0
    c: float = 1.0
    block: int = 2
    entries: tuple[tuple[int, int], ...] | None = None
    c_I: float = 1e-3
    max_card: int = 2

    def __post_init__(self):
        B0 = np.atleast_2d(np.asarray(self.B0, dtype=float))
        B0.setflags(write=False)
        object.__setattr__(self, "B0", B0)
        if self.entries is None:
            object.__setattr__(self, "entries", upper_entries(self.block))
        object.__setattr__(self, "entries", tuple((int(i), int(j)) for i, j in self.entries))
        if not 0 < self.c <= 1.0:
            raise ValueError("eigenvalue constant c must lie in (0, 1] so that ||E|| <= 1")
        if self.s <= 0:
            raise ValueError("decay exponent s must be positive")
        if self.block > self.p:
            raise ValueError("perturbation block larger than the coefficient dimension")
        if any(not (0 <= i < self.block and 0 <= j < self.block) for i, j in self.entries):
            raise ValueError("entry outside the perturbation block")
        if operator_norm(B0) > 1.0 + 1e-10:
            raise ValueError("reference operator must satisfy ||B0|| <= 1")

    @property
    def p(self) -> int:
        return self.B0.shape[1]

    @property
    def n_params(self) -> int:
        return len(self.entries)

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.c * np.arange(1, self.p + 1, dtype=float) ** (-self.s)

    def T(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.size}")
        T = np.zeros((self.p, self.p))
        for (i, j), v in zip(self.entries, theta):
            T[i, j] = T[j, i] = v
        return T

    def build(self, theta) -> SynthesisOperator:
        return make_perturbation_B(self, theta)

    def admissible(self, theta) -> bool:
        return True


def make_perturbation_B(cls: PerturbationClass, theta) -> SynthesisOperator:
    T = cls.T(theta)
    tn = np.linalg.norm(T, 2)
    scale = 1.0
    if tn > 1.0:
        scale = 1.0 / tn
        T = T * scale
    lam = cls.eigenvalues
    K = lam[:, None] * T * lam[None, :]
    IK = np.eye(cls.p) + K
    rep = fbi_check(IK, min(cls.max_card, cls.p), tol=cls.c_I)
    if not rep.passed:
        raise ConstraintViolated(
            f"(I + K) restricted to columns {rep.worst_subset} has smallest singular "
            f"value {rep.worst_value:.3e} < c_I = {cls.c_I:.1e}"
        )
    return SynthesisOperator(
        cls.B0 @ IK,
        ClassTag.PERTURBATION,
        tuple(np.asarray(theta, dtype=float).ravel()),
        meta={"projection_scale": scale, "fbi_worst": rep.worst_value},
    )


# mother-wavelet class ----------------------------------------------------


def haar_samples(n: int) -> np.ndarray:
    x = np.arange(n) / n
    return np.where(x < 0.5, 1.0, -1.0)


def mexican_hat_samples(n: int, width: float = 0.08) -> np.ndarray:
    t = (np.arange(n) / n - 0.5) / width
    v = (1.0 - t * t) * np.exp(-0.5 * t * t)
    v -= v.mean()
    return v / np.sqrt(np.mean(v * v))


def db2_samples(n: int, levels: int = 6) -> np.ndarray:
    """Daubechies-2 wavelet by the cascade algorithm, compressed from [0, 3) onto [0, 1)."""
    r3 = np.sqrt(3.0)
    h = np.array([1 + r3, 3 + r3, 3 - r3, 1 - r3]) / (4 * np.sqrt(2.0))
    g = np.array([(-1) ** k * h[3 - k] for k in range(4)])
    R = int(np.ceil(np.log2(max(n, 2)))) + levels
    step = 2**R
    npts = 3 * step + 1
    phi = np.zeros(npts)
    phi[:step] = 1.0
    idx = np.arange(npts)
    for _ in range(R + 20):
        new = np.zeros(npts)
        for k in range(4):
            src = 2 * idx - k * step
            ok = (src >= 0) & (src < npts)
            new[ok] += np.sqrt(2.0) * h[k] * phi[src[ok]]
        phi = new
    psi = np.zeros(npts)
    for k in range(4):
        src = 2 * idx - k * step
        ok = (src >= 0) & (src < npts)
        psi[ok] += np.sqrt(2.0) * g[k] * phi[src[ok]]
    xs = 3.0 * np.arange(n) / n
    v = np.interp(xs, idx / step, psi)
    return v / np.sqrt(np.mean(v * v))


REFERENCE_WAVELETS = {
    "haar": haar_samples,
    "mexican_hat": mexican_hat_samples,
    "db2": db2_samples,
}


@dataclass(frozen=True)
class WaveletClass:
    """Synthesis operators generated by dyadic dilations/translations of a sampled mother wavelet.

    The mother wavelet is sampled at x_n = n h on [0, 1), h = 1/n_x, and the
    default family is psi(theta) = theta_1 haar + theta_2 mexican_hat +
    (1 - theta_1 - theta_2) db2 with theta in the simplex.
    """

    n_x: int = 64
    j_range: tuple[int, int] = (0, 2)
    k_ranges: dict | None = None
    a: float = 0.1
    references: tuple[str, ...] = ("haar", "mexican_hat", "db2")
    trunc_tol: float = 1e-6
    exclude_overflow: bool = False
    d: int = 1

    def __post_init__(self):
        if self.d != 1:
            raise ValueError("only one-dimensional wavelets are supported")
        if self.j_range[0] > self.j_range[1]:
            raise ValueError("empty scale range")
        object.__setattr__(self, "j_range", tuple(int(j) for j in self.j_range))
        for name in self.references:
            if name not in REFERENCE_WAVELETS:
                raise ValueError(f"unknown reference wavelet {name!r}")

    @property
    def h(self) -> float:
        return 1.0 / self.n_x

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.n_x) * self.h

    def reference_samples(self) -> np.ndarray:
        return np.stack([REFERENCE_WAVELETS[r](self.n_x) for r in self.references])

    def index_set(self) -> list[tuple[int, int]]:
        out = []
        for j in range(self.j_range[0], self.j_range[1] + 1):
            if self.k_ranges and j in self.k_ranges:
                ks = list(self.k_ranges[j])
            else:
                ks = range(max(2**j, 1)) if j >= 0 else [0]
            out.extend((j, k) for k in ks)
        return out

    def psi(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).ravel()
        nref = len(self.references)
        if theta.size != nref - 1:
            raise ValueError(f"expected {nref - 1} mixture weights, got {theta.size}")
        w = np.append(theta, 1.0 - theta.sum())
        return w @ self.reference_samples()

    def admissible(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= -1e-12) and theta.sum() <= 1.0 + 1e-12)

    def build(self, theta) -> SynthesisOperator:
        op = wavelet_synthesis(self, self.psi(theta))
        return SynthesisOperator(op.M, ClassTag.WAVELET, tuple(np.ravel(theta)), op.meta)


def _mass_outside(psi, h, j, k) -> float:
    # atom support point for sample n is (k + x_n) / 2^j
    x = np.arange(psi.size) * h
    pos = (k + x) / 2.0**j
    e = psi * psi
    tot = e.sum()
    if tot == 0.0:
        return 0.0
    outside = (pos < 0.0) | (pos >= 1.0)
    return float(e[outside].sum() / tot)


def wavelet_synthesis(cls: WaveletClass, psi) -> SynthesisOperator:
    """Matrix whose columns are sqrt(h) 2^{j/2} psi(2^j x - k) on the grid, (j, k) lexicographic."""
    psi = np.asarray(psi, dtype=float).ravel()
    if psi.size != cls.n_x:
        raise ValueError(f"psi must have {cls.n_x} samples, got {psi.size}")
    x = cls.grid
    cols, kept, dropped = [], [], []
    for j, k in cls.index_set():
        out = _mass_outside(psi, cls.h, j, k)
        if out > cls.trunc_tol:
            if not cls.exclude_overflow:
                raise SupportOverflow(f"atom (j={j}, k={k}) has {out:.2e} of its energy off the grid")
            dropped.append((j, k))
            continue
        t = 2.0**j * x - k
        cols.append(np.sqrt(cls.h) * 2.0 ** (j / 2) * np.interp(t, x, psi, left=0.0, right=0.0))
        kept.append((j, k))
    if dropped:
        log.info("excluded %d atoms exceeding the grid: %s", len(dropped), dropped)
    M = np.column_stack(cols) if cols else np.zeros((cls.n_x, 0))
    return SynthesisOperator(M, ClassTag.WAVELET, (), meta={"atoms": kept, "excluded": dropped})


@dataclass(frozen=True)
class WNormReport:
    value: float
    argmax_xi: float
    last_scale_share: float
    last_shift_share: float


def w_norm_report(psi, cls: WaveletClass, xi_grid: int = 256, j_window: int = 8,
                  k_window: int = 8) -> WNormReport:
    """Truncated estimate of sup_xi sum_{j,k} |psi_hat(2^-j xi + 2 pi k)|^2, square-rooted.

    psi_hat is the Fourier transform of the piecewise-constant function with
    the given samples (a sample-vector DFT evaluated off the bin grid, times
    the zero-order-hold factor). The full double sum is invariant under
    xi -> 2 xi, so xi ranges over +-[pi, 2 pi). The shares of the outermost
    scale and shift in the maximizing sum are returned as truncation
    diagnostics; they do not vanish when the untruncated sum diverges.
    """
    if xi_grid < 64 or j_window < 4 or k_window < 4:
        raise ValueError("need xi_grid >= 64 and windows >= 4")
    psi = np.asarray(psi, dtype=float).ravel()
    if not np.any(psi):
        return WNormReport(0.0, 0.0, 0.0, 0.0)
    h = 1.0 / psi.size
    xn = np.arange(psi.size) * h
    half = np.pi + np.pi * np.arange(xi_grid) / xi_grid
    xi = np.concatenate([-half[::-1], half])
    js = np.arange(-j_window, j_window + 1)
    ks = np.arange(-k_window, k_window + 1)
    # s[j, k, xi]
    s = (2.0 ** (-js.astype(float)))[:, None, None] * xi[None, None, :] + 2 * np.pi * ks[None, :, None]
    flat = s.ravel()
    vals = np.empty(flat.size)
    chunk = 4096
    for i in range(0, flat.size, chunk):
        sv = flat[i:i + chunk]
        dtft = np.exp(-1j * np.outer(sv, xn)) @ psi
        with np.errstate(invalid="ignore", divide="ignore"):
            hold = np.where(np.abs(sv) > 1e-12, (1 - np.exp(-1j * h * sv)) / (1j * sv), h)
        vals[i:i + chunk] = np.abs(dtft * hold) ** 2
    vals = vals.reshape(s.shape)
    total = vals.sum(axis=(0, 1))
    i = int(np.argmax(total))
    tmax = total[i]
    outer_j = (vals[0, :, i].sum() + vals[-1, :, i].sum()) / tmax
    outer_k = (vals[:, 0, i].sum() + vals[:, -1, i].sum()) / tmax
    return WNormReport(float(np.sqrt(tmax)), float(xi[i]), float(outer_j), float(outer_k))


def w_norm_estimate(psi, cls: WaveletClass, xi_grid: int = 256, j_window: int = 8,
                    k_window: int = 8) -> float:
    return w_norm_report(psi, cls, xi_grid, j_window, k_window).value


@dataclass(frozen=True)
class BesselReport:
    passed: bool
    synthesis_norm: float
    w_estimate: float
    bound: float
    slack: float


BESSEL_CONST = (2 * np.pi) ** -1.5


def check_bessel_bound(cls: WaveletClass, psi, slack: float = 0.10, **w_kwargs) -> BesselReport:
    """Compare ||B_psi|| with (2 pi)^{-3/2} ||psi||_W (d = 1)."""
    nrm = operator_norm(wavelet_synthesis(cls, psi).M)
    w = w_norm_estimate(psi, cls, **w_kwargs)
    bound = BESSEL_CONST * w
    return BesselReport(bool(nrm <= bound * (1.0 + slack)), nrm, w, bound, slack)


def frame_lower_bound(M) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] == 0:
        return 0.0
    if M.shape[1] > M.shape[0]:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[-1])


@dataclass(frozen=True)
class InverseWeightClass:
    """B(b) = I / b: the analysis operator is b times the identity."""

    n: int = 1

    def build(self, theta) -> SynthesisOperator:
        (b,) = np.ravel(theta)
        if b <= 0:
            raise ConstraintViolated("weight must be positive")
        return SynthesisOperator(np.eye(self.n) / b, ClassTag.EXPLICIT, (float(b),))

    def admissible(self, theta) -> bool:
        return float(np.ravel(theta)[0]) > 0

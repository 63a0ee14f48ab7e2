"""The inner sparse-coding problem: FISTA with an optimality certificate, plus an exact oracle.

After whitening the data term, the inner problem reads

    J(u) = 1/2 ||G u||^2 - <z, G u> + ||u||_1,    G = W A B,  z = W y,

with W the inverse square root of the noise covariance. ``J(0) = 0``, so the
minimum value is never positive. A point ``u`` is optimal iff
``w = G^T (z - G u)`` lies in the subdifferential of ``||.||_1`` at ``u``,
which is what :func:`certificate_residual` measures.
"""

from __future__ import annotations

import enum
import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from spbl.errors import DimensionMismatch, IllConditioned, TooLarge
from spbl.linops import ProblemSpec, SynthesisOperator, check_compatibility, operator_norm

TOL_ZERO = 1e-10
ORACLE_MAX_P = 14


class StepRule(str, enum.Enum):
    FIXED = "FixedLipschitz"
    BACKTRACKING = "Backtracking"


@dataclass(frozen=True)
class SolverConfig:
    cert_tol: float = 1e-8
    max_iters: int = 50_000
    step_rule: StepRule = StepRule.FIXED
    tol_zero: float = TOL_ZERO
    polish_every: int = 10

    def __post_init__(self):
        if not self.cert_tol > 0:
            raise ValueError("cert_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.polish_every < 0:
            raise ValueError("polish_every must be non-negative (0 disables polishing)")
        object.__setattr__(self, "step_rule", StepRule(self.step_rule))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["step_rule"] = self.step_rule.value
        return d


@dataclass(frozen=True)
class InnerSolution:
    u_hat: np.ndarray
    x_hat: np.ndarray
    w_hat: np.ndarray
    objective: float
    iterations: int
    cert_residual: float
    converged: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "u_hat": self.u_hat.tolist(),
                "x_hat": self.x_hat.tolist(),
                "w_hat": self.w_hat.tolist(),
                "objective": self.objective,
                "iterations": self.iterations,
                "cert_residual": self.cert_residual,
                "converged": self.converged,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "InnerSolution":
        d = json.loads(text)
        return cls(
            u_hat=np.asarray(d["u_hat"], dtype=float),
            x_hat=np.asarray(d["x_hat"], dtype=float),
            w_hat=np.asarray(d["w_hat"], dtype=float),
            objective=float(d["objective"]),
            iterations=int(d["iterations"]),
            cert_residual=float(d["cert_residual"]),
            converged=bool(d["converged"]),
        )


def soft_threshold(v, lam):
    """sign(v) * max(|v| - lam, 0), elementwise."""
    if np.any(np.asarray(lam) < 0):
        raise ValueError("threshold must be non-negative")
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def objective(G, z, u) -> float:
    G = np.atleast_2d(np.asarray(G, dtype=float))
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    Gu = G @ u
    return float(0.5 * Gu @ Gu - z @ Gu + np.abs(u).sum())


def _residual_from_dual(u, w, tol_zero):
    # works columnwise for 2-D inputs
    on = np.abs(u) > tol_zero
    r = np.where(on, np.abs(w - np.sign(u)), np.maximum(np.abs(w) - 1.0, 0.0))
    return r.max(axis=0) if r.size else np.zeros(r.shape[1:])


def certificate_residual(G, z, u, tol_zero: float = TOL_ZERO) -> float:
    """Distance of w = -G^T (G u - z) from the subdifferential of the l1 norm at u."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    u = np.asarray(u, dtype=float)
    w = G.T @ (np.asarray(z, dtype=float) - G @ u)
    return float(_residual_from_dual(u, w, tol_zero))


@dataclass
class BatchResult:
    U: np.ndarray
    objective: np.ndarray
    iterations: np.ndarray
    cert_residual: np.ndarray
    converged: np.ndarray
    trace: list = field(default_factory=list)


def _column_objective(H, C, U):
    return 0.5 * np.einsum("ij,ij->j", U, H @ U) - np.einsum("ij,ij->j", C, U) + np.abs(U).sum(0)


def _polish(H, C, U, tol_zero):
    # exact solve of H_SS u_S = c_S - sign(u_S) for each column's support S;
    # columns whose reduced system is (near) singular keep their iterate
    mask = np.abs(U) > tol_zero
    size = mask.sum(0)
    cols = np.flatnonzero((size > 0) & (size <= np.linalg.matrix_rank(H)))
    if cols.size == 0:
        return None
    p = H.shape[0]
    m = mask[:, cols].T.astype(float)
    Hm = H[None] * m[:, :, None] * m[:, None, :] + np.eye(p)[None] * (1.0 - m)[:, None, :]
    rhs = ((C[:, cols] - np.sign(U[:, cols])) * m.T).T
    # tiny ridge keeps the batched solve defined; bad solutions fail the certificate later
    ridge = 1e-13 * max(np.trace(H) / p, 1.0)
    with np.errstate(all="ignore"):
        try:
            Vc = np.linalg.solve(Hm + ridge * np.eye(p)[None], rhs[:, :, None])[:, :, 0].T
        except np.linalg.LinAlgError:
            return None
    Vc = Vc * m.T
    ok = np.all(np.sign(Vc) == np.sign(U[:, cols]), axis=0) & np.all(np.isfinite(Vc), axis=0)
    V = U.copy()
    V[:, cols[ok]] = Vc[:, ok]
    return V


def fista_batch(G, Z, cfg: SolverConfig = SolverConfig(), L: float | None = None,
                monitor: bool = False) -> BatchResult:
    """FISTA with function-value restart, run independently on every column of `Z`.

    Columns are frozen as soon as their certificate residual drops below
    ``cfg.cert_tol``. Every ``cfg.polish_every`` iterations the stationarity
    system is solved exactly on each column's current support and sign
    pattern; the result replaces the iterate only if it passes the
    certificate, which is then a proof of optimality. When an accelerated
    step would increase the objective, that column's momentum is reset and
    a plain proximal-gradient step is taken from the current iterate, so
    the monitored objective sequence is non-increasing.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    Z = np.asarray(Z, dtype=float)
    squeeze = Z.ndim == 1
    if squeeze:
        Z = Z[:, None]
    if Z.shape[0] != G.shape[0]:
        raise DimensionMismatch(f"G has {G.shape[0]} rows, data has {Z.shape[0]}")
    p, N = G.shape[1], Z.shape[1]
    H = G.T @ G
    C = G.T @ Z
    tz = cfg.tol_zero

    U = np.zeros((p, N))
    out_obj = np.zeros(N)
    out_it = np.zeros(N, dtype=int)
    out_res = _residual_from_dual(U, C, tz)
    done = out_res <= cfg.cert_tol
    trace = []

    if L is None:
        L = operator_norm(G) ** 2 if cfg.step_rule is StepRule.FIXED else None
    if L == 0.0:
        # G = 0: the objective is ||u||_1, minimized at 0 (certificate already holds)
        return BatchResult(U, out_obj, out_it, out_res, done, trace)

    backtrack = cfg.step_rule is StepRule.BACKTRACKING
    Lk = L if L is not None else max(np.trace(H) / max(p, 1), 1e-12) * 1e-2

    act = np.flatnonzero(~done)
    u = U[:, act]
    Hu = np.zeros_like(u)
    y, Hy = u.copy(), Hu.copy()
    c = C[:, act]
    t = np.ones(act.size)
    J = np.zeros(act.size)

    def prox_step(V, HV, cc, Lk):
        # returns (U+, H U+, objective at U+, L)
        while True:
            W = V - (HV - cc) / Lk
            lam = 1.0 / Lk
            Un = W - np.clip(W, -lam, lam)
            HUn = H @ Un
            quad = 0.5 * np.einsum("ij,ij->j", Un, HUn) - np.einsum("ij,ij->j", cc, Un)
            if backtrack:
                D = Un - V
                f_old = 0.5 * np.einsum("ij,ij->j", V, HV) - np.einsum("ij,ij->j", cc, V)
                model = f_old + np.einsum("ij,ij->j", HV - cc, D) + 0.5 * Lk * (D * D).sum(0)
                if not np.all(quad <= model + 1e-12 * (1.0 + np.abs(model))):
                    Lk *= 2.0
                    continue
            return Un, HUn, quad + np.abs(Un).sum(0), Lk

    for k in range(1, cfg.max_iters + 1):
        if act.size == 0:
            break
        un, Hun, Jn, Lk = prox_step(y, Hy, c, Lk)
        bad = Jn > J
        if np.any(bad):
            ub, Hub, Jb, Lk = prox_step(u[:, bad], Hu[:, bad], c[:, bad], Lk)
            un[:, bad], Hun[:, bad], Jn[bad] = ub, Hub, Jb
            t[bad] = 1.0
        if monitor:
            trace.append(Jn.copy())
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / tn
        y = un + beta * (un - u)
        Hy = Hun + beta * (Hun - Hu)
        u, Hu, t, J = un, Hun, tn, Jn

        res = _residual_from_dual(u, c - Hu, tz)
        fin = res <= cfg.cert_tol
        if cfg.polish_every and k % cfg.polish_every == 0 and not np.all(fin):
            cand = _polish(H, c, u, tz)
            if cand is not None:
                Hc = H @ cand
                cres = _residual_from_dual(cand, c - Hc, tz)
                take = (~fin) & (cres <= cfg.cert_tol)
                if np.any(take):
                    u[:, take] = cand[:, take]
                    J[take] = _column_objective(H, c[:, take], cand[:, take])
                    res[take] = cres[take]
                    fin |= take
        if k == cfg.max_iters:
            fin[:] = True
        if np.any(fin):
            idx = act[fin]
            U[:, idx] = u[:, fin]
            out_obj[idx] = J[fin]
            out_it[idx] = k
            out_res[idx] = res[fin]
            done[idx] = res[fin] <= cfg.cert_tol
            keep = ~fin
            act, c, t, J = act[keep], c[:, keep], t[keep], J[keep]
            u, Hu, y, Hy = u[:, keep], Hu[:, keep], y[:, keep], Hy[:, keep]

    if squeeze:
        return BatchResult(U[:, 0], out_obj[:1], out_it[:1], out_res[:1], done[:1], trace)
    return BatchResult(U, out_obj, out_it, out_res, done, trace)


def solve_inner(spec: ProblemSpec, B: SynthesisOperator, y, cfg: SolverConfig = SolverConfig(),
                L: float | None = None) -> InnerSolution:
    if not check_compatibility(spec, spec.floor):
        raise ValueError("noise covariance fails the compatibility floor")
    y = np.asarray(y, dtype=float)
    if y.shape != (spec.n_y,):
        raise DimensionMismatch(f"expected data of length {spec.n_y}, got shape {y.shape}")
    G = spec.system_matrix(B)
    z = spec.W @ y
    res = fista_batch(G, z, cfg, L=L)
    u = res.U
    return InnerSolution(
        u_hat=u,
        x_hat=B.M @ u,
        w_hat=G.T @ (z - G @ u),
        objective=float(res.objective[0]),
        iterations=int(res.iterations[0]),
        cert_residual=float(res.cert_residual[0]),
        converged=bool(res.converged[0]),
    )


def reconstruct(spec: ProblemSpec, B: SynthesisOperator, Y, cfg: SolverConfig = SolverConfig(),
                L: float | None = None):
    """R_B applied to each column of `Y`; returns (X_hat, BatchResult)."""
    Y = np.asarray(Y, dtype=float)
    G = spec.system_matrix(B)
    res = fista_batch(G, spec.W @ Y, cfg, L=L)
    return B.M @ res.U, res


# exact oracle ------------------------------------------------------------


@dataclass
class OracleResult:
    u: np.ndarray
    objective: float
    ties: list
    patterns: list
    singular_supports: list
    n_supports: int
    cert_residual: float

    @property
    def unique(self) -> bool:
        return len(self.ties) == 1


def brute_force_lasso(G, z, dual_slack: float = 1e-10, tie_tol: float = 1e-12,
                      cond_cap: float = 1e12) -> OracleResult:
    """Exact minimizer by enumerating every support and sign pattern.

    For a support S with signs s the stationarity system is
    ``G_S^T G_S u_S = G_S^T z - s``; a solution is kept when its signs match
    ``s`` and the dual variables off the support satisfy ``|w_k| <= 1``.
    Every candidate whose objective is within `tie_tol` of the best is
    returned in ``ties``; on FBI-failing instances the minimizer need not be
    unique and nothing is silently discarded.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    z = np.asarray(z, dtype=float)
    n, p = G.shape
    if p > ORACLE_MAX_P:
        raise TooLarge(f"p = {p} exceeds the enumeration guard ({ORACLE_MAX_P})")
    H = G.T @ G
    c = G.T @ z

    cands, pats, singular = [], [], []
    n_supports = 0
    if np.all(np.abs(c) <= 1.0 + dual_slack):
        cands.append(np.zeros(p))
        pats.append(((), ()))
    for k in range(1, p + 1):
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=k))).T
        for S in itertools.combinations(range(p), k):
            n_supports += 1
            S = list(S)
            if k > n:
                singular.append(tuple(S))
                continue
            HS = H[np.ix_(S, S)]
            if np.linalg.cond(HS) > cond_cap:
                singular.append(tuple(S))
                continue
            US = np.linalg.solve(HS, c[S, None] - signs)
            ok = np.all(np.sign(US) == signs, axis=0)
            if not np.any(ok):
                continue
            US, sg = US[:, ok], signs[:, ok]
            W = c[:, None] - H[:, S] @ US
            off = np.ones(p, dtype=bool)
            off[S] = False
            feas = np.all(np.abs(W[off]) <= 1.0 + dual_slack, axis=0)
            for j in np.flatnonzero(feas):
                u = np.zeros(p)
                u[S] = US[:, j]
                cands.append(u)
                pats.append((tuple(S), tuple(int(v) for v in sg[:, j])))

    if not cands:
        raise RuntimeError("no stationary support pattern found")
    objs = np.array([objective(G, z, u) for u in cands])
    best = int(np.argmin(objs))
    tied = np.flatnonzero(objs <= objs[best] + tie_tol)
    u = cands[best]
    return OracleResult(
        u=u,
        objective=float(objs[best]),
        ties=[cands[i] for i in tied],
        patterns=[pats[i] for i in tied],
        singular_supports=singular,
        n_supports=n_supports,
        cert_residual=certificate_residual(G, z, u),
    )


def solve_analysis(spec: ProblemSpec, B: SynthesisOperator, y, cfg: SolverConfig = SolverConfig(),
                   cond_cap: float = 1e8) -> np.ndarray:
    """Minimize 1/2 ||W (A x - y)||^2 + ||C x||_1 with analysis operator C = B^{-1}.

    Solved in the variable v = C x, so the l1 term is separable.
    """
    M = B.M
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch("analysis form needs a square synthesis matrix")
    if np.linalg.cond(M) > cond_cap:
        raise IllConditioned(f"condition number exceeds {cond_cap:.1e}")
    C = np.linalg.inv(M)
    # W A C^{-1} without forming the inverse of C again
    G = np.linalg.solve(C.T, spec.WA.T).T
    z = spec.W @ np.asarray(y, dtype=float)
    v = fista_batch(G, z, cfg).U
    return np.linalg.solve(C, v)

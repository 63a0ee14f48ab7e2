"""The canonical experiments, each mapping a merged config dict to an ExperimentReport."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dct

import spbl
from spbl.classes import (
    InverseWeightClass,
    ParamGrid,
    PerturbationClass,
    WaveletClass,
    check_bessel_bound,
    enumerate_grid,
    frame_lower_bound,
)
from spbl.errors import ConfigError, ConstraintViolated
from spbl.inner import InnerSolution, SolverConfig, StepRule, certificate_residual, reconstruct, solve_inner
from spbl.learn import _map, learn_dictionary, learn_operator, lex_argmin, sample_losses
from spbl.linops import ProblemSpec, SynthesisOperator, matrix_from_csv, operator_norm
from spbl.oracle1d import Scalar1DModel, analytic_mse, enumerate_mse, outcome_dataset, scalar_problem
from spbl.statgen import (
    Dataset,
    NoiseKind,
    NoiseModel,
    SignalKind,
    SignalModel,
    make_dataset,
    weighted_white_problem,
)
from spbl.xcli.config import Experiment, sub_seed

SCHEMA_VERSION = 1


# report ---------------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _csv(header, rows) -> str:
    def fmt(v):
        if isinstance(v, (bool, np.bool_)):
            return "1" if v else "0"
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        return str(v)

    lines = [",".join(header)] + [",".join(fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    records: list
    summary: dict
    checks: dict
    tables: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    version: str = spbl.__version__

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def body(self) -> dict:
        return _clean({
            "schema_version": SCHEMA_VERSION,
            "version": self.version,
            "experiment": self.experiment,
            "config": self.config,
            "records": self.records,
            "summary": self.summary,
            "checks": self.checks,
            "passed": self.passed,
        })

    def body_json(self) -> str:
        return json.dumps(self.body(), indent=1, sort_keys=True)

    def to_json(self) -> str:
        d = self.body()
        d["wall_clock_s"] = self.wall_clock
        return json.dumps(d, indent=1, sort_keys=True)

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.json"]
        paths[0].write_text(self.to_json())
        for name, text in sorted(self.tables.items()):
            p = out / f"{name}.csv"
            p.write_text(text)
            paths.append(p)
        return paths


# builders -------------------------------------------------------------------


def solver_config(cfg: dict) -> SolverConfig:
    s = cfg["solver"]
    try:
        return SolverConfig(
            cert_tol=float(s["cert_tol"]),
            max_iters=int(s["max_iters"]),
            step_rule=StepRule(s["step_rule"]),
            polish_every=int(s["polish_every"]),
        )
    except (ValueError, KeyError) as e:
        raise ConfigError(f"section 'solver': {e}") from e


def gaussian_blur(n: int, width: float) -> np.ndarray:
    """Symmetric Gaussian blur matrix scaled to unit spectral norm."""
    i = np.arange(n)
    A = np.exp(-0.5 * ((i[:, None] - i[None, :]) / width) ** 2)
    return A / np.linalg.norm(A, 2)


def identity_dct(n: int) -> np.ndarray:
    """[I, DCT-II] / sqrt(2): a union of two orthonormal bases with unit norm."""
    return np.hstack([np.eye(n), dct(np.eye(n), norm="ortho", axis=0)]) / np.sqrt(2.0)


def _matrix(val, what: str) -> np.ndarray:
    if isinstance(val, str):
        return matrix_from_csv(Path(val).read_text())
    try:
        return np.atleast_2d(np.asarray(val, dtype=float))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"field '{what}' is not a matrix") from e


def build_problem(cfg: dict) -> tuple[ProblemSpec, NoiseModel]:
    p = cfg["problem"]
    n = int(cfg["class"].get("n_x", p.get("n_x", 0)))
    fwd = p.get("forward", "identity")
    if fwd == "identity":
        A = np.eye(n)
    elif fwd == "gaussian_blur":
        A = gaussian_blur(n, float(p.get("blur_width", 0.5)))
    else:
        A = _matrix(fwd, "problem.forward")
    if A.shape[1] != n:
        raise ConfigError(f"field 'problem.forward': expected {n} columns, got {A.shape[1]}")
    sigma = float(p.get("sigma", 1.0))
    try:
        kind = NoiseKind(p.get("noise", "TruncatedGaussian"))
    except ValueError as e:
        raise ConfigError(f"field 'problem.noise': {e}") from e
    if kind is NoiseKind.WEIGHTED_WHITE:
        return weighted_white_problem(A, sigma, float(p.get("s", 1.0)))
    noise = NoiseModel(kind, A.shape[0], sigma=sigma)
    return ProblemSpec(A, noise.covariance), noise


def build_class(cfg: dict):
    c = cfg["class"]
    kind = c.get("kind")
    try:
        if kind == "perturbation":
            n = int(cfg["problem"]["n_x"])
            B0 = identity_dct(n) if c["B0"] == "identity_dct" else _matrix(c["B0"], "class.B0")
            return PerturbationClass(B0, s=float(c["s"]), c=float(c["c"]), block=int(c["block"]),
                                     entries=tuple(map(tuple, c["entries"])), c_I=float(c["c_I"]),
                                     max_card=int(c["max_card"]))
        if kind == "wavelet":
            return WaveletClass(n_x=int(c["n_x"]), j_range=tuple(c["j_range"]), a=float(c["a"]),
                                references=tuple(c["references"]))
    except (ValueError, KeyError) as e:
        raise ConfigError(f"section 'class': {e}") from e
    raise ConfigError(f"field 'class.kind': unknown class {kind!r}")


def _signal(cfg, B_true: SynthesisOperator) -> SignalModel:
    d = cfg["data"]
    return SignalModel(SignalKind.SPARSE_SYNTHESIS, B_true.shape[0], sparsity=int(d["sparsity"]),
                       amplitude=float(d["amplitude"]), B_true=B_true)


def _slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# experiments ----------------------------------------------------------------


def run_appendix_c(cfg: dict, jobs: int = 1) -> ExperimentReport:
    scfg = solver_config(cfg)
    sigma = float(cfg["scalar"]["sigma"])
    bs = [float(b) for b in cfg["grid"]["b"]]
    rows, records = [], []
    agree = {}
    for g in cfg["scalar"]["gammas"]:
        a = g * sigma
        spec, _, _ = scalar_problem(a, sigma)
        data = outcome_dataset(a, sigma)
        ana = []
        for b in bs:
            model = Scalar1DModel(a, sigma, b)
            m_a, m_e = analytic_mse(model), enumerate_mse(model)
            losses, _ = sample_losses(spec, InverseWeightClass(1).build(b), data.X, data.Y, scfg)
            m_s = float(losses.mean())
            rows.append((g, b, m_a, m_e, m_s))
            ana.append(m_a)
        i = int(np.argmin(ana))
        j = int(np.argmin(np.abs(np.array(bs) - g)))
        agree[str(g)] = abs(i - j) <= 1
        records.append({"gamma": g, "b_argmin": bs[i], "seed": None})
    arr = np.array(rows)
    gap_e = float(np.max(np.abs(arr[:, 2] - arr[:, 3])))
    gap_s = float(np.max(np.abs(arr[:, 2] - arr[:, 4])))
    chk = cfg["checks"]
    return ExperimentReport(
        Experiment.APPENDIX_C.value, cfg, records,
        {"max_abs_analytic_minus_enum": gap_e, "max_abs_analytic_minus_solver": gap_s,
         "argmin_within_one_step": agree},
        {"oracle_agreement": gap_e <= chk["oracle_tol"], "solver_agreement": gap_s <= chk["solver_tol"],
         "argmin_at_gamma": all(agree.values())},
        tables={"mse": _csv(["gamma", "b", "mse_analytic", "mse_enum", "mse_solver"], rows)},
    )


def run_stability(cfg: dict, jobs: int = 1) -> ExperimentReport:
    scfg = solver_config(cfg)
    spec, noise = build_problem(cfg)
    cls = build_class(cfg)
    master = int(cfg["seeds"]["master"])
    seed = sub_seed(master, "stability/y")
    sig = _signal(cfg, cls.build(cfg["data"]["theta_true"]))
    data = make_dataset(spec, sig, noise, int(cfg["seeds"]["repetitions"]), seed)
    direction = np.asarray(cfg["path"]["direction"], dtype=float)
    ts = [float(t) for t in cfg["path"]["t"]]

    B0 = cls.build(0.0 * direction)
    Y = data.Y.T
    X0, _ = reconstruct(spec, B0, Y, scfg)
    rows = [(0.0, d, seed, 0.0, 0.0) for d in range(Y.shape[1])]
    dB_t, dx_t = [], []
    for t in ts:
        Bt = cls.build(t * direction)
        Xt, _ = reconstruct(spec, Bt, Y, scfg)
        dB = operator_norm(Bt.M - B0.M)
        dx = np.linalg.norm(Xt - X0, axis=0)
        rows += [(t, d, seed, dB, float(v)) for d, v in enumerate(dx)]
        dB_t.append(dB)
        dx_t.append(float(np.sqrt(np.mean(dx**2))))
    dB_t, dx_t = np.array(dB_t), np.array(dx_t)
    ok = (dB_t > 0) & (dx_t > 0)
    slope = _slope(dB_t[ok], dx_t[ok]) if ok.sum() >= 2 else float("nan")
    ratio = dx_t[ok] / np.sqrt(dB_t[ok])
    spread = float(ratio.max() / np.median(ratio)) if ratio.size else float("nan")
    chk = cfg["checks"]
    records = [{"t": r[0], "draw": r[1], "seed": r[2], "delta_B": r[3], "delta_x": r[4]} for r in rows]
    return ExperimentReport(
        Experiment.STABILITY.value, cfg, records,
        {"slope": slope, "ratio_max_over_median": spread,
         "delta_B": dB_t, "delta_x_rms": dx_t, "ratio": ratio},
        {"slope": bool(slope >= chk["min_slope"]), "ratio_bounded": bool(spread <= chk["max_ratio_spread"])},
        tables={"path": _csv(["t", "draw", "seed", "delta_B", "delta_x"], rows)},
    )


def _grid_losses(args):
    spec, cls, theta, held, train, scfg = args
    try:
        B = cls.build(theta)
    except ConstraintViolated:
        return None
    lh, _ = sample_losses(spec, B, held.X, held.Y, scfg)
    lt, _ = sample_losses(spec, B, train.X, train.Y, scfg)
    return float(lh.mean()), float(lh.std(ddof=1) / np.sqrt(lh.size)) if lh.size > 1 else 0.0, lt


def run_sample_complexity(cfg: dict, jobs: int = 1) -> ExperimentReport:
    """Excess held-out risk of the grid ERM as the training size grows.

    L(B*) is surrogated by the smallest held-out risk on the grid, so the
    excess risk of a learned point is its held-out risk minus that minimum.
    """
    scfg = solver_config(cfg)
    spec, noise = build_problem(cfg)
    cls = build_class(cfg)
    master = int(cfg["seeds"]["master"])
    R = int(cfg["seeds"]["repetitions"])
    ms = [int(m) for m in cfg["schedule"]["m"]]
    sig = _signal(cfg, cls.build(cfg["data"]["theta_true"]))
    thetas = enumerate_grid(ParamGrid([tuple(map(float, ax)) for ax in cfg["grid"]["axes"]]))

    held_seed = sub_seed(master, "heldout")
    held = make_dataset(spec, sig, noise, int(cfg["schedule"]["n_mc"]), held_seed)
    keys = [(m, r) for m in ms for r in range(R)]
    seeds = {k: sub_seed(master, f"m={k[0]}/rep={k[1]}") for k in keys}
    sets = [make_dataset(spec, sig, noise, m, seeds[(m, r)]) for m, r in keys]
    train = Dataset(np.vstack([s.X for s in sets]), np.vstack([s.Y for s in sets]))
    off = np.cumsum([0] + [len(s) for s in sets])

    out = _map(_grid_losses, [(spec, cls, t, held, train, scfg) for t in thetas], jobs)
    valid = [i for i, o in enumerate(out) if o is not None]
    if not valid:
        raise ConstraintViolated("every grid point violates the class constraint")
    th = [thetas[i] for i in valid]
    held_risk = np.array([out[i][0] for i in valid])
    held_se = np.array([out[i][1] for i in valid])
    train_loss = np.stack([out[i][2] for i in valid])
    best = lex_argmin(th, list(held_risk))

    rows, records = [], []
    excess = {m: [] for m in ms}
    for j, (m, r) in enumerate(keys):
        risk = train_loss[:, off[j]:off[j + 1]].mean(axis=1)
        b = lex_argmin(th, list(risk))
        ex = float(held_risk[b] - held_risk[best])
        excess[m].append(ex)
        rows.append((m, r, seeds[(m, r)], *th[b], float(risk[b]), float(held_risk[b]), ex))
        records.append({"m": m, "rep": r, "seed": seeds[(m, r)], "theta_hat": th[b],
                        "train_risk": risk[b], "heldout_risk": held_risk[b], "excess": ex})

    med = np.array([np.median(excess[m]) for m in ms])
    mean = np.array([np.mean(excess[m]) for m in ms])
    se = np.array([np.std(excess[m], ddof=1) / np.sqrt(R) if R > 1 else 0.0 for m in ms])
    inversions, bad = [], 0
    for i in range(len(ms) - 1):
        if med[i + 1] > med[i]:
            tol = cfg["checks"]["inversion_se"] * math.hypot(se[i], se[i + 1])
            within = bool(med[i + 1] - med[i] <= tol)
            inversions.append({"m": ms[i + 1], "rise": med[i + 1] - med[i], "tolerance": tol, "within": within})
            bad += 0 if within else 1
    monotone = bad == 0 and len(inversions) <= cfg["checks"]["max_inversions"]

    pos = med > 0
    fit_on = "median"
    if pos.sum() < 2:
        pos, fit_on = mean > 0, "mean"
    series = med if fit_on == "median" else mean
    exponent = _slope(np.array(ms)[pos], series[pos]) if pos.sum() >= 2 else None
    checks = {"median_non_increasing": monotone}
    if exponent is not None:
        checks["decay_exponent_negative"] = exponent < 0

    p_names = [f"theta{i}" for i in range(len(th[0]))]
    surf = [(*t, hr, hs) for t, hr, hs in zip(th, held_risk, held_se)]
    summ = [(m, md, mn, s) for m, md, mn, s in zip(ms, med, mean, se)]
    return ExperimentReport(
        Experiment.SAMPLE_COMPLEXITY.value, cfg, records,
        {"m": ms, "median_excess": med, "mean_excess": mean, "se_excess": se,
         "inversions": inversions, "decay_exponent": exponent, "exponent_fitted_on": fit_on,
         "theta_star_grid": th[best], "heldout_seed": held_seed,
         "rejected": [list(thetas[i]) for i, o in enumerate(out) if o is None]},
        checks,
        tables={
            "excess": _csv(["m", "rep", "seed", *p_names, "train_risk", "heldout_risk", "excess"], rows),
            "summary": _csv(["m", "median_excess", "mean_excess", "se_excess"], summ),
            "heldout_surface": _csv([*p_names, "heldout_risk", "heldout_se"], surf),
        },
    )


def run_dl_compare(cfg: dict, jobs: int = 1) -> ExperimentReport:
    scfg = solver_config(cfg)
    bs = tuple(float(b) for b in cfg["grid"]["b"])
    grid = ParamGrid([bs])
    m = int(cfg["schedule"]["m"][-1])
    seed = sub_seed(int(cfg["seeds"]["master"]), "dl-compare/data")
    cls = InverseWeightClass(1)
    rows, records = [], []
    within = {}
    for sigma in cfg["scalar"]["sigmas"]:
        for g in cfg["scalar"]["gammas"]:
            a = g * sigma
            spec, sig, noise = scalar_problem(a, sigma)
            data = make_dataset(spec, sig, noise, m, seed)
            sup = learn_operator(spec, cls, grid, data, scfg, jobs=jobs).theta_hat[0]
            dl = learn_dictionary(cls, grid, data.X, scfg, jobs=jobs).theta_hat[0]
            near = int(np.argmin(np.abs(np.array(bs) - g)))
            within[f"gamma={g},sigma={sigma}"] = abs(bs.index(sup) - near) <= 1
            rows.append((a, sigma, g, seed, sup, dl))
            records.append({"a": a, "sigma": sigma, "gamma": g, "seed": seed, "b_supervised": sup, "b_dl": dl})
    arr = np.array([(r[2], r[4], r[5]) for r in rows])
    corr = float(np.corrcoef(arr[:, 0], arr[:, 1])[0, 1]) if np.ptp(arr[:, 1]) > 0 else float("nan")
    dl_range = float(np.ptp(arr[:, 2]))
    dl_identical = len({float(v).hex() for v in arr[:, 2]}) == 1
    return ExperimentReport(
        Experiment.DL_COMPARE.value, cfg, records,
        {"correlation": corr, "dl_range": dl_range, "within_one_step": within},
        {"supervised_within_one_step": all(within.values()),
         "correlation": bool(corr >= cfg["checks"]["min_correlation"]),
         "dl_identical": dl_identical},
        tables={"dl": _csv(["a", "sigma", "gamma", "seed", "b_supervised", "b_dl"], rows)},
    )


def simplex_grid(dim: int, step: float) -> list[tuple[float, ...]]:
    """Points of {theta >= 0, sum theta <= 1} with coordinates on multiples of step."""
    n = int(round(1.0 / step))
    if not math.isclose(n * step, 1.0):
        raise ConfigError("field 'grid.step' must divide 1")
    pts = []

    def rec(prefix, left):
        if len(prefix) == dim:
            pts.append(tuple(round(i * step, 12) for i in prefix))
            return
        for i in range(left + 1):
            rec(prefix + [i], left - i)

    rec([], n)
    return pts


def run_wavelet(cfg: dict, jobs: int = 1) -> ExperimentReport:
    scfg = solver_config(cfg)
    cls = build_class(cfg)
    cfg_p = dict(cfg, problem={**cfg["problem"], "n_x": cls.n_x})
    spec, noise = build_problem(cfg_p)
    bcfg = cfg["bessel"]
    dim = len(cls.references) - 1
    theta_true = tuple(float(v) for v in cfg["data"]["theta_true"])
    grid = simplex_grid(dim, float(cfg["grid"]["step"]))
    if not any(np.allclose(theta_true, t) for t in grid):
        raise ConfigError("field 'data.theta_true' must be a grid point")

    rows = []
    admissible = []
    for t in grid:
        psi = cls.psi(t)
        rep = check_bessel_bound(cls, psi, slack=float(bcfg["slack"]), xi_grid=int(bcfg["xi_grid"]),
                                 j_window=int(bcfg["j_window"]), k_window=int(bcfg["k_window"]))
        lb = frame_lower_bound(cls.build(t).M)
        in_psi_a = lb >= cls.a
        rows.append([*t, rep.synthesis_norm, rep.w_estimate, rep.bound, rep.passed, lb, in_psi_a])
        if in_psi_a:
            admissible.append(t)
    if not admissible:
        raise ConstraintViolated(f"no grid member has frame lower bound >= a = {cls.a}")

    seed = sub_seed(int(cfg["seeds"]["master"]), "wavelet/data")
    sig = _signal(cfg, cls.build(theta_true))
    data = make_dataset(spec, sig, noise, int(cfg["schedule"]["m"][-1]), seed)

    # the learning set is the grid intersected with the frame-bound set
    risks = {}
    for t in admissible:
        losses, _ = sample_losses(spec, cls.build(t), data.X, data.Y, scfg)
        risks[t] = (float(losses.mean()), float(losses.std(ddof=1) / np.sqrt(losses.size)))
    ts = list(risks)
    best = ts[lex_argmin(ts, [risks[t][0] for t in ts])]
    for row in rows:
        r = risks.get(tuple(row[:dim]))
        row += [r[0] if r else float("nan"), r[1] if r else float("nan")]
    true_key = next(t for t in grid if np.allclose(t, theta_true))
    r_hat = risks[best][0]
    r_true, se_true = risks.get(true_key, (float("nan"), float("nan")))
    ok_risk = bool(r_hat <= r_true + cfg["checks"]["risk_se"] * se_true)
    names = [f"theta{i}" for i in range(dim)]
    return ExperimentReport(
        Experiment.WAVELET.value, cfg,
        [{"theta": list(row[:dim]), "seed": seed, "bessel_pass": row[dim + 3], "frame_lb": row[dim + 4],
          "risk": row[dim + 6]} for row in rows],
        {"theta_hat": best, "risk_hat": r_hat, "theta_true": theta_true, "risk_true": r_true,
         "se_true": se_true, "n_admissible": len(admissible), "n_grid": len(grid),
         "n_bessel_pass": int(sum(row[dim + 3] for row in rows))},
        {"risk_at_most_true_plus_2se": ok_risk,
         "bessel_every_point": all(row[dim + 3] for row in rows)},
        tables={"surface": _csv([*names, "synthesis_norm", "w_estimate", "bessel_bound", "bessel_pass",
                                 "frame_lower_bound", "in_psi_a", "risk", "risk_se"], rows)},
    )


def run_solve_one(cfg: dict, jobs: int = 1) -> ExperimentReport:
    scfg = solver_config(cfg)
    p = cfg["problem"]
    A = _matrix(p["A"], "problem.A")
    S = _matrix(p["sigma_eps"], "problem.sigma_eps")
    M = _matrix(p["B"], "problem.B")
    y = _matrix(p["y"], "problem.y").ravel()
    spec = ProblemSpec(A, S)
    B = SynthesisOperator(M)
    sol = solve_inner(spec, B, y, scfg)
    text = sol.to_json()
    back = InnerSolution.from_json(text)
    res = certificate_residual(spec.system_matrix(B), spec.W @ y, back.u_hat)
    return ExperimentReport(
        Experiment.SOLVE_ONE.value, cfg, [{"seed": None, "solution": json.loads(text)}],
        {"cert_residual_reloaded": res, "iterations": sol.iterations, "objective": sol.objective},
        {"converged": sol.converged, "certificate_after_reload": bool(res <= scfg.cert_tol)},
        tables={"u_hat": _csv(["index", "u_hat"], list(enumerate(back.u_hat))),
                "x_hat": _csv(["index", "x_hat"], list(enumerate(back.x_hat)))},
    )


RUNNERS = {
    Experiment.APPENDIX_C: run_appendix_c,
    Experiment.STABILITY: run_stability,
    Experiment.SAMPLE_COMPLEXITY: run_sample_complexity,
    Experiment.DL_COMPARE: run_dl_compare,
    Experiment.WAVELET: run_wavelet,
    Experiment.SOLVE_ONE: run_solve_one,
}


def run(cfg: dict, jobs: int = 1) -> ExperimentReport:
    t0 = time.perf_counter()
    rep = RUNNERS[Experiment(cfg["experiment"])](cfg, jobs)
    rep.wall_clock = time.perf_counter() - t0
    return rep

"""Experiment configuration: TOML files merged over per-experiment defaults."""

from __future__ import annotations

import copy
import enum
import hashlib
import json
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from spbl.errors import ConfigError


class Experiment(str, enum.Enum):
    APPENDIX_C = "AppendixC"
    STABILITY = "Stability"
    SAMPLE_COMPLEXITY = "SampleComplexity"
    DL_COMPARE = "DLCompare"
    WAVELET = "Wavelet"
    SOLVE_ONE = "SolveOne"


SUBCOMMANDS = {
    "appendix-c": Experiment.APPENDIX_C,
    "stability": Experiment.STABILITY,
    "sample-complexity": Experiment.SAMPLE_COMPLEXITY,
    "dl-compare": Experiment.DL_COMPARE,
    "wavelet": Experiment.WAVELET,
    "solve-one": Experiment.SOLVE_ONE,
}

_SOLVER = {"cert_tol": 1e-8, "max_iters": 50_000, "step_rule": "FixedLipschitz", "polish_every": 10}

_PERTURBATION_PROBLEM = {
    "n_x": 8,
    "forward": "gaussian_blur",
    "blur_width": 0.5,
    "noise": "TruncatedGaussian",
    "sigma": 0.3,
    "s": 1.0,
}

_PERTURBATION_CLASS = {
    "kind": "perturbation",
    "B0": "identity_dct",
    "s": 1.0,
    "c": 1.0,
    "block": 2,
    "entries": [[0, 0], [0, 1]],
    "c_I": 1e-3,
    "max_card": 2,
}

_AXIS7 = [-0.9, -0.6, -0.3, 0.0, 0.3, 0.6, 0.9]

DEFAULTS = {
    Experiment.APPENDIX_C: {
        "seeds": {"master": 0, "repetitions": 1},
        "solver": _SOLVER,
        "scalar": {"sigma": 1.0, "gammas": [0.25, 0.5, 0.75, 1.0]},
        "grid": {"b": [round(0.05 * i, 10) for i in range(1, 41)]},
        "checks": {"oracle_tol": 1e-12, "solver_tol": 1e-6},
    },
    Experiment.STABILITY: {
        "seeds": {"master": 0, "repetitions": 8},
        "solver": _SOLVER,
        "problem": _PERTURBATION_PROBLEM,
        "class": _PERTURBATION_CLASS,
        "data": {"sparsity": 2, "amplitude": 1.0, "theta_true": [0.3, -0.6]},
        "path": {"direction": [0.8, 0.8], "t": [2.0**-i for i in range(1, 11)]},
        "checks": {"min_slope": 0.45, "max_ratio_spread": 10.0},
    },
    Experiment.SAMPLE_COMPLEXITY: {
        "seeds": {"master": 0, "repetitions": 20},
        "solver": _SOLVER,
        "problem": _PERTURBATION_PROBLEM,
        "class": _PERTURBATION_CLASS,
        "data": {"sparsity": 2, "amplitude": 1.0, "theta_true": [0.3, -0.6]},
        "grid": {"axes": [_AXIS7, _AXIS7]},
        "schedule": {"m": [8, 16, 32, 64, 128, 256], "n_mc": 100_000},
        "checks": {"inversion_se": 2.0, "max_inversions": 1},
    },
    Experiment.DL_COMPARE: {
        "seeds": {"master": 0, "repetitions": 1},
        "solver": _SOLVER,
        "scalar": {"gammas": [0.25, 0.5, 0.75, 1.0], "sigmas": [1.0]},
        "grid": {"b": [round(0.05 * i, 10) for i in range(1, 41)]},
        "schedule": {"m": [10_000]},
        "checks": {"min_correlation": 0.9},
    },
    Experiment.WAVELET: {
        "seeds": {"master": 0, "repetitions": 1},
        "solver": _SOLVER,
        "class": {
            "kind": "wavelet",
            "n_x": 64,
            "j_range": [0, 2],
            "a": 0.1,
            "references": ["haar", "mexican_hat", "db2"],
        },
        "problem": {"forward": "identity", "noise": "TruncatedGaussian", "sigma": 0.05},
        "data": {"sparsity": 2, "amplitude": 1.0, "theta_true": [1.0, 0.0]},
        "grid": {"step": 0.25},
        "schedule": {"m": [200]},
        "bessel": {"slack": 0.10, "xi_grid": 256, "j_window": 8, "k_window": 8},
        "checks": {"risk_se": 2.0},
    },
    Experiment.SOLVE_ONE: {
        "seeds": {"master": 0, "repetitions": 1},
        "solver": _SOLVER,
        "problem": {"A": None, "sigma_eps": None, "B": None, "y": None},
    },
}


def merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}.{key}" if path else key
        if key not in out:
            raise ConfigError(f"unknown field '{where}'")
        if isinstance(out[key], dict) and key != "problem":
            if not isinstance(val, dict):
                raise ConfigError(f"field '{where}' must be a section")
            out[key] = merge(out[key], val, where)
        elif isinstance(out[key], dict):
            out[key] = {**out[key], **val}
        else:
            out[key] = val
    return out


def load_config(path=None, experiment: Experiment | None = None, seed: int | None = None) -> dict:
    """Read a TOML config and merge it over the experiment's defaults.

    Relative file paths inside the config are resolved against the
    config file's directory and stored absolute in the returned dict.
    A ``report.json`` written by a previous run is accepted as well; its
    config echo is used, so a report alone reproduces the run.
    """
    raw: dict = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        base_dir = path.resolve().parent
        try:
            text = path.read_text()
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        if path.suffix == ".json":
            try:
                raw = json.loads(text)["config"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ConfigError(f"{path}: not a report with a config echo ({e})") from e
        else:
            try:
                raw = tomllib.loads(text)
            except tomllib.TOMLDecodeError as e:
                raise ConfigError(f"{path}: {e}") from e
    name = raw.pop("experiment", None)
    if experiment is None:
        if name is None:
            raise ConfigError("field 'experiment' is required")
        try:
            experiment = Experiment(name)
        except ValueError as e:
            raise ConfigError(f"field 'experiment': unknown experiment {name!r}") from e
    elif name is not None and Experiment(name) is not experiment:
        raise ConfigError(f"config is for {name}, not {experiment.value}")
    raw.pop("output", None)
    cfg = merge(DEFAULTS[experiment], raw)
    cfg["experiment"] = experiment.value
    if seed is not None:
        cfg["seeds"]["master"] = int(seed)
    _resolve_paths(cfg, base_dir)
    validate(cfg)
    return cfg


def _resolve_paths(cfg: dict, base: Path) -> None:
    for section in ("problem", "class"):
        sec = cfg.get(section, {})
        for key, val in list(sec.items()):
            if isinstance(val, str) and val.endswith((".csv", ".json")):
                p = Path(val)
                p = p if p.is_absolute() else base / p
                if not p.exists():
                    raise ConfigError(f"field '{section}.{key}': file not found: {p}")
                sec[key] = str(p)


def _increasing(xs) -> bool:
    return all(b > a for a, b in zip(xs, xs[1:]))


def validate(cfg: dict) -> None:
    exp = Experiment(cfg["experiment"])
    if cfg["seeds"]["repetitions"] < 1:
        raise ConfigError("field 'seeds.repetitions' must be at least 1")
    grid = cfg.get("grid", {})
    if "b" in grid:
        if not grid["b"]:
            raise ConfigError("field 'grid.b' must be non-empty")
        if not _increasing(grid["b"]) or min(grid["b"]) <= 0:
            raise ConfigError("field 'grid.b' must be positive and strictly increasing")
    if "axes" in grid:
        if not grid["axes"] or any(len(ax) == 0 for ax in grid["axes"]):
            raise ConfigError("field 'grid.axes' has an empty axis")
        if any(not _increasing(ax) for ax in grid["axes"]):
            raise ConfigError("field 'grid.axes': each axis must be strictly increasing")
    sched = cfg.get("schedule", {})
    if "m" in sched:
        if not sched["m"] or not _increasing(sched["m"]) or min(sched["m"]) < 1:
            raise ConfigError("field 'schedule.m' must be positive and strictly increasing")
    if exp is Experiment.STABILITY:
        t = cfg["path"]["t"]
        if not t or any(v <= 0 for v in t):
            raise ConfigError("field 'path.t' must hold positive step sizes")
    if exp in (Experiment.APPENDIX_C, Experiment.DL_COMPARE):
        if any(not 0 < g <= 1 for g in cfg["scalar"]["gammas"]):
            raise ConfigError("field 'scalar.gammas' must lie in (0, 1]")
    if exp is Experiment.SOLVE_ONE:
        for key in ("A", "sigma_eps", "B", "y"):
            if cfg["problem"].get(key) is None:
                raise ConfigError(f"field 'problem.{key}' is required")


def sub_seed(master: int, label: str) -> int:
    """Child seed for a labelled run: first 8 bytes of sha256("<master>/<label>"), 63 bits.

    Labels are stable strings such as ``"m=64/rep=3"``, so adding
    repetitions or schedule points never changes existing seeds.
    """
    digest = hashlib.sha256(f"{master}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big") & (2**63 - 1)

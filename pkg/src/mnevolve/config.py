"""Experiment configuration: presets, overrides, validation and seeding.

A configuration is a flat JSON object. Every experiment has a ``paper``
preset (the published settings) and a ``desk`` preset (reduced sizes that
run on one CPU core in minutes). Values given in a config file or through
``key=value`` overrides are layered on top of the chosen preset.
"""

import json
import zlib

import numpy as np

__all__ = [
    "EXPERIMENTS",
    "ConfigError",
    "preset",
    "build_config",
    "parse_override",
    "substream",
    "substream_seed",
]

EXPERIMENTS = ("langevin2d", "gpr_bayes", "allen_cahn", "gaussian_check")

SQRT2 = float(np.sqrt(2.0))
SQRT10 = float(np.sqrt(10.0))


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


_COMMON = {
    "experiment": None,
    "scale": "paper",
    "seed": 0,
    "N": 10000,
    "n": 700,
    "epsilon": 1e-2,
    "arch": "mlp",
    "hidden_widths": [128, 128],
    "activation": "softplus",
    "sigma": SQRT2,
    "gamma": 1.0,
    "mask": None,
    "x_cond": [],
    "horizon": SQRT10,
    "time_change": True,
    "rtol": 1e-3,
    "atol": 1e-6,
    "n_residual_times": 101,
    "max_steps": 2000,
    "max_seconds": None,
    "sample": True,
    "M": 10000,
    "n_steps": 2000,
    "alpha": 0.5,
    "mala_steps": 1000,
    "mala_step_size": 0.02,
    "mala_init": "origin",
    "adam_lr": 4e-4,
    "adam_iters": 20000,
    "marginal_grid": [],
    "snapshot_times": [],
    "snapshot_grid": [-3.0, 3.0, -3.0, 3.0, 41],
    # target parameters
    "gpr_m": 20,
    "gpr_noise": 0.1,
    "gpr_dataset": None,
    "ac_d": 20,
    "ac_h": 0.05,
    "ac_beta": 0.3,
    "gauss_mean": [1.0, -0.5],
    "gauss_cov": [[1.0, 0.6], [0.6, 0.5]],
}

_PAPER = {
    "langevin2d": {
        "N": 10000, "n": 800, "epsilon": 1e-6, "activation": "cosine",
        "sigma": 0.1, "mask": [1], "horizon": 30.0, "time_change": False,
        "sample": False, "adam_lr": 1e-2, "adam_iters": 5000,
        "snapshot_times": [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
    },
    "gpr_bayes": {
        "N": 10000, "n": 700, "epsilon": 1e-2, "mala_steps": 1000,
        "mala_step_size": 0.02, "mala_init": "origin", "adam_lr": 4e-4,
        "adam_iters": 20000, "M": 10000,
    },
    "allen_cahn": {
        "N": 10000, "n": 2000, "epsilon": 1e-2, "mala_steps": 4000,
        "mala_step_size": 1e-3, "mala_init": "standard-normal",
        "adam_lr": 1e-4, "adam_iters": 20000, "M": 10000,
    },
    "gaussian_check": {
        "N": 1000, "n": 100, "epsilon": 1e-6, "arch": "quadratic",
        "mala_steps": 500, "mala_step_size": 0.1, "mala_init": "standard-normal",
        "adam_lr": 1e-2, "adam_iters": 3000, "M": 2000,
    },
}

_DESK = {
    "langevin2d": {"N": 2000, "n": 300, "epsilon": 1e-5, "horizon": 10.0, "adam_iters": 1000,
                   "snapshot_times": [0.0, 5.0, 10.0]},
    "gpr_bayes": {"N": 2000, "n": 300, "M": 2000, "adam_iters": 4000, "adam_lr": 1e-3},
    "allen_cahn": {"N": 2000, "n": 500, "M": 2000, "adam_iters": 4000, "adam_lr": 1e-3},
    "gaussian_check": {},
}

_SCHEMA = {
    "experiment": str, "scale": str, "seed": int, "N": int, "n": int,
    "epsilon": float, "arch": str, "hidden_widths": list, "activation": str,
    "sigma": float, "gamma": float, "mask": (list, type(None)), "x_cond": list,
    "horizon": float, "time_change": bool, "rtol": float, "atol": float,
    "n_residual_times": int, "max_steps": int, "max_seconds": (float, int, type(None)),
    "sample": bool, "M": int, "n_steps": int,
    "alpha": float, "mala_steps": int, "mala_step_size": float, "mala_init": str,
    "adam_lr": float, "adam_iters": int, "marginal_grid": list,
    "snapshot_times": list, "snapshot_grid": list, "gpr_m": int,
    "gpr_noise": float, "gpr_dataset": (str, type(None)), "ac_d": int,
    "ac_h": float, "ac_beta": float, "gauss_mean": list, "gauss_cov": list,
}


def preset(experiment, scale="paper"):
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown value {experiment!r}; choose from {list(EXPERIMENTS)}")
    if scale not in ("paper", "desk"):
        raise ConfigError(f"scale: unknown value {scale!r}; choose 'paper' or 'desk'")
    cfg = json.loads(json.dumps(_COMMON))
    cfg.update(json.loads(json.dumps(_PAPER[experiment])))
    if scale == "desk":
        cfg.update(json.loads(json.dumps(_DESK[experiment])))
    cfg["experiment"] = experiment
    cfg["scale"] = scale
    return cfg


def parse_override(text):
    """``key=value`` with ``value`` parsed as JSON, falling back to a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _coerce(key, value):
    kind = _SCHEMA[key]
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, float) and value.is_integer():
        return int(value)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        expected = kind.__name__ if isinstance(kind, type) else " or ".join(k.__name__ for k in kind)
        raise ConfigError(f"{key}: expected {expected}, got {value!r}")
    return value


def _dimension(cfg):
    return {
        "langevin2d": 2,
        "gpr_bayes": 3,
        "allen_cahn": cfg["ac_d"],
        "gaussian_check": len(cfg["gauss_mean"]),
    }[cfg["experiment"]]


def _validate(cfg):
    def need(cond, key, msg):
        if not cond:
            raise ConfigError(f"{key}: {msg}")

    d = _dimension(cfg)
    need(cfg["N"] >= 1, "N", "must be >= 1")
    need(1 <= cfg["n"] <= cfg["N"], "n", f"must lie in [1, N={cfg['N']}]")
    need(cfg["epsilon"] > 0, "epsilon", "must be positive")
    need(cfg["arch"] in ("mlp", "quadratic"), "arch", "must be 'mlp' or 'quadratic'")
    need(cfg["sigma"] > 0, "sigma", "must be positive")
    need(cfg["gamma"] > 0, "gamma", "must be positive")
    need(cfg["horizon"] > 0, "horizon", "must be positive")
    need(cfg["M"] >= 1, "M", "must be >= 1")
    need(cfg["n_steps"] >= 1, "n_steps", "must be >= 1")
    need(0 < cfg["alpha"] < 1, "alpha", "must lie in (0, 1)")
    need(cfg["n_residual_times"] >= 2, "n_residual_times", "must be >= 2")
    need(cfg["max_steps"] >= 1, "max_steps", "must be >= 1")
    need(cfg["max_seconds"] is None or cfg["max_seconds"] > 0, "max_seconds", "must be positive or null")
    mask = cfg["mask"]
    need(all(isinstance(i, int) and 0 <= i < d for i in mask), "mask", f"entries must be indices in [0, {d})")
    need(len(set(mask)) == len(mask) and len(mask) > 0, "mask", "must be a non-empty list of distinct indices")
    need(len(cfg["x_cond"]) in (0, d - len(mask)), "x_cond",
         f"must be empty or have {d - len(mask)} entries (one per unmasked coordinate)")
    if cfg["experiment"] == "langevin2d":
        need(mask == [1], "mask", "the Langevin system diffuses the momentum only ([1])")
        need(not cfg["time_change"], "time_change", "not available with a time-dependent drift")
    if cfg["experiment"] == "gaussian_check":
        cov = np.asarray(cfg["gauss_cov"], dtype=float)
        need(cov.shape == (d, d), "gauss_cov", f"must be {d} x {d}")
    grid = cfg["snapshot_grid"]
    need(len(grid) == 5 and grid[4] >= 2, "snapshot_grid", "must be [q_min, q_max, p_min, p_max, points >= 2]")


def build_config(experiment=None, scale=None, file_values=None, overrides=()):
    """Layer preset < config file < overrides and validate the result."""
    file_values = dict(file_values or {})
    over = dict(overrides)
    experiment = over.get("experiment", file_values.get("experiment", experiment))
    scale = over.get("scale", file_values.get("scale", scale or "paper"))
    if experiment is None:
        raise ConfigError("experiment: required (set it in the config file or with --set experiment=...)")
    cfg = preset(experiment, scale)
    for source in (file_values, over):
        for key, value in source.items():
            if key not in _SCHEMA:
                raise ConfigError(f"{key}: unknown configuration field")
            cfg[key] = _coerce(key, value)
    if cfg["mask"] is None:
        cfg["mask"] = list(range(_dimension(cfg)))
    cfg["mask"] = sorted(cfg["mask"])
    cfg["hidden_widths"] = [int(w) for w in cfg["hidden_widths"]]
    cfg["x_cond"] = [float(v) for v in cfg["x_cond"]]
    _validate(cfg)
    return cfg


def substream_seed(seed, label):
    """Seed material for the stream ``label``; independent across labels."""
    return [int(seed), zlib.crc32(label.encode())]


def substream(seed, label):
    return np.random.default_rng(substream_seed(seed, label))

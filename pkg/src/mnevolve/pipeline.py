"""Stages of an experiment run: fit, evolve, sample, marginal, residuals.

Each stage reads its inputs from earlier artifacts in a run directory and
writes its own, so stages can be run one at a time or chained in memory
with identical results. All randomness is drawn from named substreams of
the configuration seed (see :func:`mnevolve.config.substream`).
"""

import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import substream, substream_seed
from .diffusion_ops import DiffusionSpec, make_plan
from .energy_net import ArchSpec, ModelParams, QuadraticArch, load_params, save_params
from .evolution import AnalyticMNE, CoupledMNE, evolve, residual_curve
from .ode_solver import eval_dense, load_trajectory, save_trajectory
from .preprocess import AdamConfig, MalaConfig, adam_fit, mala_run
from .sampler import (
    ReverseSdeConfig,
    full_points,
    marginal_energy,
    run_reverse,
    weighted_estimate,
)
from .sketch import make_sketch
from .targets import (
    allen_cahn,
    gaussian_target,
    gpr_posterior,
    langevin_system,
    load_gpr_dataset,
    make_gpr_dataset,
    save_gpr_dataset,
)

__all__ = [
    "SCHEMA_VERSION",
    "StageError",
    "Artifacts",
    "make_target",
    "make_arch",
    "make_spec",
    "stage_fit",
    "stage_evolve",
    "stage_sample",
    "stage_marginal",
    "stage_residuals",
    "run_all",
    "write_csv",
    "read_csv",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

FILES = {
    "config": "config.json",
    "dataset": "dataset.csv",
    "collocation": "collocation.csv",
    "params_init": "params_init.npz",
    "loss_history": "loss_history.csv",
    "trajectory": "trajectory.npz",
    "residuals": "residuals.csv",
    "ess": "ess.csv",
    "ensemble": "ensemble.csv",
    "marginal": "marginal.csv",
    "snapshots": "snapshots.csv",
    "summary": "summary.json",
    "timing": "timing.json",
}


class StageError(RuntimeError):
    """A pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage, exc):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage


# -- io ---------------------------------------------------------------------


def write_csv(path, header, rows):
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["%.17g" % v for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(v) for v in row] for row in r if row]
    return header, np.array(rows, dtype=np.float64).reshape(-1, len(header))


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(path, stage):
    if not os.path.exists(path):
        raise FileNotFoundError(f"{stage} needs {os.path.basename(path)}, not found in {os.path.dirname(path) or '.'}")
    return path


# -- problem construction -----------------------------------------------------


def make_target(cfg, dataset=None):
    exp = cfg["experiment"]
    if exp == "gpr_bayes":
        if dataset is None:
            if cfg["gpr_dataset"]:
                dataset = load_gpr_dataset(cfg["gpr_dataset"])
            else:
                dataset = make_gpr_dataset(substream(cfg["seed"], "dataset"), m=cfg["gpr_m"], noise=cfg["gpr_noise"])
        return gpr_posterior(dataset)
    if exp == "allen_cahn":
        return allen_cahn(cfg["ac_d"], cfg["ac_h"], cfg["ac_beta"])
    if exp == "gaussian_check":
        return gaussian_target(cfg["gauss_mean"], cfg["gauss_cov"])
    return langevin_system(cfg["sigma"]).initial


def make_arch(cfg, d):
    if cfg["arch"] == "quadratic":
        return QuadraticArch(d)
    return ArchSpec(d, tuple(cfg["hidden_widths"]), cfg["activation"])


def make_spec(cfg, d):
    if cfg["experiment"] == "langevin2d":
        return langevin_system(cfg["sigma"]).spec
    return DiffusionSpec(d, tuple(cfg["mask"]), cfg["sigma"], "ou", cfg["gamma"])


def _x_cond(cfg, spec):
    if not spec.complement:
        return None
    if not cfg["x_cond"]:
        raise ValueError("x_cond must give a value for every unmasked coordinate when sampling")
    return cfg["x_cond"]


def _dim(cfg):
    return {"langevin2d": 2, "gpr_bayes": 3, "allen_cahn": cfg["ac_d"],
            "gaussian_check": len(cfg["gauss_mean"])}[cfg["experiment"]]


def _system(cfg, spec, arch, X_init):
    sketch = make_sketch(cfg["N"], cfg["n"], substream_seed(cfg["seed"], "sketch"))
    if cfg["experiment"] == "langevin2d":
        return CoupledMNE(spec, arch, sketch, cfg["epsilon"])
    plan = make_plan(X_init, substream(cfg["seed"], "colloc_z"))
    return AnalyticMNE(spec, arch, sketch, cfg["epsilon"], plan, time_change=cfg["time_change"])


@dataclass
class Artifacts:
    """In-memory results of the stages run so far."""

    cfg: dict
    target: object = None
    X_init: np.ndarray = None
    params: ModelParams = None
    loss_history: np.ndarray = None
    trajectory: object = None
    residuals: np.ndarray = None
    ensemble: object = None
    ess_curve: np.ndarray = None
    summary: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)


def _summary_base(cfg, stage):
    return {"schema_version": SCHEMA_VERSION, "package_version": __version__,
            "stage": stage, "experiment": cfg["experiment"], "config": cfg}


# -- stages -------------------------------------------------------------------


def stage_fit(cfg, out=None):
    """Collocation points and the score-matching surrogate."""
    t_start = time.perf_counter()
    art = Artifacts(cfg)
    d = _dim(cfg)
    art.target = make_target(cfg)
    arch = make_arch(cfg, d)
    stats = {}
    if cfg["experiment"] == "langevin2d":
        # exact draws from the Gaussian initial density
        init = art.target
        Z = substream(cfg["seed"], "initial_points").standard_normal((cfg["N"], d))
        art.X_init = init.mean + Z @ np.linalg.cholesky(init.cov).T
    else:
        mala = MalaConfig(cfg["mala_steps"], cfg["mala_step_size"], cfg["N"], cfg["mala_init"],
                          substream_seed(cfg["seed"], "mala"))
        art.X_init, stats = mala_run(art.target, mala, return_stats=True)
    adam = AdamConfig(cfg["adam_lr"], cfg["adam_iters"], seed=substream_seed(cfg["seed"], "adam_init"))
    art.params, art.loss_history = adam_fit(art.target, art.X_init, arch, adam)
    art.summary = {
        "n_params": int(arch.n_params),
        "final_loss": float(art.loss_history[-1]),
        "initial_loss": float(art.loss_history[0]),
        "mala_acceptance_rate": stats.get("acceptance_rate"),
    }
    art.timing["fit"] = time.perf_counter() - t_start
    if out is not None:
        os.makedirs(out, exist_ok=True)
        _write_json(os.path.join(out, FILES["config"]), cfg)
        if cfg["experiment"] == "gpr_bayes":
            save_gpr_dataset(art.target.dataset, os.path.join(out, FILES["dataset"]))
        write_csv(os.path.join(out, FILES["collocation"]), [f"x{i}" for i in range(d)], art.X_init)
        save_params(art.params, os.path.join(out, FILES["params_init"]))
        hist = np.column_stack([np.arange(art.loss_history.size), art.loss_history])
        write_csv(os.path.join(out, FILES["loss_history"]), ["iteration", "loss"], hist)
        _write_json(os.path.join(out, "summary_fit.json"), {**_summary_base(cfg, "fit"), **art.summary})
    return art


def _load_fit(cfg, src):
    art = Artifacts(cfg)
    dataset = None
    if cfg["experiment"] == "gpr_bayes":
        dataset = load_gpr_dataset(_require(os.path.join(src, FILES["dataset"]), "evolve"))
    art.target = make_target(cfg, dataset)
    art.X_init = read_csv(_require(os.path.join(src, FILES["collocation"]), "evolve"))[1]
    art.params = load_params(_require(os.path.join(src, FILES["params_init"]), "evolve"))
    return art


def _output_times(cfg):
    return np.linspace(0.0, cfg["horizon"], cfg["n_residual_times"])


def _snapshots(cfg, art, system):
    """Gridded ``u_theta(t)`` for the Langevin experiment."""
    q0, q1, p0, p1, k = cfg["snapshot_grid"]
    q, p = np.meshgrid(np.linspace(q0, q1, int(k)), np.linspace(p0, p1, int(k)), indexing="ij")
    pts = np.column_stack([q.ravel(), p.ravel()])
    rows = []
    for t in cfg["snapshot_times"]:
        if not art.trajectory.t0 <= t <= art.trajectory.t1:
            raise ValueError(f"snapshot time {t} outside [0, {cfg['horizon']}]")
        theta = system.theta(eval_dense(art.trajectory, t))
        u = art.params.arch.eval_u(theta, pts)
        rows.append(np.column_stack([np.full(len(u), t), pts, u]))
    return np.vstack(rows) if rows else np.zeros((0, 4))


def stage_evolve(cfg, art=None, out=None, src=None):
    """Integrate the MNE over ``[0, horizon]`` and record residual diagnostics."""
    if art is None:
        art = _load_fit(cfg, src)
    t_start = time.perf_counter()
    d = _dim(cfg)
    spec = make_spec(cfg, d)
    system = _system(cfg, spec, art.params.arch, art.X_init)
    if isinstance(system, CoupledMNE):
        y0 = system.initial_state(art.params.theta, art.X_init)
    else:
        y0 = system.initial_state(art.params.theta)
    result = evolve(system, y0, 0.0, cfg["horizon"], cfg["rtol"], cfg["atol"], max_steps=cfg["max_steps"],
                    max_seconds=cfg["max_seconds"])
    art.trajectory = result.trajectory
    art.trajectory.meta = {"experiment": cfg["experiment"], "time_change": cfg["time_change"],
                           "n_params": int(art.params.arch.n_params), "coupled": isinstance(system, CoupledMNE)}
    art.residuals = residual_curve(system, art.trajectory, _output_times(cfg))
    art.summary.update({
        "lambda": system.reg.lam,
        "n_accepted": art.trajectory.n_accepted,
        "n_rejected": art.trajectory.n_rejected,
        "n_rhs": art.trajectory.n_rhs,
        "gram_inflations": system.n_inflations,
        "max_residual": float(np.max(art.residuals[:, 1])),
        "mean_residual": float(np.mean(art.residuals[:, 1])),
    })
    snaps = _snapshots(cfg, art, system) if cfg["experiment"] == "langevin2d" else None
    art.timing["evolve"] = time.perf_counter() - t_start
    if out is not None:
        os.makedirs(out, exist_ok=True)
        save_trajectory(art.trajectory, os.path.join(out, FILES["trajectory"]))
        write_csv(os.path.join(out, FILES["residuals"]), ["time", "rms_residual"], art.residuals)
        if snaps is not None:
            write_csv(os.path.join(out, FILES["snapshots"]), ["time", "q", "p", "u"], snaps)
        _write_json(os.path.join(out, "summary_evolve.json"), {**_summary_base(cfg, "evolve"), **art.summary})
    return art


def _load_trajectory(cfg, art, src, stage):
    if art is None:
        art = _load_fit(cfg, src)
    if art.trajectory is None:
        art.trajectory = load_trajectory(_require(os.path.join(src, FILES["trajectory"]), stage))
    return art


def stage_sample(cfg, art=None, out=None, src=None):
    """Weighted reverse diffusion and the final unbiasing step."""
    if cfg["experiment"] == "langevin2d":
        raise ValueError("the Langevin experiment has no sampling stage")
    art = _load_trajectory(cfg, art, src, "sample")
    t_start = time.perf_counter()
    d = _dim(cfg)
    spec = make_spec(cfg, d)
    rcfg = ReverseSdeConfig(cfg["horizon"], cfg["n_steps"], cfg["M"], cfg["alpha"])
    ens, curve = run_reverse(rcfg, spec, art.trajectory, art.params.arch, art.target,
                             x_cond=_x_cond(cfg, spec), rng=substream(cfg["seed"], "sde_noise"))
    art.ensemble, art.ess_curve = ens, curve
    mean = weighted_estimate(ens, lambda X: X, spec)
    art.summary.update({
        "final_ess_per_sample": float(curve[-1, 1]),
        "min_ess_per_sample": float(np.min(curve[:, 1])),
        "n_resamples": ens.n_resamples,
        "weighted_mean": [float(v) for v in mean],
    })
    art.timing["sample"] = time.perf_counter() - t_start
    if out is not None:
        os.makedirs(out, exist_ok=True)
        write_csv(os.path.join(out, FILES["ess"]), ["s", "ess_per_sample"], curve)
        X = full_points(ens, spec)
        write_csv(os.path.join(out, FILES["ensemble"]), [f"x{i}" for i in range(d)] + ["logw"],
                  np.column_stack([X, ens.logw]))
        _write_json(os.path.join(out, "summary_sample.json"), {**_summary_base(cfg, "sample"), **art.summary})
    return art


def stage_marginal(cfg, art=None, out=None, src=None, grid=None):
    """Energy of the marginal on the unmasked coordinates at grid points."""
    art = _load_trajectory(cfg, art, src, "marginal")
    d = _dim(cfg)
    spec = make_spec(cfg, d)
    grid = np.asarray(cfg["marginal_grid"] if grid is None else grid, dtype=np.float64)
    k = len(spec.complement)
    if grid.size == 0:
        raise ValueError("marginal_grid is empty")
    grid = grid.reshape(-1, k)
    theta = eval_dense(art.trajectory, cfg["horizon"])
    u = marginal_energy(ModelParams(art.params.arch, theta), spec, grid)
    rows = np.column_stack([grid, u])
    if out is not None:
        os.makedirs(out, exist_ok=True)
        header = [f"x{i}" for i in spec.complement] + ["energy"]
        write_csv(os.path.join(out, FILES["marginal"]), header, rows)
    return rows


def stage_residuals(cfg, art=None, out=None, src=None):
    """Recompute the residual curve from a saved trajectory."""
    art = _load_trajectory(cfg, art, src, "residuals")
    spec = make_spec(cfg, _dim(cfg))
    system = _system(cfg, spec, art.params.arch, art.X_init)
    art.residuals = residual_curve(system, art.trajectory, _output_times(cfg))
    if out is not None:
        os.makedirs(out, exist_ok=True)
        write_csv(os.path.join(out, FILES["residuals"]), ["time", "rms_residual"], art.residuals)
    return art.residuals


def _staged(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (FileNotFoundError, KeyboardInterrupt):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def run_all(cfg, out=None):
    """fit -> evolve -> sample (when enabled) -> marginal (when a grid is given)."""
    art = _staged("fit", stage_fit, cfg, out)
    art = _staged("evolve", stage_evolve, cfg, art, out)
    if cfg["sample"] and cfg["experiment"] != "langevin2d":
        art = _staged("sample", stage_sample, cfg, art, out)
    if cfg["marginal_grid"]:
        _staged("marginal", stage_marginal, cfg, art, out)
    if out is not None:
        _write_json(os.path.join(out, FILES["summary"]), {**_summary_base(cfg, "run"), **art.summary})
        _write_json(os.path.join(out, FILES["timing"]), {k: round(v, 3) for k, v in art.timing.items()})
    return art

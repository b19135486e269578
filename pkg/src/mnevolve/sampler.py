"""Weighted reverse-diffusion sampling from an evolved energy trajectory.

The forward trajectory ``theta(s)``, ``s in [0, s_f]``, is read through its
dense interpolant. Reverse time ``s`` corresponds to forward time
``s_f - s``. Each sample carries a log-weight ``w`` with

    dw/ds = <grad_theta u(Y), theta_dot(s_f - s)> - (s_f - s) A[u](Y),

the pointwise residual of the forward evolution at ``(Y, s_f - s)``, so an
exact evolution leaves the weights untouched. This sign makes the weighted
ensemble at reverse time ``s`` follow ``exp(-u_theta(s_f - s))`` (a
Feynman-Kac argument on the reverse SDE); the opposite sign biases weighted
averages whenever the residual is nonzero. The derivative term is taken through ``theta``
at the frozen point ``Y`` (no Ito correction). The model at forward time 0
is the fitted surrogate; the final correction
``w += u_theta(0)(Y) - u(Y)`` swaps it for the true target energy.

Samples are rows: ``Y`` is ``(M, |S|)``. Coordinates outside the mask are
fixed to ``x_cond`` and never touched.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .diffusion_ops import operator_from_derivs
from .energy_net import ModelParams
from .ode_solver import eval_dense, eval_dense_deriv

__all__ = [
    "ReverseSdeConfig",
    "WeightedEnsemble",
    "full_points",
    "init_ensemble",
    "reverse_step",
    "finalize",
    "ess",
    "resample",
    "run_reverse",
    "marginal_energy",
    "weighted_estimate",
    "NonFiniteStateError",
]

log = logging.getLogger(__name__)


class NonFiniteStateError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ReverseSdeConfig:
    s_f: float = float(np.sqrt(10.0))
    n_steps: int = 2000
    M: int = 10000
    alpha: float = 0.5
    seed: object = 0

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.s_f > 0:
            raise ValueError("s_f must be positive")

    @property
    def ds(self):
        return self.s_f / self.n_steps


@dataclass
class WeightedEnsemble:
    Y: np.ndarray
    logw: np.ndarray
    x_cond: np.ndarray = field(default_factory=lambda: np.zeros(0))
    s: float = 0.0
    n_resamples: int = 0

    @property
    def M(self):
        return self.Y.shape[0]


def full_points(ens, spec):
    """Assemble ``(M, d)`` points from the diffused block and the fixed values."""
    X = np.empty((ens.M, spec.d))
    X[:, list(spec.mask)] = ens.Y
    if spec.complement:
        X[:, list(spec.complement)] = ens.x_cond
    return X


def _x_cond(spec, x_cond):
    x_cond = np.zeros(0) if x_cond is None else np.atleast_1d(np.asarray(x_cond, dtype=np.float64))
    if x_cond.shape != (len(spec.complement),):
        raise ValueError(f"conditioning values must have length {len(spec.complement)}, got {x_cond.shape}")
    return x_cond


def init_ensemble(cfg, spec, m_final, x_cond=None, rng=None, Y0=None):
    """Draw ``Y0 ~ N(0, sigma^2/(2 gamma) I)`` and weight against ``u_theta(s_f)``.

    ``w(0) = gamma/sigma^2 |Y0|^2 - u_theta(s_f)(Y0, x_cond)``.
    """
    x_cond = _x_cond(spec, x_cond)
    k = len(spec.mask)
    if Y0 is None:
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        Y0 = np.sqrt(spec.sigma**2 / (2 * spec.gamma)) * rng.standard_normal((cfg.M, k))
    Y0 = np.array(Y0, dtype=np.float64).reshape(-1, k)
    ens = WeightedEnsemble(Y0, np.zeros(Y0.shape[0]), x_cond, 0.0)
    u = m_final.arch.eval_u(m_final.theta, full_points(ens, spec))
    ens.logw = spec.gamma / spec.sigma**2 * np.sum(Y0 * Y0, axis=1) - u
    return ens


def reverse_step(ens, cfg, spec, traj, arch, k, rng):
    """One Euler-Maruyama step for ``Y`` and explicit Euler step for ``w``.

    Step ``k`` goes from ``s = k ds`` to ``(k+1) ds``.
    """
    ds = cfg.ds
    s = k * ds
    if s + ds > cfg.s_f * (1 + 1e-12):
        raise ValueError(f"step {k} runs past s_f")
    fwd = cfg.s_f - s
    theta = eval_dense(traj, fwd)
    theta_dot = eval_dense_deriv(traj, fwd)
    X = full_points(ens, spec)
    grad, lap = arch.grad_and_lap(theta, X, spec.mask)
    A_vals = operator_from_derivs(spec, X, 0.5 * fwd * fwd, grad, lap)
    wdot = arch.dir_param_deriv(theta, theta_dot, X) - fwd * A_vals
    drift = fwd * (spec.gamma * ens.Y - spec.sigma**2 * grad[:, list(spec.mask)])
    noise = np.sqrt(ds * fwd) * spec.sigma * rng.standard_normal(ens.Y.shape)
    Y = ens.Y + ds * drift + noise
    logw = ens.logw + ds * wdot
    bad = ~(np.all(np.isfinite(Y), axis=1) & np.isfinite(logw))
    if bad.any():
        raise NonFiniteStateError(f"non-finite state for sample {int(np.argmax(bad))} at step {k}")
    return replace(ens, Y=Y, logw=logw, s=s + ds)


def finalize(ens, spec, target, m0):
    """Replace the surrogate ``u_theta(0)`` by the target energy in the weights."""
    X = full_points(ens, spec)
    u_model = m0.arch.eval_u(m0.theta, X)
    u_true = target.energy(X)
    with np.errstate(invalid="ignore"):
        logw = ens.logw + u_model - u_true
    logw = np.where(np.isnan(logw), -np.inf, logw)
    return replace(ens, logw=logw)


def _normalized(logw):
    logw = np.asarray(logw, dtype=np.float64)
    top = np.max(logw)
    if not np.isfinite(top):
        raise ValueError("all weights are zero (log-weights all -inf)")
    w = np.exp(logw - top)
    return w / w.sum()


def ess(logw):
    """``(sum e^w)^2 / sum e^{2w}``, computed with a max shift."""
    w = _normalized(logw)
    return float(1.0 / np.sum(w * w))


def resample(ens, cfg, rng):
    """Systematic resampling; log-weights reset to zero."""
    w = _normalized(ens.logw)
    M = ens.M
    positions = (rng.uniform() + np.arange(M)) / M
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, positions, side="right")
    return replace(ens, Y=ens.Y[idx].copy(), logw=np.zeros(M), n_resamples=ens.n_resamples + 1)


def run_reverse(cfg, spec, traj, arch, target=None, x_cond=None, rng=None, Y0=None):
    """Full reverse pass with ESS monitoring and the final correction.

    Returns ``(ensemble, ess_curve)`` where ``ess_curve`` rows are
    ``(s, ess / M)``; the last row is after the final correction when a
    target is given.
    """
    if traj.t0 > 0 or traj.t1 < cfg.s_f * (1 - 1e-12):
        raise ValueError(f"trajectory covers [{traj.t0}, {traj.t1}], need [0, {cfg.s_f}]")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    m_final = ModelParams(arch, eval_dense(traj, cfg.s_f))
    ens = init_ensemble(cfg, spec, m_final, x_cond, rng, Y0)
    curve = [(0.0, ess(ens.logw) / ens.M)]
    for k in range(cfg.n_steps):
        ens = reverse_step(ens, cfg, spec, traj, arch, k, rng)
        e = ess(ens.logw)
        if e < cfg.alpha * ens.M:
            log.info("ESS %.1f below %.2f M at s=%.4f; resampling", e, cfg.alpha, ens.s)
            ens = resample(ens, cfg, rng)
        curve.append((ens.s, e / ens.M))
    ens.s = cfg.s_f
    if target is not None:
        ens = finalize(ens, spec, target, ModelParams(arch, eval_dense(traj, 0.0)))
        curve.append((cfg.s_f, ess(ens.logw) / ens.M))
    return ens, np.array(curve)


def marginal_energy(m_final, spec, x_sprime):
    """``u_theta(s_f)(0, x_S')``: the energy of the marginal on the unmasked block.

    ``x_sprime`` is ``(K, |S'|)`` or a single point; returns ``(K,)``.
    """
    comp = list(spec.complement)
    if not comp:
        raise ValueError("nothing to marginalize onto: the mask covers every coordinate")
    x_sprime = np.asarray(x_sprime, dtype=np.float64).reshape(-1, len(comp))
    X = np.zeros((x_sprime.shape[0], spec.d))
    X[:, comp] = x_sprime
    return m_final.arch.eval_u(m_final.theta, X)


def weighted_estimate(ens, f, spec=None):
    """``sum e^{w_i} f_i / sum e^{w_i}``.

    ``f`` is either an array of per-sample values (``(M,)`` or ``(M, k)``)
    or a callable applied to the full points (needs ``spec``) or to ``Y``.
    """
    w = _normalized(ens.logw)
    if callable(f):
        vals = f(full_points(ens, spec) if spec is not None else ens.Y)
    else:
        vals = f
    vals = np.asarray(vals, dtype=np.float64)
    if vals.shape[0] != ens.M:
        raise ValueError(f"observable has {vals.shape[0]} values for {ens.M} samples")
    return np.tensordot(w, vals, axes=(0, 0))

"""Initial collocation points (MALA) and the score-matching surrogate fit (Adam)."""

import logging
from dataclasses import dataclass

import numpy as np

from .energy_net import ModelParams, check_points, init_params

__all__ = ["MalaConfig", "AdamConfig", "Adam", "mala_log_accept", "mala_run", "adam_fit"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MalaConfig:
    n_steps: int = 1000
    step_size: float = 0.02
    n_walkers: int = 10000
    init: str = "origin"
    seed: object = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("MALA step size must be positive")
        if self.init not in ("origin", "standard-normal"):
            raise ValueError(f"unknown walker initialization {self.init!r}")


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    n_iters: int = 5000
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    seed: object = 0

    def __post_init__(self):
        if not (self.learning_rate > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps_hat > 0):
            raise ValueError("invalid Adam hyperparameters")


def mala_log_accept(x, x_new, u, u_new, g, g_new, h):
    """Log Metropolis-Hastings ratio for ``x' = x - h grad u(x) + sqrt(2h) xi``."""
    fwd = x_new - x + h * g
    bwd = x - x_new + h * g_new
    log_q_fwd = -np.sum(fwd * fwd, axis=-1) / (4 * h)
    log_q_bwd = -np.sum(bwd * bwd, axis=-1) / (4 * h)
    return (u - u_new) + log_q_bwd - log_q_fwd


def mala_run(target, cfg, X0=None, return_stats=False):
    """Run independent MALA walkers and return their final positions ``(W, d)``.

    Proposals with infinite or NaN energy are rejected.
    """
    rng = np.random.default_rng(cfg.seed)
    if X0 is not None:
        X = np.array(X0, dtype=np.float64)
    elif cfg.init == "origin":
        X = np.zeros((cfg.n_walkers, target.d))
    else:
        X = rng.standard_normal((cfg.n_walkers, target.d))
    h = cfg.step_size
    u, g = target.energy_and_score(X)
    n_accept = 0
    for _ in range(cfg.n_steps):
        X_new = X - h * g + np.sqrt(2 * h) * rng.standard_normal(X.shape)
        u_new, g_new = target.energy_and_score(X_new)
        with np.errstate(invalid="ignore"):
            log_a = mala_log_accept(X, X_new, u, u_new, g, g_new, h)
        log_a = np.where(np.isfinite(u_new) & np.all(np.isfinite(g_new), axis=1), log_a, -np.inf)
        accept = np.log(rng.uniform(size=X.shape[0])) < log_a
        X[accept] = X_new[accept]
        u[accept] = u_new[accept]
        g[accept] = g_new[accept]
        n_accept += int(accept.sum())
    rate = n_accept / max(1, cfg.n_steps * X.shape[0])
    log.info("MALA finished: %d walkers, acceptance %.3f", X.shape[0], rate)
    if return_stats:
        return X, {"acceptance_rate": rate}
    return X


class Adam:
    """Bias-corrected Adam on a flat parameter vector."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps_hat=1e-8):
        self.lr, self.beta1, self.beta2, self.eps_hat = lr, beta1, beta2, eps_hat
        self.m = self.v = None
        self.t = 0

    def step(self, theta, grad):
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps_hat)


def adam_fit(target, X, arch, cfg, init=None):
    """Full-batch Adam on the score-matching loss ``mean |grad u_theta - grad u|^2``.

    Returns ``(params, loss_history)``; the history has ``n_iters + 1``
    entries, the last being the loss at the returned parameters.
    """
    X = check_points(X, arch.input_dim)
    scores = target.score(X)
    if not np.all(np.isfinite(scores)):
        raise ValueError("target score is not finite at every collocation point")
    m = init if init is not None else init_params(arch, cfg.seed)
    theta = m.theta.copy()
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps_hat)
    history = np.empty(cfg.n_iters + 1)
    for it in range(cfg.n_iters):
        loss, grad = arch.score_loss_grad(theta, X, scores)
        if not np.isfinite(loss):
            raise FloatingPointError(f"score-matching loss became non-finite at iteration {it}")
        history[it] = loss
        theta = opt.step(theta, grad)
        if it % 1000 == 0:
            log.debug("adam iter %d loss %.4e", it, loss)
    history[-1] = arch.score_loss_grad(theta, X, scores)[0]
    return ModelParams(arch, theta), history

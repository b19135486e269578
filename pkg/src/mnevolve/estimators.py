"""Scikit-learn style front end for fit-evolve-sample on a target density.

>>> from mnevolve.targets import gaussian_target
>>> est = MNESampler(gaussian_target([0.0], [[1.0]]), arch="quadratic", n_sketch=20,
...                  epsilon=1e-6, adam_iters=500, adam_lr=1e-2)
>>> est = est.fit(np.random.default_rng(0).standard_normal((200, 1)))
>>> X, logw = est.sample(100, n_steps=100)
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .config import substream, substream_seed
from .diffusion_ops import DiffusionSpec, make_plan
from .energy_net import ArchSpec, ModelParams, QuadraticArch
from .evolution import AnalyticMNE, evolve
from .ode_solver import eval_dense
from .preprocess import AdamConfig, MalaConfig, adam_fit, mala_run
from .sampler import ReverseSdeConfig, full_points, marginal_energy, run_reverse
from .sketch import make_sketch

__all__ = ["MNESampler"]


class MNESampler(BaseEstimator):
    """Fit a surrogate energy, evolve it under an OU process, sample by reversal.

    Parameters
    ----------
    target : TargetDensity
        Energy ``u`` with ``energy`` and ``score`` methods.
    arch : {"mlp", "quadratic"}
        Model family for ``u_theta``.
    hidden_widths, activation
        MLP architecture (ignored for ``arch="quadratic"``).
    epsilon : float
        Pointwise tolerance; the ridge parameter is ``N * epsilon**2``.
    n_sketch : int
        Sketch dimension ``n`` (clipped to the number of points).
    mask : sequence of int or None
        Diffused coordinates; ``None`` diffuses all of them.
    random_state : int
        Seed for every random stage.

    Attributes
    ----------
    params_init_ : ModelParams
        Fitted surrogate at ``s = 0``.
    trajectory_ : DenseTrajectory
        Evolved parameters on ``[0, s_f]``.
    loss_history_ : ndarray
        Score-matching loss per Adam iteration.
    step_residuals_ : ndarray of shape (K, 2)
        RMS residual at accepted integrator steps.
    """

    def __init__(self, target=None, *, arch="mlp", hidden_widths=(128, 128), activation="softplus",
                 epsilon=1e-2, n_sketch=500, sigma=float(np.sqrt(2.0)), gamma=1.0, mask=None,
                 s_f=float(np.sqrt(10.0)), rtol=1e-3, atol=1e-6, n_points=2000, mala_steps=1000,
                 mala_step_size=0.02, mala_init="origin", adam_lr=1e-3, adam_iters=5000,
                 random_state=0):
        self.target = target
        self.arch = arch
        self.hidden_widths = hidden_widths
        self.activation = activation
        self.epsilon = epsilon
        self.n_sketch = n_sketch
        self.sigma = sigma
        self.gamma = gamma
        self.mask = mask
        self.s_f = s_f
        self.rtol = rtol
        self.atol = atol
        self.n_points = n_points
        self.mala_steps = mala_steps
        self.mala_step_size = mala_step_size
        self.mala_init = mala_init
        self.adam_lr = adam_lr
        self.adam_iters = adam_iters
        self.random_state = random_state

    def _spec(self, d):
        mask = tuple(range(d)) if self.mask is None else tuple(self.mask)
        return DiffusionSpec(d, mask, self.sigma, "ou", self.gamma)

    def fit(self, X=None, y=None):
        """Fit the surrogate and evolve it.

        Parameters
        ----------
        X : array-like of shape (N, d), optional
            Initial collocation points. Drawn by MALA from the target when
            omitted.
        y : ignored
        """
        if self.target is None:
            raise ValueError("a target density is required")
        d = self.target.d
        seed = self.random_state
        if X is None:
            mala = MalaConfig(self.mala_steps, self.mala_step_size, self.n_points, self.mala_init,
                              substream_seed(seed, "mala"))
            X = mala_run(self.target, mala)
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != d:
            raise ValueError(f"X has {X.shape[1]} features, target has dimension {d}")
        if self.arch == "quadratic":
            model = QuadraticArch(d)
        elif self.arch == "mlp":
            model = ArchSpec(d, tuple(self.hidden_widths), self.activation)
        else:
            raise ValueError(f"unknown arch {self.arch!r}")
        adam = AdamConfig(self.adam_lr, self.adam_iters, seed=substream_seed(seed, "adam_init"))
        self.params_init_, self.loss_history_ = adam_fit(self.target, X, model, adam)
        spec = self._spec(d)
        N = X.shape[0]
        sketch = make_sketch(N, min(self.n_sketch, N), substream_seed(seed, "sketch"))
        plan = make_plan(X, substream(seed, "colloc_z"))
        self.system_ = AnalyticMNE(spec, model, sketch, self.epsilon, plan)
        result = evolve(self.system_, self.params_init_.theta, 0.0, self.s_f, self.rtol, self.atol)
        self.trajectory_ = result.trajectory
        self.step_residuals_ = result.step_residuals
        self.spec_ = spec
        self.X_init_ = X
        self.n_features_in_ = d
        return self

    def energy(self, X, s=0.0):
        """``u_theta(s)`` at ``X``; ``s = 0`` is the fitted surrogate."""
        check_is_fitted(self, "trajectory_")
        X = check_array(X, dtype=np.float64)
        theta = eval_dense(self.trajectory_, s)
        return self.params_init_.arch.eval_u(theta, X)

    def score_samples(self, X):
        """Unnormalized surrogate log-density ``-u_theta(0)(X)``."""
        return -self.energy(X, 0.0)

    def sample(self, n_samples, *, x_cond=None, n_steps=2000, alpha=0.5, random_state=None):
        """Weighted samples ``(X, logw)`` from reverse diffusion plus unbiasing."""
        check_is_fitted(self, "trajectory_")
        seed = self.random_state if random_state is None else random_state
        cfg = ReverseSdeConfig(self.s_f, n_steps, int(n_samples), alpha)
        ens, self.ess_curve_ = run_reverse(cfg, self.spec_, self.trajectory_, self.params_init_.arch,
                                           self.target, x_cond=x_cond, rng=substream(seed, "sde_noise"))
        return full_points(ens, self.spec_), ens.logw

    def marginal_energy(self, x_sprime):
        """Energy of the marginal over the unmasked coordinates."""
        check_is_fitted(self, "trajectory_")
        theta = eval_dense(self.trajectory_, self.s_f)
        return marginal_energy(ModelParams(self.params_init_.arch, theta), self.spec_, x_sprime)

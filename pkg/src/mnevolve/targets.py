"""Target energies ``u(x)`` (``rho ~ exp(-u)``) with analytic scores.

Every target evaluates batches: ``energy(X)`` maps ``(N, d) -> (N,)`` and
``score(X)`` maps ``(N, d) -> (N, d)``; here "score" means ``grad u``.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .diffusion_ops import DiffusionSpec, langevin_force

__all__ = [
    "TargetDensity",
    "GaussianTarget",
    "AllenCahnTarget",
    "GprPosteriorTarget",
    "GprDataset",
    "gaussian_target",
    "allen_cahn",
    "gpr_posterior",
    "make_gpr_dataset",
    "save_gpr_dataset",
    "load_gpr_dataset",
    "langevin_system",
]


class TargetDensity:
    d = None
    label = "target"

    def energy(self, X):
        raise NotImplementedError

    def score(self, X):
        raise NotImplementedError

    def energy_and_score(self, X):
        return self.energy(X), self.score(X)

    def _points(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[-1] != self.d:
            raise ValueError(f"points have dimension {X.shape[-1]}, target expects {self.d}")
        return X


class GaussianTarget(TargetDensity):
    """``u(x) = (x - mean)^T cov^{-1} (x - mean) / 2``."""

    label = "gaussian"

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        self.cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
        self.d = self.mean.size
        if self.cov.shape != (self.d, self.d):
            raise ValueError("covariance shape does not match mean")
        try:
            L = np.linalg.cholesky(0.5 * (self.cov + self.cov.T))
        except np.linalg.LinAlgError:
            raise ValueError("covariance is not positive definite") from None
        Linv = np.linalg.inv(L)
        self.precision = Linv.T @ Linv

    def energy(self, X):
        D = self._points(X) - self.mean
        return 0.5 * np.einsum("ni,ij,nj->n", D, self.precision, D)

    def score(self, X):
        return (self._points(X) - self.mean) @ self.precision


def gaussian_target(mean, cov):
    return GaussianTarget(mean, cov)


class AllenCahnTarget(TargetDensity):
    """Periodic 1-d Allen-Cahn field energy.

    ``u(x) = beta/2 * sum_i [((x_{i+1} - x_i)/h)^2 + (x_i^2 - 1)^2]`` with
    ``x_d = x_0``.
    """

    label = "allen_cahn"

    def __init__(self, d=20, h=1 / 20, beta=0.3):
        if d < 2 or not h > 0 or not beta > 0:
            raise ValueError("need d >= 2, h > 0, beta > 0")
        self.d, self.h, self.beta = int(d), float(h), float(beta)

    def energy(self, X):
        X = self._points(X)
        diff = (np.roll(X, -1, axis=1) - X) / self.h
        return 0.5 * self.beta * np.sum(diff**2 + (X**2 - 1) ** 2, axis=1)

    def score(self, X):
        X = self._points(X)
        lap = (np.roll(X, -1, axis=1) - 2 * X + np.roll(X, 1, axis=1)) / self.h**2
        return self.beta * (-lap + 2 * X * (X**2 - 1))


def allen_cahn(d=20, h=1 / 20, beta=0.3):
    return AllenCahnTarget(d, h, beta)


@dataclass(frozen=True, eq=False)
class GprDataset:
    t: np.ndarray
    y: np.ndarray

    @property
    def m(self):
        return self.t.size


def make_gpr_dataset(rng, m=20, noise=0.1):
    """``y_i = sin(5 t_i) + N(0, noise^2)`` with ``t_i ~ U[-1, 1]``."""
    if m < 1:
        raise ValueError("need at least one observation")
    t = rng.uniform(-1.0, 1.0, size=m)
    y = np.sin(5 * t) + noise * rng.standard_normal(m)
    return GprDataset(t, y)


def save_gpr_dataset(ds, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "y"])
        for ti, yi in zip(ds.t, ds.y):
            w.writerow([f"{ti:.17g}", f"{yi:.17g}"])


def load_gpr_dataset(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return GprDataset(data[:, 0].copy(), data[:, 1].copy())


class GprPosteriorTarget(TargetDensity):
    """Posterior over GP hyperparameters ``x = (log alpha, log rho, log noise)``.

    Kernel ``alpha^2 exp(-(t - t')^2 / rho^2)`` plus ``noise^2 I``; standard
    normal prior. Energy (constants dropped)::

        u = 1/2 logdet K + 1/2 y^T K^{-1} y + 1/2 |x|^2

    Points where ``K`` fails to factor get energy ``+inf`` and a NaN score.
    """

    label = "gpr_bayes"
    d = 3

    def __init__(self, dataset):
        self.dataset = dataset
        dt = dataset.t[:, None] - dataset.t[None, :]
        self._sqdist = dt * dt

    def _kernels(self, X):
        a2 = np.exp(2 * X[:, 0])[:, None, None]
        inv_r2 = np.exp(-2 * X[:, 1])[:, None, None]
        s2 = np.exp(2 * X[:, 2])
        E = np.exp(-self._sqdist[None] * inv_r2)
        Kf = a2 * E
        K = Kf + s2[:, None, None] * np.eye(self.dataset.m)
        return K, Kf, inv_r2, s2

    def energy_and_score(self, X):
        X = self._points(X)
        n, m = X.shape[0], self.dataset.m
        K, Kf, inv_r2, s2 = self._kernels(X)
        u = np.full(n, np.inf)
        g = np.full((n, 3), np.nan)
        ok = np.ones(n, dtype=bool)
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            # locate the points that fail to factor
            L = np.empty_like(K)
            for i in range(n):
                try:
                    L[i] = np.linalg.cholesky(K[i])
                except np.linalg.LinAlgError:
                    ok[i] = False
        if not ok.any():
            return u, g
        L = L[ok]
        eye = np.broadcast_to(np.eye(m), L.shape)
        Linv = np.linalg.solve(L, eye)
        Kinv = np.swapaxes(Linv, 1, 2) @ Linv
        alpha = Kinv @ self.dataset.y
        logdet = 2 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
        x = X[ok]
        u[ok] = 0.5 * logdet + 0.5 * alpha @ self.dataset.y + 0.5 * np.sum(x * x, axis=1)
        dK = (
            2 * Kf[ok],
            2 * Kf[ok] * self._sqdist[None] * inv_r2[ok],
            2 * s2[ok][:, None, None] * np.eye(m),
        )
        for k, D in enumerate(dK):
            tr = np.einsum("nij,nji->n", Kinv, D)
            quad = np.einsum("ni,nij,nj->n", alpha, D, alpha)
            g[ok, k] = 0.5 * tr - 0.5 * quad + x[:, k]
        return u, g

    def energy(self, X):
        return self.energy_and_score(X)[0]

    def score(self, X):
        return self.energy_and_score(X)[1]


def gpr_posterior(dataset=None, seed=0, m=20):
    """GPR hyperparameter posterior; the dataset is drawn from ``seed`` if not given."""
    if dataset is None:
        dataset = make_gpr_dataset(np.random.default_rng(seed), m=m)
    return GprPosteriorTarget(dataset)


@dataclass(frozen=True)
class LangevinSystem:
    spec: DiffusionSpec
    initial: GaussianTarget
    force: object = field(default=langevin_force)


def langevin_system(sigma=0.1):
    """Forced underdamped Langevin system in ``x = (q, p)``.

    Noise acts on ``p`` only. The initial energy is
    ``((q - 1)^2 + p^2) / 2``, i.e. a unit Gaussian centred at ``(1, 0)``.
    """
    spec = DiffusionSpec(d=2, mask=(1,), sigma=sigma, drift="langevin")
    return LangevinSystem(spec, GaussianTarget([1.0, 0.0], np.eye(2)))

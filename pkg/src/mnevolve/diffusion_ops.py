"""Energy-form Fokker-Planck operator for masked diffusions.

For ``dX = b_t(X) dt + sigma chi_S * dB`` the energy ``u = -log rho`` obeys

    du/dt = A_t[u] = div b_t - b_t . grad u + sigma^2/2 lap_S u - sigma^2/2 |grad_S u|^2

Drifts come from a closed catalog, each with an analytic divergence:

* ``"ou"``: ``b(x) = -gamma chi_S * x`` (divergence ``-gamma |S|``)
* ``"langevin"``: ``x = (q, p)``, ``b = (p, -q + exp(-q^2/2) cos t)``
  (divergence-free)

Mask indices are zero-based.
"""

from dataclasses import dataclass

import numpy as np

from .energy_net import check_points

__all__ = [
    "DiffusionSpec",
    "CollocationPlan",
    "ou_drift",
    "langevin_drift",
    "langevin_force",
    "drift",
    "apply_operator",
    "time_changed_operator",
    "colloc_analytic",
    "colloc_coupled_rhs",
    "make_plan",
]

DRIFTS = ("ou", "langevin")


@dataclass(frozen=True)
class DiffusionSpec:
    d: int
    mask: tuple
    sigma: float
    drift: str = "ou"
    gamma: float = 1.0

    def __post_init__(self):
        mask = tuple(sorted({int(i) for i in self.mask}))
        object.__setattr__(self, "mask", mask)
        if self.drift not in DRIFTS:
            raise ValueError(f"unknown drift {self.drift!r}; registered drifts are {DRIFTS}")
        if any(i < 0 or i >= self.d for i in mask):
            raise ValueError(f"mask {mask} out of range for d={self.d}")
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError("sigma must be finite and non-negative")
        if self.sigma > 0 and not mask:
            raise ValueError("a diffusion needs a non-empty mask")
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError("gamma must be finite and positive")
        if self.drift == "langevin" and self.d != 2:
            raise ValueError("the Langevin drift is defined for x = (q, p) in 2 dimensions")

    @property
    def chi(self):
        chi = np.zeros(self.d)
        chi[list(self.mask)] = 1.0
        return chi

    @property
    def complement(self):
        return tuple(i for i in range(self.d) if i not in self.mask)

    @property
    def time_independent(self):
        return self.drift == "ou"

    def to_dict(self):
        return {"d": self.d, "mask": list(self.mask), "sigma": self.sigma,
                "drift": self.drift, "gamma": self.gamma}


def ou_drift(X, gamma, S):
    """OU drift ``-gamma chi_S * x`` and its divergence ``-gamma |S|``."""
    X = np.asarray(X, dtype=np.float64)
    chi = np.zeros(X.shape[-1])
    chi[list(S)] = 1.0
    return -gamma * chi * X, -gamma * float(chi.sum())


def langevin_force(q, t):
    return -q + np.exp(-0.5 * q * q) * np.cos(t)


def langevin_drift(X, t):
    """Underdamped Langevin field ``(p, F_t(q))``; divergence is zero."""
    X = np.asarray(X, dtype=np.float64)
    B = np.empty_like(X)
    B[..., 0] = X[..., 1]
    B[..., 1] = langevin_force(X[..., 0], t)
    return B, 0.0


def drift(spec, X, t):
    if spec.drift == "ou":
        return ou_drift(X, spec.gamma, spec.mask)
    return langevin_drift(X, t)


def operator_values(spec, arch, theta, X, t):
    """``A_t[u_theta](X)`` from raw ``(arch, theta)``; no input validation."""
    grad, lap = arch.grad_and_lap(theta, X, spec.mask)
    return operator_from_derivs(spec, X, t, grad, lap)


def operator_from_derivs(spec, X, t, grad, lap):
    b, div = drift(spec, X, t)
    gS = grad[:, list(spec.mask)]
    half_s2 = 0.5 * spec.sigma**2
    return div - np.einsum("nd,nd->n", b, grad) + half_s2 * lap - half_s2 * np.einsum("ns,ns->n", gS, gS)


def apply_operator(spec, m, X, t):
    X = check_points(X, spec.d)
    if m.d != spec.d:
        raise ValueError(f"model dimension {m.d} does not match diffusion dimension {spec.d}")
    return operator_values(spec, m.arch, m.theta, X, t)


def time_changed_operator(spec, m, X, s):
    """``s * A[u](X)`` at ``t = s^2/2`` (right-hand side in the variable ``s``)."""
    if not spec.time_independent:
        raise ValueError("the time change is only defined here for time-independent drifts")
    return s * apply_operator(spec, m, X, 0.5 * s * s)


@dataclass(frozen=True, eq=False)
class CollocationPlan:
    X_init: np.ndarray
    Z: np.ndarray
    mode: str = "analytic-ou"

    def __post_init__(self):
        if self.mode not in ("analytic-ou", "coupled-ode"):
            raise ValueError(f"unknown collocation mode {self.mode!r}")
        if self.X_init.shape != self.Z.shape:
            raise ValueError("X_init and Z must have the same shape")
        if not (np.all(np.isfinite(self.X_init)) and np.all(np.isfinite(self.Z))):
            raise ValueError("collocation plan contains non-finite values")
        self.X_init.flags.writeable = False
        self.Z.flags.writeable = False

    @property
    def N(self):
        return self.X_init.shape[0]


def make_plan(X_init, rng, mode="analytic-ou"):
    X_init = np.array(X_init, dtype=np.float64)
    return CollocationPlan(X_init, rng.standard_normal(X_init.shape), mode)


def colloc_analytic(plan, spec, t):
    """Smooth OU trajectory of the collocation points at forward time ``t``."""
    if plan.mode != "analytic-ou":
        raise ValueError("plan is not in analytic-ou mode")
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    g = spec.gamma
    decay = np.exp(-g * t)
    spread = np.sqrt(spec.sigma**2 / (2 * g) * -np.expm1(-2 * g * t))
    X = plan.X_init.copy()
    S = list(spec.mask)
    X[:, S] = decay * plan.X_init[:, S] + spread * plan.Z[:, S]
    return X


def transport_velocity(spec, arch, theta, X, t):
    b, _ = drift(spec, X, t)
    return b + 0.5 * spec.sigma**2 * spec.chi * arch.grad_x(theta, X)


def colloc_coupled_rhs(spec, m, X, t):
    """Transport velocity ``b_t(X) + sigma^2/2 chi_S * grad u_theta(X)``, shape ``(N, d)``."""
    X = check_points(X, spec.d)
    return transport_velocity(spec, m.arch, m.theta, X, t)

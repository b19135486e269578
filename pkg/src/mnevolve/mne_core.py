"""Parameter velocity from the (sketched) ridge-regression tangent projection.

Given the parameter Jacobian ``Phi`` (``p x N``) at the collocation points
and the target time derivatives ``A`` (length ``N``), the velocity is

    theta_dot = argmin ||Phi^T theta_dot - A||^2 + lam ||theta_dot||^2
              = Phi (Phi^T Phi + lam I_N)^{-1} A

and its sketched counterpart replaces ``Phi`` by ``Phi Omega^T`` and ``A`` by
``Omega A``, so only an ``n x n`` Gram matrix is ever factored.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import numkit
from .sketch import apply, apply_rows

__all__ = [
    "RegSpec",
    "MneRhsReport",
    "reg_param",
    "theta_dot_sketched",
    "theta_dot_unsketched",
    "residual_rms",
    "GramFactorizationError",
]

log = logging.getLogger(__name__)

LAMBDA_INFLATION = 10.0


class GramFactorizationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class RegSpec:
    epsilon: float
    N: int

    @property
    def lam(self):
        return self.N * self.epsilon**2


@dataclass
class MneRhsReport:
    theta_dot: np.ndarray
    residual_rms: float
    gram_condition_estimate: float
    lam_used: float = float("nan")
    inflated: bool = False
    time: float = float("nan")


def reg_param(N, eps):
    """Regularization ``lam = N * eps**2`` for a pointwise tolerance ``eps``."""
    if not eps > 0:
        raise ValueError(f"epsilon must be positive, got {eps}")
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    return RegSpec(float(eps), int(N))


def _ridge_solve(G, rhs, lam):
    """Solve ``(G + lam I) c = rhs``; retry once with inflated ``lam``.

    Returns ``(c, condition estimate, lam actually used, inflated flag)``.
    """
    k = G.shape[0]
    for attempt in range(2):
        try:
            F = numkit.cholesky(G + lam * np.eye(k))
        except numkit.NotPositiveDefiniteError as exc:
            if attempt:
                raise GramFactorizationError(
                    f"Gram factorization failed at pivot {exc.pivot} with lambda={lam:.3e}"
                ) from exc
            log.warning("Gram factorization failed (pivot %d, lambda=%.3e); retrying with lambda x %g",
                        exc.pivot, lam, LAMBDA_INFLATION)
            lam *= LAMBDA_INFLATION
            continue
        diag = np.diag(F.L)
        cond = float((diag.max() / diag.min()) ** 2)
        return numkit.solve_spd(F, rhs), cond, lam, attempt > 0
    raise AssertionError("unreachable")


def _check(Phi, A_vals):
    Phi = np.asarray(Phi, dtype=np.float64)
    A_vals = np.asarray(A_vals, dtype=np.float64)
    if Phi.ndim != 2 or A_vals.shape != (Phi.shape[1],):
        raise ValueError(f"dimension mismatch: Phi {Phi.shape}, A {A_vals.shape}")
    return Phi, A_vals


def theta_dot_sketched(Phi, A_vals, s, reg, *, report=False):
    """``Phi_s (Phi_s^T Phi_s + lam I_n)^{-1} Omega A`` with ``Phi_s = Phi Omega^T``."""
    Phi, A_vals = _check(Phi, A_vals)
    if s.N != Phi.shape[1]:
        raise ValueError(f"sketch built for N={s.N}, Jacobian has N={Phi.shape[1]}")
    return theta_dot_presketched(apply_rows(s, Phi), apply(s, A_vals), reg.lam, report=report)


def theta_dot_presketched(Phi_s, A_s, lam, *, report=False):
    """Ridge velocity from already-sketched ``Phi_s`` (``p x n``) and ``A_s``."""
    G = Phi_s.T @ Phi_s
    c, cond, lam_used, inflated = _ridge_solve(G, A_s, lam)
    theta_dot = Phi_s @ c
    if report:
        return theta_dot, cond, lam_used, inflated
    return theta_dot


def theta_dot_unsketched(Phi, A_vals, reg):
    """``Phi (Phi^T Phi + lam I_N)^{-1} A`` (oracle path, ``N x N`` solve)."""
    Phi, A_vals = _check(Phi, A_vals)
    c = _ridge_solve(Phi.T @ Phi, A_vals, reg.lam)[0]
    return Phi @ c


def residual_rms(Phi, theta_dot, A_vals):
    """``||Phi^T theta_dot - A|| / sqrt(N)``."""
    Phi, A_vals = _check(Phi, A_vals)
    theta_dot = np.asarray(theta_dot, dtype=np.float64)
    if theta_dot.shape != (Phi.shape[0],):
        raise ValueError(f"theta_dot has shape {theta_dot.shape}, expected ({Phi.shape[0]},)")
    return float(np.linalg.norm(Phi.T @ theta_dot - A_vals) / np.sqrt(Phi.shape[1]))

"""MNE right-hand sides for diffusion problems and their integration.

Two collocation mechanisms are supported:

* :class:`AnalyticMNE` -- collocation points follow the closed-form OU
  trajectory, so the ODE state is ``theta`` alone. With ``time_change=True``
  the independent variable is ``s`` with ``t = s^2/2`` and the evolved
  operator is ``s * A``.
* :class:`CoupledMNE` -- points are transported by
  ``b_t + sigma^2/2 chi_S * grad u_theta`` and integrated jointly. The state
  layout is ``[theta (p values), X (N*d values, row-major)]``.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import ode_solver
from .diffusion_ops import colloc_analytic, operator_values, transport_velocity
from .mne_core import MneRhsReport, reg_param, theta_dot_presketched
from .sketch import apply, apply_signed_blocks

__all__ = ["AnalyticMNE", "CoupledMNE", "EvolutionResult", "EvolutionBudgetError", "evolve", "residual_curve"]

log = logging.getLogger(__name__)


class _MNESystem:
    def __init__(self, spec, arch, sketch, epsilon):
        if arch.input_dim != spec.d:
            raise ValueError(f"architecture dimension {arch.input_dim} != diffusion dimension {spec.d}")
        self.spec = spec
        self.arch = arch
        self.sketch = sketch
        self.reg = reg_param(sketch.N, epsilon)
        self.last_report = None
        self.n_inflations = 0

    def _velocity(self, theta, X, A_vals):
        # the Jacobian is sketched block by block and never stored whole
        blocks = self.arch.param_jacobian_blocks(theta, X, col_scale=self.sketch.signs)
        Phi_s = apply_signed_blocks(self.sketch, blocks, self.arch.n_params)
        theta_dot, cond, lam, inflated = theta_dot_presketched(
            Phi_s, apply(self.sketch, A_vals), self.reg.lam, report=True
        )
        Phi_v = self.arch.dir_param_deriv(theta, theta_dot, X)
        resid = float(np.linalg.norm(Phi_v - A_vals) / np.sqrt(X.shape[0]))
        if inflated:
            self.n_inflations += 1
        return MneRhsReport(theta_dot, resid, cond, lam, inflated)

    def report(self, t, y):
        """Full :class:`MneRhsReport` at state ``y``."""
        self.rhs(t, y)
        return self.last_report


class AnalyticMNE(_MNESystem):
    def __init__(self, spec, arch, sketch, epsilon, plan, time_change=True):
        super().__init__(spec, arch, sketch, epsilon)
        if plan.N != sketch.N:
            raise ValueError(f"plan has {plan.N} points, sketch expects {sketch.N}")
        if not spec.time_independent:
            raise ValueError("analytic collocation needs the OU drift")
        self.plan = plan
        self.time_change = time_change

    def forward_time(self, s):
        return 0.5 * s * s if self.time_change else s

    def points(self, s):
        return colloc_analytic(self.plan, self.spec, self.forward_time(s))

    def collocation(self, s, theta):
        """``(theta, X, A_vals)`` at ``s``; ``A_vals`` includes the time-change factor."""
        X = self.points(s)
        A_vals = operator_values(self.spec, self.arch, theta, X, self.forward_time(s))
        if self.time_change:
            A_vals = s * A_vals
        return theta, X, A_vals

    def rhs(self, s, theta):
        theta, X, A_vals = self.collocation(s, theta)
        self.last_report = self._velocity(theta, X, A_vals)
        self.last_report.time = float(s)
        return self.last_report.theta_dot

    def theta(self, y):
        return y

    def initial_state(self, theta0):
        return np.asarray(theta0, dtype=np.float64).copy()


class CoupledMNE(_MNESystem):
    def __init__(self, spec, arch, sketch, epsilon):
        super().__init__(spec, arch, sketch, epsilon)
        self.p = arch.n_params

    def split(self, y):
        return y[: self.p], y[self.p:].reshape(self.sketch.N, self.spec.d)

    def theta(self, y):
        return y[: self.p]

    def initial_state(self, theta0, X0):
        X0 = np.asarray(X0, dtype=np.float64)
        if X0.shape != (self.sketch.N, self.spec.d):
            raise ValueError(f"initial points have shape {X0.shape}, expected ({self.sketch.N}, {self.spec.d})")
        return np.concatenate([theta0, X0.ravel()])

    def collocation(self, t, y):
        theta, X = self.split(y)
        return theta, X, operator_values(self.spec, self.arch, theta, X, t)

    def rhs(self, t, y):
        theta, X, A_vals = self.collocation(t, y)
        self.last_report = self._velocity(theta, X, A_vals)
        self.last_report.time = float(t)
        Xdot = transport_velocity(self.spec, self.arch, theta, X, t)
        return np.concatenate([self.last_report.theta_dot, Xdot.ravel()])


class EvolutionBudgetError(RuntimeError):
    """The evolution exceeded its wall-clock budget."""


@dataclass
class EvolutionResult:
    trajectory: ode_solver.DenseTrajectory
    step_log: list = field(default_factory=list)

    @property
    def step_residuals(self):
        return np.array([(t, r) for t, r, _ in self.step_log]).reshape(-1, 2)


def evolve(system, y0, t0, t1, rtol=1e-3, atol=1e-6, max_steps=100000, max_seconds=None):
    """Integrate an MNE system; residuals at accepted steps come for free (FSAL).

    A blow-up of the parameter dynamics surfaces as ``StepSizeUnderflowError``
    once ``max_steps`` accepted steps are exceeded, or as
    :class:`EvolutionBudgetError` once ``max_seconds`` of wall time have passed.
    """
    step_log = []
    start = time.perf_counter()

    def on_step(t, y):
        rep = system.last_report
        step_log.append((t, rep.residual_rms, rep.gram_condition_estimate))
        log.debug("t=%.4f residual=%.3e cond=%.2e", t, rep.residual_rms, rep.gram_condition_estimate)
        if max_seconds is not None and time.perf_counter() - start > max_seconds:
            raise EvolutionBudgetError(f"wall-clock budget of {max_seconds:g} s exceeded at t={t:.6g} "
                                       f"({len(step_log)} steps, residual {rep.residual_rms:.3e})")

    prob = ode_solver.OdeProblem(system.rhs, t0, t1, y0, rtol, atol)
    traj = ode_solver.solve(prob, on_step=on_step, max_steps=max_steps)
    log.info("evolution done: %d accepted, %d rejected, %d rhs evaluations",
             traj.n_accepted, traj.n_rejected, traj.n_rhs)
    return EvolutionResult(traj, step_log)


def residual_curve(system, traj, times):
    """RMS residual at the given times along a saved trajectory, shape ``(K, 2)``.

    The state comes from the dense output and the parameter velocity is the
    MNE velocity at that state (one sketched solve per time), so the curve
    measures the projection error and not the time-stepping error. The
    Gram-inflation counter of ``system`` is left unchanged.
    """
    count = system.n_inflations
    out = np.empty((len(times), 2))
    for i, t in enumerate(times):
        out[i] = t, system.report(t, ode_solver.eval_dense(traj, t)).residual_rms
    system.n_inflations = count
    return out

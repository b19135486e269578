"""Adaptive Tsitouras 5(4) Runge-Kutta integration with dense output.

The propagated solution is fifth order, the embedded estimate fourth order,
and the method is FSAL. Dense output uses the free fourth-order interpolant
of the pair, so ``eval_dense`` reproduces stored states exactly at step
endpoints and ``eval_dense_deriv`` is the derivative of that polynomial.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "OdeProblem",
    "DenseTrajectory",
    "StepSizeUnderflowError",
    "NonFiniteRhsError",
    "solve",
    "eval_dense",
    "eval_dense_deriv",
    "save_trajectory",
    "load_trajectory",
]

log = logging.getLogger(__name__)

# Tsitouras (2011) tableau
C = np.array([0.0, 0.161, 0.327, 0.9, 0.9800255409045097, 1.0, 1.0])
A = np.zeros((7, 7))
A[1, 0] = 0.161
A[2, :2] = [-0.008480655492356989, 0.335480655492357]
A[3, :3] = [2.897153057105493, -6.359448489975075, 4.3622954328695815]
A[4, :4] = [5.325864828439257, -11.748883564062828, 7.4955393428898365, -0.09249506636175525]
A[5, :5] = [5.86145544294642, -12.92096931784711, 8.159367898576159, -0.071584973281401, -0.028269050394068383]
A[6, :6] = [0.09646076681806523, 0.01, 0.4798896504144996, 1.379008574103742, -3.290069515436081, 2.324710524099774]
B = A[6].copy()
# B - B_hat: weights of the local error estimate
E = np.array([
    -0.00178001105222577714,
    -0.0008164344596567469,
    0.007880878010261995,
    -0.1447110071732629,
    0.5823571654525552,
    -0.45808210592918697,
    0.015151515151515152,
])


def _interp_coefficients():
    P = np.polynomial.polynomial
    factored = [
        (-1.0530884977290216, [0.0, 1.3299890189751412], [0.7139816917074209, -1.4364028541716351, 1.0]),
        (0.1017, [0.0, 0.0], [1.2949852507374631, -2.1966568338249754, 1.0]),
        (2.490627285651252793, [0.0, 0.0], [1.57803468208092486, -2.38535645472061657, 1.0]),
        (-16.54810288924490272, [0.0, 0.0, 1.21712927295533244, 0.61620406037800089], None),
        (47.37952196281928122, [0.0, 0.0, 1.203071208372362603, 0.658047292653547382], None),
        (-34.87065786149660974, [0.0, 0.0, 1.2, 0.666666666666666667], None),
        (2.5, [0.0, 0.0, 1.0, 0.6], None),
    ]
    rows = []
    for scale, roots, quad in factored:
        poly = P.polyfromroots(roots)
        if quad is not None:
            poly = P.polymul(poly, quad)
        rows.append(np.pad(scale * poly, (0, 5 - len(poly))))
    return np.array(rows)  # (7 stages, powers 0..4)


# b_i(theta) = sum_k BI[i, k] theta^k; BI[:, 0] == 0 and sum_k BI[i, k] == B[i]
BI = _interp_coefficients()
BI_DERIV = BI[:, 1:] * np.arange(1, 5)

SAFETY = 0.9
FACTOR_MIN = 0.2
FACTOR_MAX = 10.0
# PI controller exponents (error estimate of order 4 -> k = 5)
BETA1 = 0.7 / 5
BETA2 = 0.4 / 5


class StepSizeUnderflowError(RuntimeError):
    pass


class NonFiniteRhsError(FloatingPointError):
    pass


@dataclass
class OdeProblem:
    rhs: object
    t0: float
    t1: float
    y0: np.ndarray
    rtol: float = 1e-3
    atol: float = 1e-6

    def __post_init__(self):
        self.y0 = np.array(self.y0, dtype=np.float64).ravel()
        if not self.t1 > self.t0:
            raise ValueError("t1 must exceed t0")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")


@dataclass
class DenseTrajectory:
    """Accepted steps of a solve plus their stage derivatives.

    ``ts`` has ``K+1`` entries, ``ys`` is ``(K+1, dim)`` and ``ks`` is
    ``(K, 7, dim)``.
    """

    ts: np.ndarray
    ys: np.ndarray
    ks: np.ndarray
    n_rejected: int = 0
    n_rhs: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def t0(self):
        return float(self.ts[0])

    @property
    def t1(self):
        return float(self.ts[-1])

    @property
    def y_final(self):
        return self.ys[-1]

    @property
    def n_accepted(self):
        return len(self.ts) - 1

    def _locate(self, t):
        if not (self.t0 <= t <= self.t1):
            raise ValueError(f"t={t} outside trajectory range [{self.t0}, {self.t1}]")
        i = int(np.searchsorted(self.ts, t, side="right")) - 1
        i = min(max(i, 0), len(self.ts) - 2)
        h = self.ts[i + 1] - self.ts[i]
        return i, h, (t - self.ts[i]) / h


def _rms(x):
    return float(np.sqrt(np.mean(x * x)))


def _initial_step(rhs, t0, y0, f0, rtol, atol, h_max):
    scale = atol + rtol * np.abs(y0)
    d0, d1 = _rms(y0 / scale), _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, h_max)
    f1 = rhs(t0 + h0, y0 + h0 * f0)
    d2 = _rms((f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, h_max)


def solve(prob, *, h_max=None, max_steps=100000, on_step=None):
    """Integrate ``prob`` and return a :class:`DenseTrajectory`.

    ``on_step(t, y)`` is called after every accepted step; the last rhs
    evaluation before the call was at exactly ``(t, y)`` (FSAL stage).
    """
    t0, t1 = float(prob.t0), float(prob.t1)
    span = t1 - t0
    h_max = span / 10 if h_max is None else min(h_max, span / 10)
    n_rhs = 0

    def f(t, y):
        nonlocal n_rhs
        n_rhs += 1
        out = np.asarray(prob.rhs(t, y), dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise NonFiniteRhsError(f"rhs returned non-finite values at t={t:.6g}")
        return out

    y = prob.y0.copy()
    k0 = f(t0, y)
    h = _initial_step(f, t0, y, k0, prob.rtol, prob.atol, h_max)
    ts, ys, ks = [t0], [y.copy()], []
    t = t0
    err_prev = 1.0
    n_rejected = 0
    h_min = 16 * np.finfo(float).eps * max(abs(t0), abs(t1), 1.0)
    K = np.empty((7, y.size))
    while t < t1:
        if len(ks) >= max_steps:
            raise StepSizeUnderflowError(f"exceeded {max_steps} steps at t={t:.6g}")
        last = t + h >= t1 - h_min
        if last:
            h = t1 - t
        K[0] = k0
        for i in range(1, 7):
            K[i] = f(t + C[i] * h, y + h * (A[i, :i] @ K[:i]))
        # stage 7 is evaluated at the propagated solution (FSAL)
        y_new = y + h * (B[:6] @ K[:6])
        err_vec = h * (E @ K)
        scale = prob.atol + prob.rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = _rms(err_vec / scale)
        if err <= 1.0:
            t_new = t1 if last else t + h
            ts.append(t_new)
            ys.append(y_new.copy())
            ks.append(K.copy())
            t, y, k0 = t_new, y_new, K[6].copy()
            if on_step is not None:
                on_step(t, y)
            err = max(err, 1e-10)
            factor = SAFETY * err ** -BETA1 * err_prev**BETA2
            err_prev = err
        else:
            n_rejected += 1
            factor = SAFETY * err ** -BETA1
            factor = min(factor, 1.0)
        h = min(h * min(FACTOR_MAX, max(FACTOR_MIN, factor)), h_max)
        if h < h_min:
            raise StepSizeUnderflowError(f"step size underflow at t={t:.6g} (error estimate {err:.3e})")
    return DenseTrajectory(np.array(ts), np.array(ys), np.array(ks), n_rejected, n_rhs)


def eval_dense(traj, t):
    i, h, theta = traj._locate(t)
    if theta == 0.0:
        return traj.ys[i].copy()
    if theta == 1.0:
        return traj.ys[i + 1].copy()
    w = BI @ theta ** np.arange(5)
    return traj.ys[i] + h * (w @ traj.ks[i])


def eval_dense_deriv(traj, t):
    """Time derivative of the interpolant at ``t``."""
    i, _, theta = traj._locate(t)
    w = BI_DERIV @ theta ** np.arange(4)
    return w @ traj.ks[i]


def save_trajectory(traj, path):
    with open(path, "wb") as fh:
        np.savez(fh, ts=traj.ts, ys=traj.ys, ks=traj.ks,
                 stats=np.array([traj.n_rejected, traj.n_rhs]),
                 meta=np.array(json.dumps(traj.meta, sort_keys=True)))


def load_trajectory(path):
    with np.load(path) as data:
        n_rejected, n_rhs = (int(v) for v in data["stats"])
        return DenseTrajectory(data["ts"].copy(), data["ys"].copy(), data["ks"].copy(),
                               n_rejected, n_rhs, json.loads(str(data["meta"])))

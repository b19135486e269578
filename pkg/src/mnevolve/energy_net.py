"""Parametric energy models ``u_theta(x)`` and their derivatives.

Two families share one duck-typed interface (``eval_u``, ``grad_x``,
``lap_masked``, ``param_jacobian``, ``dir_param_deriv``):

* :class:`ArchSpec` -- a plain MLP with cosine or softplus activations and a
  scalar linear head. Every derivative is a closed-form layer recurrence.
* :class:`QuadraticArch` -- ``u(x) = sum_{i<=j} Q_ij x_i x_j + b.x + c``,
  linear in its parameters. The Gaussian family is closed under the
  Ornstein-Uhlenbeck Fokker-Planck flow, which makes it the analytic oracle
  for the evolution and sampling code.

Point sets are ``(N, d)`` arrays, one point per row. The parameter Jacobian
is returned as ``(p, N)``: one column per point.

MLP parameter layout (flat ``theta``): for each hidden layer, the weight
matrix of shape ``(out, in)`` in row-major order followed by its bias; then
the head weights ``(n_L,)`` and the scalar head bias.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from sklearn.utils import check_array

__all__ = [
    "ACTIVATIONS",
    "ArchSpec",
    "QuadraticArch",
    "ModelParams",
    "init_params",
    "eval_u",
    "grad_x",
    "lap_masked",
    "param_jacobian",
    "dir_param_deriv",
    "score_grad_x_param_jac",
    "save_params",
    "load_params",
    "arch_from_dict",
]

PARAMS_FORMAT_VERSION = 1


def _softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _softplus_d2(z):
    s = expit(z)
    return s * (1.0 - s)


# value, first derivative, second derivative
ACTIVATIONS = {
    "cosine": (np.cos, lambda z: -np.sin(z), lambda z: -np.cos(z)),
    "softplus": (_softplus, expit, _softplus_d2),
}


def check_points(X, d):
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != d:
        raise ValueError(f"points have dimension {X.shape[1]}, model expects {d}")
    return X


def _mask_indices(S, d):
    S = np.unique(np.asarray(S, dtype=int).ravel())
    if S.size and (S[0] < 0 or S[-1] >= d):
        raise ValueError(f"mask {S.tolist()} out of range for d={d}")
    return S


@dataclass(frozen=True)
class ArchSpec:
    """MLP architecture: ``input_dim -> hidden_widths... -> 1``."""

    input_dim: int
    hidden_widths: tuple = (128, 128)
    activation: str = "softplus"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if not self.hidden_widths or min(self.hidden_widths) < 1:
            raise ValueError("hidden widths must be a non-empty list of positive counts")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {sorted(ACTIVATIONS)}")

    @property
    def layer_dims(self):
        dims = (self.input_dim,) + self.hidden_widths
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self):
        return sum(i * o + o for i, o in self.layer_dims) + self.hidden_widths[-1] + 1

    def to_dict(self):
        return {
            "kind": "mlp",
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "activation": self.activation,
        }

    def unpack(self, theta):
        """Split ``theta`` into ``[(W, b), ...], v, c`` (views, no copies)."""
        layers = []
        off = 0
        for i, o in self.layer_dims:
            W = theta[off:off + i * o].reshape(o, i)
            off += i * o
            b = theta[off:off + o]
            off += o
            layers.append((W, b))
        nL = self.hidden_widths[-1]
        v = theta[off:off + nL]
        c = theta[off + nL]
        return layers, v, c

    def init_theta(self, rng):
        parts = []
        for i, o in self.layer_dims:
            parts.append(rng.standard_normal(o * i) / np.sqrt(i))
            parts.append(np.zeros(o))
        nL = self.hidden_widths[-1]
        parts.append(rng.standard_normal(nL) / np.sqrt(nL))
        parts.append(np.zeros(1))
        return np.concatenate(parts)

    # -- forward machinery -------------------------------------------------

    def _forward(self, theta, X):
        act = ACTIVATIONS[self.activation][0]
        layers, v, c = self.unpack(theta)
        a = X
        zs, acts = [], [X]
        for W, b in layers:
            z = a @ W.T + b
            a = act(z)
            zs.append(z)
            acts.append(a)
        return layers, v, c, zs, acts

    def _backward(self, layers, v, zs):
        """Return ``deltas[l] = du/dz_l`` for every hidden layer."""
        dact = ACTIVATIONS[self.activation][1]
        g = np.broadcast_to(v, zs[-1].shape)
        deltas = [None] * len(layers)
        for l in range(len(layers) - 1, -1, -1):
            deltas[l] = g * dact(zs[l])
            g = deltas[l] @ layers[l][0]
        return deltas

    # -- public interface ----------------------------------------------------

    def eval_u(self, theta, X):
        _, v, c, _, acts = self._forward(theta, X)
        return acts[-1] @ v + c

    def grad_x(self, theta, X):
        layers, v, _, zs, _ = self._forward(theta, X)
        deltas = self._backward(layers, v, zs)
        return deltas[0] @ layers[0][0]

    def value_and_grad_x(self, theta, X):
        layers, v, c, zs, acts = self._forward(theta, X)
        deltas = self._backward(layers, v, zs)
        return acts[-1] @ v + c, deltas[0] @ layers[0][0]

    def lap_masked(self, theta, X, S):
        return self.grad_and_lap(theta, X, S)[1]

    def grad_and_lap(self, theta, X, S):
        """Spatial gradient and masked Laplacian in one pass.

        Uses ``Hess u = sum_l J_l^T diag(g_l * act''(z_l)) J_l`` with
        ``J_l = dz_l/dx_S`` propagated forward and ``g_l = du/da_l``.
        """
        S = _mask_indices(S, self.input_dim)
        _, dact, d2act = ACTIVATIONS[self.activation]
        layers, v, _, zs, _ = self._forward(theta, X)
        deltas = self._backward(layers, v, zs)
        grad = deltas[0] @ layers[0][0]
        lap = np.zeros(X.shape[0])
        if S.size == 0:
            return grad, lap
        # J[n, s, k] = dz_l[k] / dx_s at point n; first layer is point-independent
        W0S = layers[0][0][:, S]
        J = None
        for l, (W, _) in enumerate(layers):
            g = v if l == len(layers) - 1 else deltas[l + 1] @ layers[l + 1][0]
            curv = g * d2act(zs[l])
            if l == 0:
                lap += curv @ np.sum(W0S * W0S, axis=1)
                J = W0S.T[None, :, :] * dact(zs[0])[:, None, :]
                continue
            J = (J.reshape(-1, J.shape[2]) @ W.T).reshape(X.shape[0], S.size, W.shape[0])
            lap += np.einsum("nk,nk->n", curv, np.einsum("nsk,nsk->nk", J, J))
            if l + 1 < len(layers):
                J *= dact(zs[l])[:, None, :]
        return grad, lap

    def param_jacobian(self, theta, X):
        out = np.empty((self.n_params, X.shape[0]))
        for off, block in self.param_jacobian_blocks(theta, X):
            out[off:off + block.shape[0]] = block
        return out

    def param_jacobian_blocks(self, theta, X, col_scale=None, max_rows=128):
        """Yield ``(offset, rows)`` pieces of the parameter Jacobian in order.

        Each piece holds at most about ``max_rows`` rows, so a consumer such as
        the sketch can work on cache-sized blocks without forming all ``p x N``
        entries. ``col_scale`` multiplies every column (point) when given.
        """
        layers, v, _, zs, acts = self._forward(theta, X)
        deltas = self._backward(layers, v, zs)
        N = X.shape[0]
        scale = np.ones(N) if col_scale is None else np.asarray(col_scale, dtype=np.float64)
        off = 0
        for l, (W, _) in enumerate(layers):
            o, i = W.shape
            dT = np.ascontiguousarray(deltas[l].T) * scale
            aT = np.ascontiguousarray(acts[l].T)
            step = max(1, max_rows // i)
            for a in range(0, o, step):
                b = min(o, a + step)
                yield off + a * i, (dT[a:b, None, :] * aT[None, :, :]).reshape(-1, N)
            off += o * i
            yield off, dT
            off += o
        yield off, np.vstack([acts[-1].T * scale, scale[None, :]])

    def dir_param_deriv(self, theta, V, X):
        dact = ACTIVATIONS[self.activation][1]
        layers, v, _, zs, acts = self._forward(theta, X)
        dlayers, dv, dc = self.unpack(V)
        adot = None
        for l, ((W, _), (dW, db)) in enumerate(zip(layers, dlayers)):
            zdot = acts[l] @ dW.T + db
            if adot is not None:
                zdot += adot @ W.T
            adot = dact(zs[l]) * zdot
        return acts[-1] @ dv + adot @ v + dc

    def score_loss_grad(self, theta, X, target_scores):
        """Loss ``mean_i |grad u(x_i) - s_i|^2`` and its gradient in theta.

        Reverse mode through the forward tangent of ``u`` along the fixed
        residual directions ``r_i = 2 (grad u(x_i) - s_i) / N``.
        """
        _, dact, d2act = ACTIVATIONS[self.activation]
        layers, v, _, zs, acts = self._forward(theta, X)
        deltas = self._backward(layers, v, zs)
        resid = deltas[0] @ layers[0][0] - target_scores
        N = X.shape[0]
        loss = float(np.sum(resid * resid)) / N
        r = (2.0 / N) * resid

        d1 = [dact(z) for z in zs]
        adots = [r]
        zdots = []
        for l, (W, _) in enumerate(layers):
            zdot = adots[-1] @ W.T
            zdots.append(zdot)
            adots.append(d1[l] * zdot)

        grad = np.empty_like(theta)
        glayers, gv, _ = self.unpack(grad)
        gv[:] = adots[-1].sum(axis=0)
        grad[-1] = 0.0
        abar = None
        adotbar = np.broadcast_to(v, zs[-1].shape)
        for l in range(len(layers) - 1, -1, -1):
            W = layers[l][0]
            zbar = adotbar * d2act(zs[l]) * zdots[l]
            if abar is not None:
                zbar += abar * d1[l]
            zdotbar = deltas[l]  # adotbar * act'(z_l) is the plain backprop delta
            gW, gb = glayers[l]
            gW[:] = zbar.T @ acts[l] + zdotbar.T @ adots[l]
            gb[:] = zbar.sum(axis=0)
            abar = zbar @ W
            adotbar = zdotbar @ W
        return loss, grad


@dataclass(frozen=True)
class QuadraticArch:
    """``u(x) = sum_{i<=j} Q_ij x_i x_j + sum_i b_i x_i + c``.

    Parameter order: upper-triangular ``Q`` (row-major), then ``b``, then ``c``.
    """

    input_dim: int
    _iu: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        object.__setattr__(self, "_iu", np.triu_indices(self.input_dim))

    @property
    def n_params(self):
        d = self.input_dim
        return d * (d + 1) // 2 + d + 1

    def to_dict(self):
        return {"kind": "quadratic", "input_dim": self.input_dim}

    def init_theta(self, rng):
        return np.zeros(self.n_params)

    def matrix(self, theta):
        """Symmetric ``A`` with ``u = x^T A x / 2 + b.x + c``."""
        d = self.input_dim
        Q = np.zeros((d, d))
        Q[self._iu] = theta[: len(self._iu[0])]
        return Q + Q.T

    def from_gaussian(self, mean, cov, const=0.0):
        """Parameters of the energy ``(x-mean)^T cov^{-1} (x-mean) / 2 + const``."""
        P = np.linalg.inv(np.atleast_2d(cov))
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        Q = np.triu(P) - 0.5 * np.diag(np.diag(P))
        b = -P @ mean
        c = 0.5 * mean @ P @ mean + const
        return np.concatenate([Q[self._iu], b, [c]])

    def to_gaussian(self, theta):
        A = self.matrix(theta)
        b = theta[len(self._iu[0]):-1]
        cov = np.linalg.inv(A)
        return -cov @ b, cov

    def features(self, X):
        i, j = self._iu
        return np.hstack([X[:, i] * X[:, j], X, np.ones((X.shape[0], 1))])

    def eval_u(self, theta, X):
        return self.features(X) @ theta

    def grad_x(self, theta, X):
        return X @ self.matrix(theta) + theta[len(self._iu[0]):-1]

    def value_and_grad_x(self, theta, X):
        return self.eval_u(theta, X), self.grad_x(theta, X)

    def lap_masked(self, theta, X, S):
        return self.grad_and_lap(theta, X, S)[1]

    def grad_and_lap(self, theta, X, S):
        S = _mask_indices(S, self.input_dim)
        A = self.matrix(theta)
        return self.grad_x(theta, X), np.full(X.shape[0], float(np.trace(A[np.ix_(S, S)])))

    def param_jacobian(self, theta, X):
        return self.features(X).T.copy()

    def param_jacobian_blocks(self, theta, X, col_scale=None, max_rows=128):
        J = self.param_jacobian(theta, X)
        yield 0, J if col_scale is None else J * col_scale

    def dir_param_deriv(self, theta, V, X):
        return self.features(X) @ V

    def score_loss_grad(self, theta, X, target_scores):
        N = X.shape[0]
        resid = self.grad_x(theta, X) - target_scores
        loss = float(np.sum(resid * resid)) / N
        r = (2.0 / N) * resid
        i, j = self._iu
        gQ = np.sum(r[:, i] * X[:, j] + X[:, i] * r[:, j], axis=0)
        return loss, np.concatenate([gQ, r.sum(axis=0), [0.0]])


def arch_from_dict(spec):
    spec = dict(spec)
    kind = spec.pop("kind", "mlp")
    if kind == "mlp":
        return ArchSpec(spec["input_dim"], tuple(spec.get("hidden_widths", (128, 128))), spec.get("activation", "softplus"))
    if kind == "quadratic":
        return QuadraticArch(spec["input_dim"])
    raise ValueError(f"unknown architecture kind {kind!r}")


@dataclass
class ModelParams:
    """An architecture together with a flat parameter vector."""

    arch: object
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.arch.n_params,):
            raise ValueError(f"theta has shape {self.theta.shape}, architecture needs ({self.arch.n_params},)")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta contains non-finite entries")

    @property
    def d(self):
        return self.arch.input_dim

    def with_theta(self, theta):
        return ModelParams(self.arch, theta)


def init_params(arch, seed):
    """Weights ``~ N(0, 1/fan_in)``, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    return ModelParams(arch, arch.init_theta(rng))


def eval_u(m, X):
    return m.arch.eval_u(m.theta, check_points(X, m.d))


def grad_x(m, X):
    """Spatial gradient, shape ``(N, d)``."""
    return m.arch.grad_x(m.theta, check_points(X, m.d))


def lap_masked(m, X, S):
    """``sum_{i in S} d^2 u / dx_i^2`` at each point; zeros if ``S`` is empty."""
    return m.arch.lap_masked(m.theta, check_points(X, m.d), S)


def param_jacobian(m, X):
    """``Phi[:, j] = grad_theta u(x_j)``, shape ``(p, N)``."""
    return m.arch.param_jacobian(m.theta, check_points(X, m.d))


def dir_param_deriv(m, v, X):
    """``<grad_theta u(x_j), v>`` for each point, without forming the Jacobian."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != m.theta.shape:
        raise ValueError(f"direction has shape {v.shape}, expected {m.theta.shape}")
    return m.arch.dir_param_deriv(m.theta, v, check_points(X, m.d))


def score_grad_x_param_jac(m, X, target_scores):
    """Score-matching loss and its exact gradient with respect to theta."""
    X = check_points(X, m.d)
    target_scores = np.asarray(target_scores, dtype=np.float64)
    if target_scores.shape != X.shape:
        raise ValueError(f"target scores have shape {target_scores.shape}, expected {X.shape}")
    return m.arch.score_loss_grad(m.theta, X, target_scores)


def save_params(m, path):
    header = json.dumps({"version": PARAMS_FORMAT_VERSION, "arch": m.arch.to_dict()})
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(header), theta=m.theta)


def load_params(path):
    with np.load(path) as data:
        header = json.loads(str(data["header"]))
        if header.get("version") != PARAMS_FORMAT_VERSION:
            raise ValueError(f"unsupported parameter file version {header.get('version')}")
        return ModelParams(arch_from_dict(header["arch"]), data["theta"].copy())

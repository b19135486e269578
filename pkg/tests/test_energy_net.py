import fdcheck
import numpy as np
import pytest

from mnevolve import energy_net as en
from mnevolve.energy_net import ArchSpec, ModelParams, QuadraticArch, init_params


def test_param_counts():
    assert ArchSpec(2, (128, 128)).n_params == 17025
    assert ArchSpec(1, (1,)).n_params == 4
    assert QuadraticArch(2).n_params == 6


def test_init_deterministic():
    arch = ArchSpec(3, (8, 5))
    assert np.array_equal(init_params(arch, 4).theta, init_params(arch, 4).theta)
    assert not np.array_equal(init_params(arch, 4).theta, init_params(arch, 5).theta)
    layers, v, c = arch.unpack(init_params(arch, 4).theta)
    assert all(np.all(b == 0) for _, b in layers) and c == 0


def test_arch_validation():
    with pytest.raises(ValueError):
        ArchSpec(0)
    with pytest.raises(ValueError):
        ArchSpec(2, (3, 0))
    with pytest.raises(ValueError):
        ArchSpec(2, (3,), "relu")
    with pytest.raises(ValueError):
        ModelParams(ArchSpec(1, (1,)), np.zeros(3))
    with pytest.raises(ValueError):
        ModelParams(ArchSpec(1, (1,)), np.array([0.0, 0.0, np.nan, 0.0]))


def test_zero_head(rng):
    arch = ArchSpec(3, (6, 4), "softplus")
    theta = init_params(arch, 0).theta
    theta[-5:] = 0.0
    m = ModelParams(arch, theta)
    X = rng.standard_normal((5, 3))
    assert np.array_equal(en.eval_u(m, X), np.zeros(5))
    assert np.array_equal(en.grad_x(m, X), np.zeros((5, 3)))
    assert np.array_equal(en.lap_masked(m, X, [0, 2]), np.zeros(5))


def test_one_unit_cosine_net():
    arch = ArchSpec(1, (1,), "cosine")
    w1, b, w2, c = 1.3, 0.2, -0.7, 0.4
    m = ModelParams(arch, np.array([w1, b, w2, c]))
    x = np.array([[0.6]])
    z = w1 * 0.6 + b
    assert np.isclose(en.eval_u(m, x)[0], w2 * np.cos(z) + c)
    assert np.isclose(en.grad_x(m, x)[0, 0], -w2 * w1 * np.sin(z))
    assert np.isclose(en.lap_masked(m, x, [0])[0], -w2 * w1**2 * np.cos(z))


def test_symbolic_composition_softplus():
    arch = ArchSpec(1, (1, 1), "softplus")
    theta = np.array([0.5, -0.1, 2.0, 0.3, 1.5, 0.25])
    sp = lambda z: np.log1p(np.exp(z))
    x = 0.8
    expected = 1.5 * sp(2.0 * sp(0.5 * x - 0.1) + 0.3) + 0.25
    assert np.isclose(en.eval_u(ModelParams(arch, theta), [[x]])[0], expected, rtol=1e-14)


def test_hidden_permutation_invariance(rng):
    arch = ArchSpec(2, (5,), "cosine")
    theta = init_params(arch, 1).theta
    (W, b), v, c = arch.unpack(theta)[0][0], arch.unpack(theta)[1], arch.unpack(theta)[2]
    perm = rng.permutation(5)
    theta2 = np.concatenate([W[perm].ravel(), b[perm], v[perm], [c]])
    X = rng.standard_normal((4, 2))
    assert np.allclose(arch.eval_u(theta, X), arch.eval_u(theta2, X), rtol=1e-14)


def test_activation_ranges(rng):
    z = rng.standard_normal(1000) * 50
    assert np.all(np.abs(en.ACTIVATIONS["cosine"][0](z)) <= 1)
    sp, dsp, d2sp = en.ACTIVATIONS["softplus"]
    assert np.all(sp(z) >= 0) and np.all(np.isfinite(sp(np.array([800.0, -800.0]))))
    assert np.all((dsp(z) >= 0) & (dsp(z) <= 1))
    assert np.all(d2sp(z) >= 0)


@pytest.mark.parametrize("check", ["grad_x", "lap_masked", "param_jacobian", "score_gradient"])
def test_derivatives_match_finite_differences(check):
    worst = fdcheck.run_all(n_draws=30, seed=7)
    tol = 1e-5 if check in ("lap_masked", "score_gradient") else 1e-6
    assert worst[check] <= tol


def test_masked_laplacian_ignores_dead_coordinates(rng):
    arch = ArchSpec(3, (6,), "softplus")
    theta = init_params(arch, 2).theta
    layers, _, _ = arch.unpack(theta)
    layers[0][0][:, 1:] = 0.0  # view into theta
    X = rng.standard_normal((4, 3))
    assert np.allclose(arch.lap_masked(theta, X, [0]), arch.lap_masked(theta, X, [0, 1, 2]))
    assert np.array_equal(arch.lap_masked(theta, X, []), np.zeros(4))


def test_param_jacobian_properties(rng):
    arch = ArchSpec(2, (4, 3), "cosine")
    m = init_params(arch, 3)
    X = rng.standard_normal((3, 2))
    X[2] = X[0]
    J = en.param_jacobian(m, X)
    assert J.shape == (arch.n_params, 3)
    assert np.all(J[-1] == 1.0)
    assert np.array_equal(J[:, 0], J[:, 2])


def test_dir_param_deriv(rng):
    arch = ArchSpec(3, (7, 5), "softplus")
    m = init_params(arch, 9)
    X = rng.standard_normal((6, 3))
    J = en.param_jacobian(m, X)
    assert np.array_equal(en.dir_param_deriv(m, np.zeros(arch.n_params), X), np.zeros(6))
    k = 11
    assert np.allclose(en.dir_param_deriv(m, np.eye(arch.n_params)[k], X), J[k], rtol=1e-12, atol=1e-15)
    v = rng.standard_normal(arch.n_params)
    ref = J.T @ v
    assert np.max(np.abs(en.dir_param_deriv(m, v, X) - ref)) <= 1e-12 * max(1.0, np.abs(ref).max())
    with pytest.raises(ValueError):
        en.dir_param_deriv(m, np.zeros(3), X)


def test_score_loss_perfect_fit(rng):
    arch = ArchSpec(2, (5,), "cosine")
    m = init_params(arch, 0)
    X = rng.standard_normal((8, 2))
    loss, grad = en.score_grad_x_param_jac(m, X, en.grad_x(m, X))
    assert loss == 0.0 and np.all(grad == 0.0)
    with pytest.raises(ValueError):
        en.score_grad_x_param_jac(m, X, np.zeros((8, 3)))


def test_score_loss_one_unit_hand():
    # u = w2 cos(w1 x + b) + c, g = -w2 w1 sin(w1 x + b); loss = (g - s)^2 at one point
    w1, b, w2, c, x, s = 0.9, -0.3, 1.1, 0.0, 0.5, 0.2
    arch = ArchSpec(1, (1,), "cosine")
    z = w1 * x + b
    g = -w2 * w1 * np.sin(z)
    r = 2 * (g - s)
    expected = r * np.array([
        -w2 * np.sin(z) - w2 * w1 * x * np.cos(z),  # d g / d w1
        -w2 * w1 * np.cos(z),  # d g / d b
        -w1 * np.sin(z),  # d g / d w2
        0.0,
    ])
    loss, grad = arch.score_loss_grad(np.array([w1, b, w2, c]), np.array([[x]]), np.array([[s]]))
    assert np.isclose(loss, (g - s) ** 2)
    assert np.allclose(grad, expected, rtol=1e-13)


def test_dimension_mismatch(rng):
    m = init_params(ArchSpec(3, (4,)), 0)
    with pytest.raises(ValueError):
        en.eval_u(m, rng.standard_normal((2, 2)))
    with pytest.raises(ValueError):
        en.grad_x(m, rng.standard_normal((2, 4)))


def test_quadratic_family(rng):
    q = QuadraticArch(3)
    A = rng.standard_normal((3, 3))
    cov = A @ A.T + np.eye(3)
    mean = rng.standard_normal(3)
    theta = q.from_gaussian(mean, cov, const=0.7)
    X = rng.standard_normal((5, 3))
    P = np.linalg.inv(cov)
    dx = X - mean
    assert np.allclose(q.eval_u(theta, X), 0.5 * np.einsum("ni,ij,nj->n", dx, P, dx) + 0.7)
    assert np.allclose(q.grad_x(theta, X), dx @ P)
    assert np.allclose(q.lap_masked(theta, X, [0, 2]), P[0, 0] + P[2, 2])
    m2, c2 = q.to_gaussian(theta)
    assert np.allclose(m2, mean) and np.allclose(c2, cov)
    for name, err in [("grad", fdcheck.grad_error(q, theta, X[:1])),
                      ("jac", fdcheck.jac_error(q, theta, X[:1]))]:
        assert err <= 1e-8, name
    targets = rng.standard_normal(X.shape)
    assert fdcheck.score_grad_error(q, theta, X, targets) <= 1e-8


def test_save_load_roundtrip(tmp_path):
    for arch in (ArchSpec(2, (3, 4), "cosine"), QuadraticArch(2)):
        m = init_params(arch, 1) if isinstance(arch, ArchSpec) else ModelParams(arch, np.arange(6.0))
        path = tmp_path / "p.npz"
        en.save_params(m, path)
        back = en.load_params(path)
        assert back.arch == arch and np.array_equal(back.theta, m.theta)


def test_bit_determinism(rng):
    arch = ArchSpec(3, (16, 16), "softplus")
    m = init_params(arch, 0)
    X = rng.standard_normal((20, 3))
    assert np.array_equal(en.param_jacobian(m, X), en.param_jacobian(m, X))
    assert np.array_equal(en.lap_masked(m, X, [0, 1]), en.lap_masked(m, X, [0, 1]))

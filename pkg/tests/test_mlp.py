import numpy as np
import pytest

from dagsac.mlp import (
    ADAM_EPS,
    AdamState,
    Mlp,
    ShapeError,
    adam_init,
    adam_step,
    finite_diff_grad,
    grad_norm,
    mlp_backward,
    mlp_forward,
    mlp_init,
    params_to_vector,
    vector_to_params,
)


def test_zero_network_maps_anything_to_zero():
    net = Mlp([(np.zeros((4, 3)), np.zeros(4)), (np.zeros((2, 4)), np.zeros(2))])
    out, _ = mlp_forward(net, np.array([1.0, -2.0, 3.0]))
    assert np.array_equal(out, np.zeros(2))


def test_identity_single_linear_layer():
    net = Mlp([(np.eye(2), np.zeros(2))])
    out, _ = mlp_forward(net, np.array([1.5, -2.0]))
    assert np.array_equal(out, np.array([1.5, -2.0]))


def test_random_342_matches_straight_line_recomputation():
    rng = np.random.default_rng(7)
    net = mlp_init([3, 4, 2], rng)
    x = rng.standard_normal(3)
    out, _ = mlp_forward(net, x)

    # independent straight-line re-computation, no shared helpers
    w1, b1 = net.layers[0]
    w2, b2 = net.layers[1]
    z1 = np.array([sum(w1[i, j] * x[j] for j in range(3)) + b1[i] for i in range(4)])
    h1 = np.array([z if z > 0 else 0.0 for z in z1])
    z2 = np.array([sum(w2[i, j] * h1[j] for j in range(4)) + b2[i] for i in range(2)])
    assert np.max(np.abs(out - z2)) < 1e-12


def test_forward_rejects_wrong_input_width():
    net = mlp_init([3, 4, 2], np.random.default_rng(0))
    with pytest.raises(ShapeError, match="layer 0"):
        mlp_forward(net, np.zeros(5))


def test_forward_deterministic_bitwise():
    rng = np.random.default_rng(3)
    net = mlp_init([5, 8, 8, 2], rng)
    x = rng.standard_normal(5)
    a, _ = mlp_forward(net, x)
    b, _ = mlp_forward(net, x)
    assert np.array_equal(a, b)


def test_backward_single_linear_layer_analytic():
    rng = np.random.default_rng(11)
    w = rng.standard_normal((3, 4))
    net = Mlp([(w, rng.standard_normal(3))])
    x = rng.standard_normal(4)
    _, cache = mlp_forward(net, x)
    g = rng.standard_normal(3)
    grad = mlp_backward(net, cache, g)
    assert np.allclose(grad.layers[0][0], np.outer(g, x), atol=1e-15)
    assert np.allclose(grad.layers[0][1], g, atol=1e-15)
    assert np.allclose(grad.input_grad, g @ w, atol=1e-15)


def test_backward_matches_finite_differences_100_random_nets():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        sizes = [int(rng.integers(2, 5)) for _ in range(int(rng.integers(2, 4)) + 1)]
        net = mlp_init(sizes, rng)
        for _, b in net.layers:
            # generic position: zero biases can park pre-activations exactly
            # on the ReLU kink, where a central difference is meaningless
            b += 0.1 * rng.standard_normal(b.shape)
        x = rng.standard_normal(sizes[0])
        up = rng.standard_normal(sizes[-1])

        out, cache = mlp_forward(net, x)
        grad = mlp_backward(net, cache, up)
        analytic = np.concatenate(
            [np.concatenate([gw.ravel(), gb]) for gw, gb in grad.layers])

        def loss_at(vec, net=net, x=x, up=up):
            trial = vector_to_params(net, vec)
            y, _ = mlp_forward(trial, x)
            return float(up @ y)

        fd = finite_diff_grad(loss_at, params_to_vector(net), h=1e-5)
        denom = np.maximum(np.maximum(np.abs(fd), np.abs(analytic)), 1e-6)
        worst = max(worst, float(np.max(np.abs(fd - analytic) / denom)))
    assert worst < 1e-4


def test_backward_input_grad_matches_finite_differences():
    rng = np.random.default_rng(5)
    net = mlp_init([4, 6, 3], rng)
    x = rng.standard_normal(4)
    up = rng.standard_normal(3)
    _, cache = mlp_forward(net, x)
    grad = mlp_backward(net, cache, up)
    fd = finite_diff_grad(lambda xv: float(up @ mlp_forward(net, xv)[0]), x)
    assert np.max(np.abs(fd - grad.input_grad)) < 1e-6


def test_relu_exactly_at_zero_uses_subgradient_zero():
    # one hidden unit with zero weight and zero bias: pre-activation is 0
    net = Mlp([(np.zeros((1, 1)), np.zeros(1)), (np.ones((1, 1)), np.zeros(1))])
    _, cache = mlp_forward(net, np.array([3.0]))
    grad = mlp_backward(net, cache, np.array([1.0]))
    assert grad.layers[0][0][0, 0] == 0.0
    assert grad.layers[0][1][0] == 0.0
    assert grad.input_grad[0] == 0.0


def test_backward_rejects_mismatched_cache():
    rng = np.random.default_rng(1)
    net = mlp_init([3, 4, 2], rng)
    other = mlp_init([3, 5, 2], rng)
    _, cache = mlp_forward(other, np.zeros(3))
    with pytest.raises(ShapeError):
        mlp_backward(net, cache, np.zeros(2))


def test_adam_zero_gradient_is_fixed_point():
    rng = np.random.default_rng(9)
    net = mlp_init([3, 4, 2], rng)
    before = params_to_vector(net).copy()
    state = adam_init(net)
    grad = mlp_backward(net, mlp_forward(net, np.zeros(3))[1], np.zeros(2))
    for gw, gb in grad.layers:
        gw[:] = 0.0
        gb[:] = 0.0
    adam_step(net, grad, state, lr=3e-4)
    assert np.array_equal(params_to_vector(net), before)
    assert state.step == 1


def test_adam_constant_gradient_moves_like_signed_lr():
    # with a constant gradient from a clean state the bias-corrected moments
    # equal g and g*g exactly, so every step is -lr * g / (|g| + eps)
    net = Mlp([(np.array([[1.0, 2.0]]), np.array([0.5]))])
    state = adam_init(net)
    g = np.array([[0.3, -0.7]])
    gb = np.array([0.2])
    lr = 3e-4
    expect_w = net.layers[0][0].copy()
    expect_b = net.layers[0][1].copy()
    from dagsac.mlp import Grad
    for t in range(1, 1001):
        adam_step(net, Grad([(g.copy(), gb.copy())], np.zeros(2)), state, lr)
        expect_w = expect_w - lr * g / (np.abs(g) + ADAM_EPS)
        expect_b = expect_b - lr * gb / (np.abs(gb) + ADAM_EPS)
        assert np.allclose(net.layers[0][0], expect_w, atol=1e-12)
        assert np.allclose(net.layers[0][1], expect_b, atol=1e-12)
    assert state.step == 1000


def test_adam_defaults_match_canonical_constants():
    net = mlp_init([2, 2], np.random.default_rng(0))
    state = adam_init(net)
    assert state.beta1 == 0.9 and state.beta2 == 0.999 and state.eps == 1e-8


def test_adam_rejects_non_finite_gradient_naming_layer():
    net = mlp_init([2, 3, 1], np.random.default_rng(0))
    state = adam_init(net)
    grad = mlp_backward(net, mlp_forward(net, np.zeros(2))[1], np.ones(1))
    grad.layers[1][0][0, 0] = np.nan
    with pytest.raises(ValueError, match="layer 1"):
        adam_step(net, grad, state)
    assert state.step == 0


def test_finite_diff_on_square():
    g = finite_diff_grad(lambda x: float(x[0] ** 2), np.array([3.0]), h=1e-5)
    assert abs(g[0] - 6.0) < 1e-8


def test_finite_diff_constant_function_is_zero():
    g = finite_diff_grad(lambda x: 4.2, np.arange(5.0), h=1e-5)
    assert np.array_equal(g, np.zeros(5))


def test_finite_diff_reports_bad_coordinate():
    def f(x):
        return float("nan") if x[1] > 0.5 else 0.0
    with pytest.raises(ValueError, match="coordinate 1"):
        finite_diff_grad(f, np.array([0.0, 0.5]), h=1.0)


def test_vector_roundtrip():
    net = mlp_init([3, 5, 2], np.random.default_rng(4))
    vec = params_to_vector(net)
    again = params_to_vector(vector_to_params(net, vec))
    assert np.array_equal(vec, again)
    assert grad_norm(mlp_backward(net, mlp_forward(net, np.zeros(3))[1],
                                  np.zeros(2))) == 0.0

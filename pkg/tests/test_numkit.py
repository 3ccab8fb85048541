import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fried.errors import ConfigurationError, DivergenceError, UsageError
from fried.numkit import (
    Adam,
    Layer,
    MlpParams,
    as_matrix,
    derive_seed,
    gradcheck,
    init_mlp,
    make_rng,
    mlp_backward,
    mlp_forward,
    sgd_step,
)


def test_rng_streams_are_reproducible_and_independent():
    a = make_rng(7, 1).random(5)
    assert np.array_equal(a, make_rng(7, 1).random(5))
    assert not np.array_equal(a, make_rng(7, 2).random(5))
    assert derive_seed(7, 3) == derive_seed(7, 3)
    assert 0 <= derive_seed(2**64 - 1, 1) < 2**63


def test_as_matrix():
    assert as_matrix([1.0, 2.0]).shape == (2, 1)
    with pytest.raises(DivergenceError):
        as_matrix([[np.nan]])
    with pytest.raises(ConfigurationError):
        as_matrix(np.zeros((2, 2, 2)))


def test_init_shapes_and_activations():
    net = init_mlp([4, 3, 2], make_rng(0), output_activation="sigmoid")
    assert net.sizes == [4, 3, 2]
    assert net.activations == ["relu", "sigmoid"]
    assert net.n_params() == 4 * 3 + 3 + 3 * 2 + 2
    assert all(np.all(l.bias == 0) for l in net.layers)
    with pytest.raises(ConfigurationError):
        init_mlp([4], make_rng(0))


def test_layers_must_chain():
    l1 = Layer(np.zeros((2, 3)), np.zeros(3))
    l2 = Layer(np.zeros((4, 1)), np.zeros(1))
    with pytest.raises(ConfigurationError):
        MlpParams((l1, l2))
    with pytest.raises(ConfigurationError):
        Layer(np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ConfigurationError):
        Layer(np.zeros((2, 3)), np.zeros(3), "tanh")


def test_forward_matches_scalar_oracle():
    net = init_mlp([2, 3, 1], make_rng(1), output_activation="sigmoid")
    x = np.array([[0.5, -1.0]])
    out, _ = mlp_forward(net, x)
    w0, b0, w1, b1 = net.arrays()
    h = [max(0.0, x[0, 0] * w0[0, j] + x[0, 1] * w0[1, j] + b0[j]) for j in range(3)]
    z = sum(h[j] * w1[j, 0] for j in range(3)) + b1[0]
    assert out[0, 0] == pytest.approx(1 / (1 + np.exp(-z)), abs=1e-12)


def test_forward_rejects_bad_width_and_nonfinite():
    net = init_mlp([2, 1], make_rng(0))
    with pytest.raises(ConfigurationError):
        mlp_forward(net, np.zeros((3, 3)))
    with pytest.raises(DivergenceError):
        mlp_forward(net, np.array([[np.inf, 0.0]]))


def test_backward_needs_matching_cache():
    a = init_mlp([2, 1], make_rng(0))
    b = a.copy()
    _, cache = mlp_forward(a, np.ones((1, 2)))
    with pytest.raises(UsageError):
        mlp_backward(b, cache, np.ones((1, 1)))


@pytest.mark.parametrize("out_act", ["identity", "sigmoid"])
def test_gradcheck_mse(out_act):
    rng = make_rng(3)
    net = init_mlp([3, 5, 4, 2], rng, output_activation=out_act)
    x = rng.normal(size=(6, 3))
    t = rng.normal(size=(6, 2))
    arrays = net.arrays()

    def lg():
        out, cache = mlp_forward(net, x)
        r = out - t
        grads, _ = mlp_backward(net, cache, 2 * r / r.size)
        return float(np.mean(r**2)), grads

    assert gradcheck(lg, arrays) < 1e-4


def test_input_gradient():
    rng = make_rng(4)
    net = init_mlp([3, 4, 1], rng)
    x = rng.normal(size=(2, 3))

    def lg():
        out, cache = mlp_forward(net, x)
        _, gx = mlp_backward(net, cache, np.ones_like(out))
        return float(out.sum()), [gx]

    assert gradcheck(lg, [x]) < 1e-5


def test_sgd_and_adam_reduce_loss():
    rng = make_rng(5)
    x = rng.normal(size=(64, 2))
    t = (x[:, :1] - 2 * x[:, 1:]).copy()
    for make_step in (lambda n: (lambda p, g: sgd_step(p, g, 0.05)), lambda n: Adam(n, 0.01).step):
        net = init_mlp([2, 8, 1], make_rng(0))
        step = make_step(net)
        losses = []
        for _ in range(200):
            out, cache = mlp_forward(net, x)
            losses.append(float(np.mean((out - t) ** 2)))
            grads, _ = mlp_backward(net, cache, 2 * (out - t) / out.size)
            net = step(net, grads)
        assert losses[-1] < 0.1 * losses[0]


def test_sgd_rejects_bad_gradients():
    net = init_mlp([2, 1], make_rng(0))
    g = [np.zeros_like(a) for a in net.arrays()]
    g[0][0, 0] = np.nan
    with pytest.raises(DivergenceError):
        sgd_step(net, g, 0.1)
    with pytest.raises(ConfigurationError):
        sgd_step(net, g[:1], 0.1)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 10_000))
def test_forward_is_deterministic(n_in, width, seed):
    net = init_mlp([n_in, width, 1], make_rng(seed))
    x = make_rng(seed, 9).normal(size=(3, n_in))
    assert np.array_equal(mlp_forward(net, x)[0], mlp_forward(net.copy(), x)[0])

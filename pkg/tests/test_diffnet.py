import numpy as np
import pytest
from conftest import assert_grad_close, finite_difference

from walkback.diffnet import SGD, Adam, ParamNet, make_optimizer, mlp
from walkback.errors import ConfigError, TrainingError, UsageError

ACTS = ["identity", "relu", "leaky_relu", "tanh", "sigmoid", "softplus"]


def _linear(W, b):
    net = ParamNet([W.shape[1], W.shape[0]], ["identity"])
    net.layers[0].weight[...] = W
    net.layers[0].bias[...] = b
    return net


def test_identity_layer_passes_input_through():
    net = _linear(np.eye(2), np.zeros(2))
    out, _ = net.forward(np.array([1.0, 2.0]))
    np.testing.assert_array_equal(out, [1.0, 2.0])


def test_zero_weights_give_bias():
    b = np.array([0.3, -1.2, 4.0])
    net = _linear(np.zeros((3, 2)), b)
    out, _ = net.forward(np.random.default_rng(0).normal(size=(5, 2)))
    np.testing.assert_array_equal(out, np.tile(b, (5, 1)))


def test_two_layer_matches_hand_evaluation():
    net = ParamNet([3, 4, 2], ["tanh", "identity"], rng=np.random.default_rng(0))
    x = np.array([0.5, -1.0, 2.0])
    l0, l1 = net.layers
    expected = l1.weight @ np.tanh(l0.weight @ x + l0.bias) + l1.bias
    out, _ = net.forward(x)
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-14)


def test_shapes_chain_and_grads_match_params():
    net = mlp(3, 2, hidden=(5, 7), n_steps=4, rng=np.random.default_rng(1))
    for prev, layer in zip(net.layers, net.layers[1:]):
        assert layer.weight.shape[1] == prev.weight.shape[0]
    assert [g.shape for g in net.grads()] == [p.shape for p in net.params()]
    assert all(gain.shape[0] == 4 for gain, _ in net.per_step_affine)


def test_linear_weight_gradient_is_outer_product():
    rng = np.random.default_rng(2)
    net = _linear(rng.normal(size=(3, 4)), np.zeros(3))
    x, g = rng.normal(size=4), rng.normal(size=3)
    _, tape = net.forward(x)
    net.backward(tape, g)
    np.testing.assert_allclose(net.grads()[0], np.outer(g, x), atol=1e-15)
    np.testing.assert_allclose(net.grads()[1], g, atol=1e-15)


def test_zero_output_grad_gives_zero_gradients():
    net = mlp(2, 2, hidden=(6,), n_steps=3, rng=np.random.default_rng(3))
    _, tape = net.forward(np.ones((4, 2)), 1)
    net.backward(tape, np.zeros((4, 2)))
    assert all(np.all(g == 0) for g in net.grads())


@pytest.mark.parametrize("act", ACTS)
@pytest.mark.parametrize("n_steps", [0, 3])
def test_parameter_gradients_match_finite_differences(act, n_steps):
    rng = np.random.default_rng(4)
    net = ParamNet([3, 5, 4, 2], [act, act, "identity"], n_steps=n_steps, rng=rng)
    if n_steps:
        for gain, shift in net.per_step_affine:
            gain[...] = rng.uniform(0.5, 1.5, gain.shape)
            shift[...] = rng.normal(scale=0.3, size=shift.shape)
    x = rng.normal(size=(6, 3))
    c = rng.normal(size=(6, 2))
    step = 2 if n_steps else None

    def objective():
        out, _ = net.forward(x, step)
        return float(np.sum(c * out))

    _, tape = net.forward(x, step)
    net.backward(tape, c)
    for p, g in zip(net.params(), net.grads()):
        assert_grad_close(g, finite_difference(objective, p))


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    net = mlp(3, 2, hidden=(4,), rng=rng)
    x = rng.normal(size=(1, 3))
    c = rng.normal(size=(1, 2))
    _, tape = net.forward(x)
    net.backward(tape, c)
    num = finite_difference(lambda: float(np.sum(c * net.forward(x)[0])), x)
    assert_grad_close(tape.input_grad, num)


def test_backward_contract_errors():
    net = mlp(2, 2, hidden=(3,), rng=np.random.default_rng(6))
    other = mlp(2, 2, hidden=(3,), rng=np.random.default_rng(6))
    _, tape = net.forward(np.ones(2))
    with pytest.raises(UsageError):
        other.backward(tape, np.ones(2))
    net.backward(tape, np.ones(2))
    with pytest.raises(UsageError):
        net.backward(tape, np.ones(2))
    _, tape = net.forward(np.ones(2))
    SGD(0.1).step(net)
    with pytest.raises(UsageError):
        net.backward(tape, np.ones(2))


def test_step_index_out_of_range():
    net = mlp(2, 2, hidden=(3,), n_steps=2)
    with pytest.raises(ConfigError):
        net.forward(np.ones(2), 2)


class _Scalar:
    """A one-parameter model ``w`` for optimizer recursions."""

    def __init__(self, w):
        self.w = np.array([w], dtype=np.float64)
        self.g = np.zeros(1)

    def params(self):
        return [self.w]

    def grads(self):
        return [self.g]

    def zero_grad(self):
        self.g[:] = 0

    def mark_updated(self):
        pass


def test_sgd_single_step():
    m = _Scalar(1.0)
    m.g[:] = 2.0
    SGD(0.1).step(m)
    assert m.w[0] == pytest.approx(0.8, abs=1e-15)
    assert m.g[0] == 0


@pytest.mark.parametrize("g", [3.0, -0.25])
def test_adam_first_step_opposes_gradient(g):
    m = _Scalar(0.0)
    m.g[:] = g
    Adam(0.01).step(m)
    assert np.sign(m.w[0]) == -np.sign(g)


def test_adam_quadratic_matches_scalar_recursion():
    m = _Scalar(1.0)
    opt = Adam(0.1)
    w, mom, vel = 1.0, 0.0, 0.0
    for t in range(1, 201):
        m.g[:] = 2 * m.w
        opt.step(m)
        g = 2 * w
        mom = 0.9 * mom + 0.1 * g
        vel = 0.999 * vel + 0.001 * g * g
        w -= 0.1 * (mom / (1 - 0.9 ** t)) / (np.sqrt(vel / (1 - 0.999 ** t)) + 1e-8)
    assert m.w[0] == pytest.approx(w, abs=1e-12)
    assert abs(m.w[0]) < 0.05


def test_optimizer_rejects_non_finite_gradient():
    m = _Scalar(1.0)
    m.g[:] = np.nan
    with pytest.raises(TrainingError):
        make_optimizer("adam", 0.1).step(m)


def test_serialization_round_trip():
    net = mlp(2, 3, hidden=(4,), n_steps=2, rng=np.random.default_rng(7))
    arrays, meta = net.to_arrays("f")
    clone = ParamNet.from_arrays(arrays, "f", meta)
    x = np.random.default_rng(8).normal(size=(3, 2))
    np.testing.assert_array_equal(clone.forward(x, 1)[0], net.forward(x, 1)[0])

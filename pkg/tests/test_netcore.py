import math

import numpy as np
import pytest

from monoplant import netcore as nc
from monoplant.errors import DivergenceError, NonFiniteInputError, ShapeError, TraceError
from monoplant.netcore import LINEAR, RELU, ActivationKind, DenseLayer, GradientSet

PT = ActivationKind("ptrelu", 4.0, 1.0)


def test_ptrelu_examples():
    k = ActivationKind("ptrelu", 1.0, 1.0)
    assert nc.activate(0.0, k) == 0.0
    assert nc.activate(-2.0, k) == 0.0
    assert nc.activate(10.0, ActivationKind("ptrelu", 2.0, 1.0)) == pytest.approx(1.9999092, abs=1e-7)
    # exact formula
    assert nc.activate(10.0, ActivationKind("ptrelu", 2.0, 1.0)) == pytest.approx(2.0 / (1.0 + math.exp(-10.0)), rel=1e-15)


def test_ptrelu_small_positive_is_identity():
    assert nc.activate(0.5, PT) == 0.5


@pytest.mark.parametrize("kind", [RELU, LINEAR, PT, ActivationKind("sigmoid"), ActivationKind("ptrelu", 0.5, 3.0)])
def test_activations_monotone(kind, rng):
    a = rng.normal(0, 10, 10_000)
    b = a + rng.uniform(0, 5, a.size)
    assert np.all(nc.activate(a, kind) <= nc.activate(b, kind))


def test_ptrelu_bounded(rng):
    x = rng.normal(0, 50, 10_000)
    y = nc.activate(x, PT)
    assert np.all(y >= 0) and np.all(y <= 4.0)


def test_activation_rejects_nonfinite():
    with pytest.raises(NonFiniteInputError):
        nc.activate(np.array([1.0, np.nan]), RELU)
    with pytest.raises(NonFiniteInputError):
        nc.activate(float("inf"), PT)


def test_activation_kind_validation():
    with pytest.raises(ValueError):
        ActivationKind("tanh")
    with pytest.raises(ValueError):
        ActivationKind("ptrelu", -1.0, 1.0)
    assert ActivationKind.from_dict(PT.to_dict()) == PT


def test_kink_points_ptrelu():
    k0, k1 = nc.kink_points(PT)
    assert k0 == 0.0
    # crossing of x and 4 sigmoid(x)
    assert k1 == pytest.approx(4.0 / (1.0 + math.exp(-k1)), abs=1e-12)
    assert 3.5 < k1 < 4.0


def test_ptrelu_tie_uses_relu_branch():
    k1 = nc.kink_points(PT)[1]
    g = nc.activate_grad(np.array([k1]), PT)[0]
    # on either side of the crossing the derivative changes branch
    assert nc.activate_grad(k1 - 1e-3, PT) == 1.0
    s = 1.0 / (1.0 + math.exp(-(k1 + 1e-3)))
    assert nc.activate_grad(k1 + 1e-3, PT) == pytest.approx(4.0 * s * (1 - s))
    assert g in (1.0, pytest.approx(4.0 * (1 / (1 + math.exp(-k1))) * (1 - 1 / (1 + math.exp(-k1)))))


def test_forward_examples():
    net = [DenseLayer([[1.0]], [0.0], LINEAR)]
    assert nc.forward(net, [3.0])[0] == 3.0
    net = [DenseLayer([[1.0]], [-5.0], RELU)]
    assert nc.forward(net, [3.0])[0] == 0.0


def test_forward_matches_hand_evaluation():
    W1 = np.array([[0.5, -1.0], [2.0, 0.25]])
    b1 = np.array([0.1, -0.2])
    W2 = np.array([[1.5, -0.5]])
    net = [DenseLayer(W1, b1, RELU), DenseLayer(W2, [0.3], LINEAR)]
    x = np.array([1.0, 0.5])
    h = [max(0.0, W1[i, 0] * x[0] + W1[i, 1] * x[1] + b1[i]) for i in range(2)]
    expected = W2[0, 0] * h[0] + W2[0, 1] * h[1] + 0.3
    assert nc.forward(net, x)[0] == pytest.approx(expected, rel=1e-15)


def test_forward_shape_errors():
    net = nc.random_sequential([3, 4], seed=0)
    with pytest.raises(ShapeError):
        nc.forward(net, np.ones(2))
    with pytest.raises(ShapeError):
        nc.forward([DenseLayer(np.ones((2, 3)), None), DenseLayer(np.ones((1, 3)), None)], np.ones(3))


def test_backward_stale_trace():
    net = nc.random_sequential([3, 4, 4], seed=0)
    _, tr = nc.forward(net, np.ones(3))
    with pytest.raises(TraceError):
        nc.backward(net[:2], tr)
    other = nc.random_sequential([3, 5, 4], seed=0)
    with pytest.raises(TraceError):
        nc.backward(other, tr)


def test_finite_diff_linear_weight():
    net = [DenseLayer([[2.0]], [0.0], LINEAR)]
    g = nc.finite_diff_grad(net, np.array([1.0]), 1e-5)
    assert g.weights["0"][0, 0] == pytest.approx(1.0, abs=1e-9)
    assert g.input[0] == pytest.approx(2.0, abs=1e-9)


def test_quadratic_composition_product_rule():
    # y = w2 . (W1 x); dy/dW1[i,j] = w2[i] x[j], dy/dw2[i] = (W1 x)[i]
    W1 = np.array([[1.0, 2.0], [-0.5, 3.0]])
    w2 = np.array([[0.7, -1.2]])
    x = np.array([0.4, -1.5])
    net = [DenseLayer(W1, None, LINEAR), DenseLayer(w2, None, LINEAR)]
    _, tr = nc.forward(net, x)
    g = nc.backward(net, tr)
    np.testing.assert_allclose(g.weights["0"], np.outer(w2[0], x), rtol=1e-14)
    np.testing.assert_allclose(g.weights["1"], (W1 @ x)[None, :], rtol=1e-14)
    np.testing.assert_allclose(g.input, w2[0] @ W1, rtol=1e-14)
    fd = nc.finite_diff_grad(net, x, 1e-6)
    np.testing.assert_allclose(fd.weights["0"], g.weights["0"], atol=1e-8)


def test_smaller_h_reduces_discrepancy():
    net = nc.random_sequential([3, 5, 5], ActivationKind("sigmoid"), seed=3)
    x = np.array([0.3, -0.2, 0.9])
    _, tr = nc.forward(net, x)
    g = nc.backward(net, tr)
    err = []
    for h in (1e-1, 1e-3):
        fd = nc.finite_diff_grad(net, x, h)
        err.append(max(np.max(np.abs(fd.weights[k] - g.weights[k])) for k in g.weights))
    assert err[1] < err[0]


def test_batched_backward_equals_sum_of_singles(rng):
    net = nc.random_sequential([4, 6, 3], PT, seed=2)
    X = rng.normal(size=(5, 4))
    _, tr = nc.forward(net, X)
    gb = nc.backward(net, tr)
    tot = {k: 0 for k in gb.weights}
    for x in X:
        _, t1 = nc.forward(net, x)
        g1 = nc.backward(net, t1)
        for k in tot:
            tot[k] = tot[k] + g1.weights[k]
    for k in tot:
        np.testing.assert_allclose(gb.weights[k], tot[k], rtol=1e-12, atol=1e-14)


def test_sgd_step_examples():
    lay = DenseLayer([[1.0]], [0.0], LINEAR, False)
    nc.sgd_step([lay], GradientSet({"0": np.array([[0.5]])}, {"0": None}, None), 0.1)
    assert lay.weights[0, 0] == pytest.approx(0.95)
    lay = DenseLayer([[0.01]], [0.01], LINEAR, True)
    nc.sgd_step([lay], GradientSet({"0": np.array([[1.0]])}, {"0": np.array([1.0])}, None), 0.1)
    assert lay.weights[0, 0] == 0.0
    assert lay.bias[0] == pytest.approx(-0.09)


def test_sgd_step_divergence():
    lay = DenseLayer([[1.0]], [0.0], LINEAR)
    with pytest.raises(DivergenceError):
        nc.sgd_step([lay], GradientSet({"0": np.array([[np.nan]])}, {"0": None}, None), 0.1)
    with pytest.raises(ValueError):
        nc.sgd_step([lay], GradientSet({"0": np.array([[1.0]])}, {"0": None}, None), 0.0)


def test_projection_idempotent(rng):
    net = nc.random_sequential([3, 4, 4], nonneg=True, seed=0)
    for l in net:
        l.weights[:] = rng.normal(size=l.weights.shape)
    nc.project_nonneg(net)
    once = [l.weights.copy() for l in net]
    nc.project_nonneg(net)
    for a, l in zip(once, net):
        np.testing.assert_array_equal(a, l.weights)
        assert np.all(l.weights >= 0)


def test_init_layer_ranges():
    l = nc.init_layer(16, 8, nonneg=True, rng=0)
    assert np.all(l.weights >= 0) and np.all(l.weights <= 0.25)
    assert np.all(l.bias == 0)
    u = nc.init_layer(16, 8, rng=0)
    assert u.weights.min() < 0 and np.abs(u.weights).max() <= 0.25
    assert nc.init_layer(4, 2, bias=False, rng=0).bias is None


def test_training_deterministic(rng):
    X = rng.normal(size=(20, 3))
    y = X @ np.array([1.0, -2.0, 0.5])

    def run():
        net = nc.random_sequential([3, 8], PT, seed=5)
        opt = nc.SGD(0.01, 0.9)
        for _ in range(30):
            out, tr = nc.forward(net, X)
            opt.step(net, nc.backward(net, tr, (out - y) / len(y)))
        return [l.weights.copy() for l in net]

    for a, b in zip(run(), run()):
        np.testing.assert_array_equal(a, b)


def test_bias_shape_check():
    with pytest.raises(ShapeError):
        DenseLayer(np.ones((2, 3)), np.ones(3))

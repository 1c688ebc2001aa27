import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import fd_check, naive_ce, naive_forward, naive_mse
from latentleak.nn import (Adam, DenseLayer, GradientSet, Sequential, backprop, backward, build_mlp, forward,
                           loss_mse, loss_softmax_ce, per_sample_gradients, predict, sgd_step)
from latentleak.rng import SeededRng


def random_net(seed, widths, acts=None):
    acts = acts or ("relu",) * (len(widths) - 2) + ("identity",)
    net = build_mlp(widths, acts, SeededRng(seed))
    # non-zero biases so the bias path is exercised
    gen = np.random.default_rng(seed)
    return Sequential(tuple(DenseLayer(l.weight, gen.normal(0, 0.3, l.bias.shape), l.activation)
                            for l in net.layers))


# --- forward ----------------------------------------------------------------

def test_identity_relu_clamp():
    net = Sequential((DenseLayer(np.eye(2), np.zeros(2), "relu"),))
    assert predict(net, [[1.0, -1.0]]).tolist() == [[1.0, 0.0]]


def test_crafted_rows_give_mean_minus_threshold():
    d, h = 4, np.array([0.1, 0.5, 0.9])
    layer = DenseLayer(np.full((3, d), 1.0 / d), -h, "relu")
    x = np.array([[0.2, 0.4, 1.0, 0.6]])
    cache, _ = forward(Sequential((layer,)), x)
    assert np.allclose(cache.pre[0], x.mean() - h, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_forward_matches_loop_reference(seed):
    net = random_net(seed, (7, 6, 5, 3))
    x = np.random.default_rng(seed).normal(size=(4, 7))
    assert np.max(np.abs(predict(net, x) - naive_forward(net, x))) <= 1e-12


def test_forward_rejects_bad_width_with_report():
    net = random_net(0, (5, 3, 2))
    with pytest.raises(ValueError, match="5"):
        forward(net, np.zeros((2, 4)))


def test_sequential_rejects_incompatible_layers():
    with pytest.raises(ValueError):
        Sequential((DenseLayer(np.zeros((3, 2)), np.zeros(3)), DenseLayer(np.zeros((1, 4)), np.zeros(1))))


def test_dense_layer_validation():
    with pytest.raises(ValueError):
        DenseLayer(np.zeros((2, 2)), np.zeros(3))
    with pytest.raises(ValueError):
        DenseLayer(np.zeros((2, 2)), np.zeros(2), "tanh")


# --- backward ---------------------------------------------------------------

def test_zero_loss_gradient_gives_zero_grads():
    net = random_net(1, (4, 3, 2))
    cache, out = forward(net, np.ones((3, 4)))
    g = backward(net, cache, np.zeros_like(out))
    assert all(not a.any() for a in g.arrays())


def test_stale_cache_rejected():
    a, b = random_net(1, (4, 3, 2)), random_net(2, (4, 3, 2))
    cache, out = forward(a, np.ones((1, 4)))
    with pytest.raises(ValueError, match="stale"):
        backward(b, cache, out)


@pytest.mark.parametrize("seed", range(3))
def test_two_layer_ce_gradients_match_finite_differences(seed):
    gen = np.random.default_rng(seed)
    net = random_net(seed, (5, 6, 3))
    x, y = gen.normal(size=(4, 5)), gen.integers(0, 3, 4)
    cache, logits = forward(net, x)
    _, g = loss_softmax_ce(logits, y)
    grads = backward(net, cache, g)
    worst, checked, skipped = fd_check(net, lambda n: naive_ce(naive_forward(n, x), y), grads, x)
    assert checked > 0.9 * (checked + skipped)
    assert worst <= 1e-4


def test_negative_leak_preactivations_contribute_nothing():
    layer = DenseLayer(np.full((3, 2), 0.5), -np.array([5.0, 6.0, 7.0]), "relu")
    net = Sequential((layer, DenseLayer(np.ones((2, 3)), np.zeros(2))))
    cache, out = forward(net, np.array([[1.0, 2.0]]))
    g = backward(net, cache, np.ones_like(out))
    assert not g.weights[0].any() and not g.biases[0].any()


def test_relu_derivative_at_zero_is_zero():
    net = Sequential((DenseLayer(np.ones((1, 1)), np.zeros(1), "relu"), DenseLayer(np.ones((1, 1)), np.zeros(1))))
    cache, out = forward(net, np.zeros((1, 1)))
    g = backward(net, cache, np.ones_like(out))
    assert g.weights[0][0, 0] == 0.0 and g.biases[0][0] == 0.0


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_batch_gradient_is_sum_of_per_sample(seed, n):
    gen = np.random.default_rng(seed)
    net = random_net(seed, (4, 5, 3, 2))
    x, y = gen.normal(size=(n, 4)), gen.integers(0, 2, n)
    cache, logits = forward(net, x)
    _, g = loss_softmax_ce(logits, y, reduction="sum")
    total = backward(net, cache, g)
    singles = GradientSet.zeros_like(net)
    for i in range(n):
        c1, l1 = forward(net, x[i:i + 1])
        _, g1 = loss_softmax_ce(l1, y[i:i + 1], reduction="sum")
        singles = singles + backward(net, c1, g1)
    assert all(np.max(np.abs(a - b)) <= 1e-10 for a, b in zip(total.arrays(), singles.arrays()))
    per = per_sample_gradients(net, cache, g)
    summed = per[0]
    for p in per[1:]:
        summed = summed + p
    assert all(np.max(np.abs(a - b)) <= 1e-10 for a, b in zip(total.arrays(), summed.arrays()))


def test_forward_backward_bitwise_deterministic():
    net = random_net(4, (6, 5, 3))
    x = np.random.default_rng(4).normal(size=(5, 6))
    c1, o1 = forward(net, x)
    c2, o2 = forward(net, x)
    assert np.array_equal(o1, o2)
    assert backward(net, c1, o1).equal(backward(net, c2, o2))


def test_input_gradient_matches_finite_differences():
    net = random_net(5, (3, 4, 2))
    x = np.random.default_rng(5).normal(size=(1, 3))
    cache, out = forward(net, x)
    _, gx = backprop(net, cache, np.ones_like(out))
    for j in range(3):
        e = np.zeros_like(x)
        e[0, j] = 1e-6
        fd = (predict(net, x + e).sum() - predict(net, x - e).sum()) / 2e-6
        assert abs(fd - gx[0, j]) < 1e-6


def test_property2_identical_w2_rows_give_identical_hidden_gradients():
    gen = np.random.default_rng(0)
    k, d, o = 12, 4, 3
    leak1 = DenseLayer(np.full((k, d), 1.0 / d), -np.linspace(-1, 1, k), "relu")
    leak2 = DenseLayer(np.full((o, k), 0.7), np.zeros(o))
    tail = DenseLayer(gen.normal(size=(5, o)), gen.normal(size=5))
    net = Sequential((leak1, leak2, tail))
    x, y = gen.normal(size=(6, d)), gen.integers(0, 5, 6)
    cache, logits = forward(net, x)
    _, g = loss_softmax_ce(logits, y, reduction="sum")
    # dL/dy_l for each sample: back through the tail and the w2 layer
    dz = g @ tail.weight
    dy = dz @ leak2.weight
    for s in range(6):
        active = cache.pre[0][s] > 0
        if active.sum() > 1:
            assert np.ptp(dy[s, active]) <= 1e-12


# --- losses -----------------------------------------------------------------

def test_ce_uniform_two_class_is_ln2():
    loss, _ = loss_softmax_ce(np.zeros((3, 2)), [0, 1, 1])
    assert loss == pytest.approx(math.log(2), abs=1e-15)


def test_ce_saturates_to_zero():
    loss, _ = loss_softmax_ce(np.array([[1000.0, 0.0, 0.0]]), [0])
    assert loss < 1e-12


def test_ce_gradient_shape_and_normalisation():
    z = np.random.default_rng(1).normal(size=(4, 3))
    _, gm = loss_softmax_ce(z, [0, 1, 2, 0])
    _, gs = loss_softmax_ce(z, [0, 1, 2, 0], reduction="sum")
    assert np.allclose(gm * 4, gs, atol=1e-15)
    assert np.allclose(gs.sum(axis=1), 0.0, atol=1e-15)


def test_ce_gradient_matches_finite_differences():
    z = np.random.default_rng(2).normal(size=(3, 4))
    y = [1, 3, 0]
    _, g = loss_softmax_ce(z, y)
    for idx in np.ndindex(z.shape):
        e = np.zeros_like(z)
        e[idx] = 1e-5
        fd = (naive_ce(z + e, y) - naive_ce(z - e, y)) / 2e-5
        assert abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-6) <= 1e-4


def test_ce_rejects_out_of_range_labels():
    with pytest.raises(ValueError):
        loss_softmax_ce(np.zeros((2, 3)), [0, 3])


def test_mse_values_and_gradient():
    p = np.random.default_rng(3).normal(size=(2, 3))
    assert loss_mse(p, p)[0] == 0.0
    assert loss_mse(p + 0.1, p)[0] == pytest.approx(0.01, abs=1e-15)
    t = np.zeros_like(p)
    _, g = loss_mse(p, t)
    for idx in np.ndindex(p.shape):
        e = np.zeros_like(p)
        e[idx] = 1e-5
        fd = (naive_mse(p + e, t) - naive_mse(p - e, t)) / 2e-5
        assert abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-6) <= 1e-4
    with pytest.raises(ValueError):
        loss_mse(p, np.zeros((3, 2)))


# --- optimisers -------------------------------------------------------------

def test_sgd_zero_grad_is_bitwise_noop():
    net = random_net(6, (3, 2))
    out = sgd_step(net, GradientSet.zeros_like(net), 0.5)
    assert GradientSet.from_model(out).equal(GradientSet.from_model(net))


def test_sgd_lr_one_grad_theta_zeroes_parameters():
    net = random_net(6, (3, 4, 2))
    out = sgd_step(net, GradientSet.from_model(net), 1.0)
    assert all(not a.any() for a in GradientSet.from_model(out).arrays())


def test_two_small_steps_equal_one_summed_step_on_linear_model():
    net = Sequential((DenseLayer(np.array([[0.5, -1.0]]), np.array([0.2])),))
    g1 = GradientSet([np.array([[1.0, 2.0]])], [np.array([0.5])])
    g2 = GradientSet([np.array([[-0.5, 0.25]])], [np.array([1.5])])
    two = sgd_step(sgd_step(net, g1, 0.1), g2, 0.1)
    one = sgd_step(net, g1 + g2, 0.1)
    for a, b in zip(GradientSet.from_model(two).arrays(), GradientSet.from_model(one).arrays()):
        assert np.max(np.abs(a - b)) <= 1e-15


def test_sgd_rejects_bad_inputs():
    net = random_net(6, (3, 2))
    bad = GradientSet([np.full((2, 3), np.nan)], [np.zeros(2)])
    with pytest.raises(ValueError):
        sgd_step(net, bad, 0.1)
    with pytest.raises(ValueError):
        sgd_step(net, GradientSet.zeros_like(net), 0.0)
    with pytest.raises(ValueError):
        sgd_step(net, GradientSet([np.zeros((3, 3))], [np.zeros(3)]), 0.1)


def test_adam_reduces_a_quadratic():
    net = Sequential((DenseLayer(np.array([[3.0]]), np.array([-2.0])),))
    opt = Adam(lr=0.05)
    x, t = np.array([[1.0], [2.0]]), np.array([[0.0], [0.0]])
    first = None
    for _ in range(1000):
        cache, out = forward(net, x)
        loss, g = loss_mse(out, t)
        first = first if first is not None else loss
        net = opt.step(net, backward(net, cache, g))
    assert loss < 1e-3 * first


# --- GradientSet -----------------------------------------------------------

def test_gradient_set_arithmetic():
    net = random_net(7, (3, 4, 2))
    g = GradientSet.from_model(net)
    assert (g + g).equal(g * 2.0)
    assert (2.0 * g).equal(g * 2.0)
    assert not (g - g).flatten().any()
    assert (-g).equal(g * -1.0)
    assert g.norm() == pytest.approx(np.linalg.norm(g.flatten()))
    r = g.restrict([1])
    assert len(r.weights) == 1 and np.array_equal(r.weights[0], net.layers[1].weight)
    with pytest.raises(ValueError):
        g + GradientSet.zeros_like(random_net(0, (3, 2)))

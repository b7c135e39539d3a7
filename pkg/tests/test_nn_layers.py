import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fdd2d.nn import params as P
from fdd2d.nn.gradcheck import check_store, numeric_grad, relative_error
from fdd2d.nn.layers import (AttentionFuse, BatchNorm, Conv2d, Dense, DegenerateBatch, DimensionGate,
                             Dropout, ReLU, ResidualBlock, Sequential, conv_output_size, cross_entropy,
                             log_softmax, residual_add, softmax, softmax_backward, softmax_cross_entropy)
from oracles import naive_conv2d

TOL = 1e-4


def gradcheck_layer(layer, store, x, training=False, reseed=None):
    """Check input and parameter gradients of ``sum(layer(x) * R)``."""
    rng = np.random.default_rng(0)

    def run():
        if reseed:
            reseed()
        return layer.forward(x, training)

    R = rng.normal(size=run().shape)

    def f():
        return float((run() * R).sum())

    if store is not None:
        store.zero_grad()
    run()
    gx = layer.backward(R)
    errors = check_store(f, store) if store is not None else {}
    errors["input"] = relative_error(numeric_grad(f, x), gx)
    return errors


def buffers(store):
    """Copy of the non-trainable entries, which training-mode forwards update."""
    return {n: store[n].copy() for n in store.names(trainable=False)}


def assert_small(errors):
    bad = {k: v for k, v in errors.items() if v > TOL}
    assert not bad, bad


# ---------------------------------------------------------------- forward values


def test_dense_forward_hand_product():
    s = P.ParameterStore()
    d = Dense(s, "d", 3, 2, np.random.default_rng(0))
    s["d.W"][...] = [[1, 2], [3, 4], [5, 6]]
    s["d.b"][...] = [0.5, -1]
    x = np.array([[1.0, 0, -1], [2, 1, 0]])
    np.testing.assert_array_equal(d.forward(x), [[-4 + 0.5, -4 - 1], [5 + 0.5, 8 - 1]])


def test_dense_identity_and_bias():
    s = P.ParameterStore()
    d = Dense(s, "d", 3, 3, np.random.default_rng(0))
    s["d.W"][...] = np.eye(3)
    x = np.random.default_rng(1).normal(size=(4, 3))
    np.testing.assert_array_equal(d.forward(x), x)
    s["d.b"][...] = [1, 2, 3]
    np.testing.assert_array_equal(d.forward(np.zeros((2, 3))), [[1, 2, 3]] * 2)


def test_dense_shape_mismatch():
    s = P.ParameterStore()
    d = Dense(s, "d", 3, 2, np.random.default_rng(0))
    with pytest.raises(P.ShapeMismatch):
        d.forward(np.zeros((2, 4)))


def test_glorot_bounds():
    s = P.ParameterStore()
    Dense(s, "d", 100, 50, np.random.default_rng(0))
    limit = math.sqrt(6 / 150)
    w = s["d.W"]
    assert np.all(np.abs(w) <= limit) and w.std() == pytest.approx(limit / math.sqrt(3), rel=0.05)
    np.testing.assert_array_equal(s["d.b"], 0.0)


def test_softmax_values():
    np.testing.assert_allclose(softmax(np.array([[0.0, math.log(3)]])), [[0.25, 0.75]], rtol=1e-15)
    np.testing.assert_allclose(softmax(np.zeros((1, 4))), [[0.25] * 4])
    assert np.all(np.isfinite(softmax(np.array([[1000.0, -1000.0]]))))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_properties(x, c):
    y = softmax(x)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, rtol=1e-12)
    assert np.all(y >= 0)
    np.testing.assert_allclose(softmax(x + c), y, rtol=1e-9, atol=1e-300)
    np.testing.assert_allclose(np.exp(log_softmax(x)), y, rtol=1e-9, atol=1e-300)


def test_softmax_backward_matches_fd():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 4))
    R = rng.normal(size=(3, 4))
    num = numeric_grad(lambda: float((softmax(x) * R).sum()), x)
    assert relative_error(num, softmax_backward(softmax(x), R)) < 1e-8


def test_batchnorm_train_statistics():
    s = P.ParameterStore()
    bn = BatchNorm(s, "bn", 4)
    x = np.random.default_rng(3).normal(3.0, 2.0, size=(64, 4))
    y = bn.forward(x, training=True)
    np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(y.var(axis=0), 1.0, atol=1e-3)  # eps in the denominator


def test_batchnorm_identity_on_standard_input():
    s = P.ParameterStore()
    bn = BatchNorm(s, "bn", 3)
    x = np.random.default_rng(4).normal(size=(8, 3))
    np.testing.assert_allclose(bn.forward(x, training=False), x / math.sqrt(1 + 1e-5), rtol=1e-12)


def test_batchnorm_running_stats_converge():
    s = P.ParameterStore()
    bn = BatchNorm(s, "bn", 2)
    x = np.random.default_rng(5).normal([1.0, -2.0], [0.5, 3.0], size=(256, 2))
    for _ in range(300):
        train = bn.forward(x, training=True)
    infer = bn.forward(x, training=False)
    np.testing.assert_allclose(infer, train, rtol=0.02, atol=1e-6)
    np.testing.assert_allclose(s["bn.running_var"], x.var(axis=0, ddof=1), rtol=1e-9)


def test_batchnorm_degenerate_batch():
    s = P.ParameterStore()
    bn = BatchNorm(s, "bn", 2)
    with pytest.raises(DegenerateBatch):
        bn.forward(np.zeros((1, 2)), training=True)
    bn.forward(np.zeros((1, 2)), training=False)


def test_relu_dropout_residual():
    r = ReLU()
    np.testing.assert_array_equal(r.forward(np.array([-1.0, 2.0])), [0.0, 2.0])
    d = Dropout(0.0, 1)
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(d.forward(x, training=True), x)
    np.testing.assert_array_equal(Dropout(0.5, 1).forward(x, training=False), x)
    np.testing.assert_array_equal(residual_add(x, x), 2 * x)
    with pytest.raises(ValueError):
        Dropout(1.0)


def test_dropout_expectation():
    d = Dropout(0.2, 7)
    x = np.full((100_000, 3), 2.0)
    assert d.forward(x, training=True).mean() == pytest.approx(2.0, rel=0.01)


def test_dropout_reseed_reproducible():
    d = Dropout(0.3, 1)
    x = np.ones((4, 4))
    a = d.forward(x, training=True)
    d.reseed(1)
    np.testing.assert_array_equal(d.forward(x, training=True), a)


def test_attention_weights_sum_to_one():
    s = P.ParameterStore()
    att = AttentionFuse(s, "att", 5, 4, np.random.default_rng(0))
    u = np.random.default_rng(1).normal(size=(3, 5, 4))
    out = att.forward(u)
    np.testing.assert_allclose(att.weights.sum(axis=1), 1.0)
    np.testing.assert_allclose(out, np.einsum("bu,buf->bf", att.weights, u))
    s["att.W"][...] = 0.0
    np.testing.assert_allclose(att.forward(u), u.mean(axis=1))
    with pytest.raises(P.ShapeMismatch):
        att.forward(np.zeros((3, 4, 4)))


def test_dimension_gate_uniform_is_identity():
    s = P.ParameterStore()
    g = DimensionGate(s, "g", 6, np.random.default_rng(0))
    s["g.W"][...] = 0.0
    h = np.random.default_rng(1).normal(size=(2, 6))
    np.testing.assert_allclose(g.forward(h), h, rtol=1e-14)


# ---------------------------------------------------------------- convolution


def test_conv_output_sizes_at_default_configuration():
    # user-dimension branch on [R, K, R] input, channel branch on [K, R, R], return conv on [F_B + ... ]
    assert (conv_output_size(5, 2), conv_output_size(2, 2)) == (4, 1)
    assert (conv_output_size(5, 2), conv_output_size(5, 2)) == (4, 4)
    assert (conv_output_size(6, 2), conv_output_size(10, 2)) == (5, 9)
    assert conv_output_size(7, 3, stride=2, pad=1) == 4
    with pytest.raises(P.ShapeMismatch):
        conv_output_size(1, 2)


def test_conv_forward_naive_oracle():
    s = P.ParameterStore()
    c = Conv2d(s, "c", 3, 4, (2, 2), rng=np.random.default_rng(0))
    s["c.b"][...] = [0.1, 0.2, 0.3, 0.4]
    x = np.random.default_rng(1).normal(size=(2, 3, 5, 4))
    expected = naive_conv2d(x, s["c.K"]) + s["c.b"][None, :, None, None]
    out = c.forward(x)
    assert out.shape == (2, 4, 4, 3) and c.output_shape(5, 4) == (4, 3)
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_conv_known_value():
    s = P.ParameterStore()
    c = Conv2d(s, "c", 1, 1, (2, 2), rng=np.random.default_rng(0))
    s["c.K"][...] = 1.0
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    np.testing.assert_array_equal(c.forward(x)[0, 0], [[8, 12], [20, 24]])


# ---------------------------------------------------------------- gradients


def test_grad_dense():
    s = P.ParameterStore()
    d = Dense(s, "d", 5, 3, np.random.default_rng(0))
    assert_small(gradcheck_layer(d, s, np.random.default_rng(1).normal(size=(4, 5))))


@pytest.mark.parametrize("training", [False, True])
def test_grad_batchnorm(training):
    s = P.ParameterStore()
    bn = BatchNorm(s, "bn", 4)
    s["bn.gamma"][...] = [0.5, 1.5, -1.0, 2.0]
    s["bn.beta"][...] = [0.1, 0.0, -0.2, 0.3]
    s["bn.running_var"][...] = [0.7, 1.3, 2.0, 0.4]
    x = np.random.default_rng(2).normal(size=(6, 4))
    # running stats move on every training forward; hold them fixed for the probe
    if training:
        frozen = buffers(s)
        errors = gradcheck_layer(bn, s, x, True, reseed=lambda: s.restore(frozen))
    else:
        errors = gradcheck_layer(bn, s, x, False)
    assert_small(errors)


def test_grad_relu():
    x = np.random.default_rng(3).normal(size=(4, 5))
    x[np.abs(x) < 1e-3] = 0.5
    assert_small(gradcheck_layer(ReLU(), None, x))


def test_grad_dropout():
    d = Dropout(0.3, 1)
    assert_small(gradcheck_layer(d, None, np.random.default_rng(4).normal(size=(4, 5)), True,
                                 reseed=lambda: d.reseed(1)))


@pytest.mark.parametrize("training", [False, True])
def test_grad_residual_block(training):
    s = P.ParameterStore()
    blk = ResidualBlock(s, "r", 6, np.random.default_rng(0), dropout=0.2, dropout_seed=3)
    x = np.random.default_rng(5).normal(size=(8, 6))
    frozen = buffers(s)

    def reseed():
        s.restore(frozen)
        blk.drop.reseed(3)
    assert_small(gradcheck_layer(blk, s, x, training, reseed=reseed))


@pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1)])
def test_grad_conv(stride, pad):
    s = P.ParameterStore()
    c = Conv2d(s, "c", 2, 3, (2, 2), stride, pad, rng=np.random.default_rng(0))
    s["c.b"][...] = [0.1, -0.2, 0.3]
    assert_small(gradcheck_layer(c, s, np.random.default_rng(6).normal(size=(2, 2, 5, 4))))


def test_grad_attention():
    s = P.ParameterStore()
    att = AttentionFuse(s, "att", 5, 3, np.random.default_rng(0))
    assert_small(gradcheck_layer(att, s, np.random.default_rng(7).normal(size=(2, 5, 3))))


def test_grad_dimension_gate():
    s = P.ParameterStore()
    g = DimensionGate(s, "g", 5, np.random.default_rng(0))
    assert_small(gradcheck_layer(g, s, np.random.default_rng(8).normal(size=(3, 5))))


def test_grad_sequential():
    s = P.ParameterStore()
    rng = np.random.default_rng(0)
    net = Sequential(Dense(s, "a", 4, 6, rng), ReLU(), Dense(s, "b", 6, 2, rng))
    assert_small(gradcheck_layer(net, s, np.random.default_rng(9).normal(size=(3, 4))))


def test_softmax_cross_entropy_value_and_grad():
    rng = np.random.default_rng(10)
    logits = rng.normal(size=(4, 2, 3))
    labels = rng.integers(0, 3, size=(4, 2))
    loss, grad = softmax_cross_entropy(logits, labels)
    onehot = np.eye(3)[labels]
    expected = sum(cross_entropy(softmax(logits[:, g]), onehot[:, g]) for g in range(2))
    assert loss == pytest.approx(expected, rel=1e-12)
    num = numeric_grad(lambda: softmax_cross_entropy(logits, labels)[0], logits)
    assert relative_error(num, grad) < 1e-8


def test_cross_entropy_uniform():
    assert cross_entropy(np.full((2, 4), 0.25), np.eye(4)[[0, 3]]) == pytest.approx(math.log(4), rel=1e-10)


# ---------------------------------------------------------------- store and Adam


def test_adam_zero_gradient_no_change():
    s = P.ParameterStore()
    s.add("w", np.array([1.0, -2.0]))
    P.adam_step(s, 0.1)
    np.testing.assert_array_equal(s["w"], [1.0, -2.0])


def test_adam_single_step_hand_value():
    s = P.ParameterStore()
    s.add("w", np.array([1.0, -2.0, 0.5]))
    s.accumulate("w", np.array([0.3, -4.0, 1e-9]))
    P.adam_step(s, 0.01)
    # m_hat = g, v_hat = g^2 after bias correction: step = lr * g / (|g| + eps)
    expected = [1.0 - 0.01 * 0.3 / (0.3 + 1e-8), -2.0 + 0.01 * 4.0 / (4.0 + 1e-8),
                0.5 - 0.01 * 1e-9 / (1e-9 + 1e-8)]
    np.testing.assert_allclose(s["w"], expected, rtol=1e-14)


def test_store_roundtrip_and_errors():
    s = P.ParameterStore()
    s.add("a.W", np.arange(6.0).reshape(2, 3))
    s.add("a.rm", np.ones(3), trainable=False)
    s.accumulate("a.W", np.ones((2, 3)))
    P.adam_step(s, 0.1)
    back = P.ParameterStore.from_bytes(s.to_bytes())
    np.testing.assert_array_equal(back["a.W"], s["a.W"])
    assert back.names() == s.names() and back.step == s.step
    assert back.to_bytes() == s.to_bytes()
    assert s.count() == 6 and s.count("a.W") == 6  # trainable entries only
    with pytest.raises(P.ShapeMismatch):
        s.accumulate("a.W", np.ones(3))
    buf = bytearray(s.to_bytes())
    buf[-10] ^= 1
    with pytest.raises(P.ParameterFormatError):
        P.ParameterStore.from_bytes(bytes(buf))

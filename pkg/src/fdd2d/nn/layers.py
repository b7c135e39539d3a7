"""Layers with hand-written backward passes.

Each layer caches what it needs in ``forward`` and its ``backward`` takes
the upstream gradient, accumulates parameter gradients into the store and
returns the gradient with respect to the input.
"""

from __future__ import annotations

import numpy as np

from .. import _kernels
from .params import ParameterStore, ShapeMismatch


class DegenerateBatch(ValueError):
    pass


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax_backward(y, grad):
    """Gradient through a last-axis softmax given its output ``y``."""
    return y * (grad - (grad * y).sum(axis=-1, keepdims=True))


class Layer:
    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, store: ParameterStore, name: str, n_in: int, n_out: int, rng, bias=True):
        self.store, self.name = store, name
        self.n_in, self.n_out = n_in, n_out
        self.bias = bias
        store.add(f"{name}.W", glorot(rng, n_in, n_out, (n_in, n_out)))
        if bias:
            store.add(f"{name}.b", np.zeros(n_out))

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatch(f"{self.name}: expected [B, {self.n_in}], got {list(x.shape)}")
        self._x = x
        out = x @ self.store[f"{self.name}.W"]
        if self.bias:
            out += self.store[f"{self.name}.b"]
        return out

    def backward(self, grad):
        self.store.accumulate(f"{self.name}.W", self._x.T @ grad)
        if self.bias:
            self.store.accumulate(f"{self.name}.b", grad.sum(axis=0))
        return grad @ self.store[f"{self.name}.W"].T


class BatchNorm(Layer):
    def __init__(self, store: ParameterStore, name: str, n_features: int, momentum=0.9, eps=1e-5):
        self.store, self.name = store, name
        self.momentum, self.eps = momentum, eps
        store.add(f"{name}.gamma", np.ones(n_features))
        store.add(f"{name}.beta", np.zeros(n_features))
        store.add(f"{name}.running_mean", np.zeros(n_features), trainable=False)
        store.add(f"{name}.running_var", np.ones(n_features), trainable=False)

    def forward(self, x, training=False):
        gamma = self.store[f"{self.name}.gamma"]
        beta = self.store[f"{self.name}.beta"]
        if x.ndim != 2 or x.shape[1] != gamma.shape[0]:
            raise ShapeMismatch(f"{self.name}: expected [B, {gamma.shape[0]}], got {list(x.shape)}")
        rm = self.store[f"{self.name}.running_mean"]
        rv = self.store[f"{self.name}.running_var"]
        self._training = training
        if not training:
            # one fused affine map; xhat is rebuilt in backward if needed
            self._x, self._mu = x, rm.copy()
            self._inv_std = 1.0 / np.sqrt(rv + self.eps)
            scale = gamma * self._inv_std
            out = x * scale
            out += beta - self._mu * scale
            return out
        B = x.shape[0]
        if B < 2:
            raise DegenerateBatch(f"{self.name}: batch norm needs at least 2 rows in training")
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        rm *= self.momentum
        rm += (1 - self.momentum) * mu
        rv *= self.momentum
        rv += (1 - self.momentum) * var * (B / (B - 1))
        self._inv_std = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mu) * self._inv_std
        return gamma * self._xhat + beta

    def backward(self, grad):
        gamma = self.store[f"{self.name}.gamma"]
        xhat = self._xhat if self._training else (self._x - self._mu) * self._inv_std
        self.store.accumulate(f"{self.name}.gamma", (grad * xhat).sum(axis=0))
        self.store.accumulate(f"{self.name}.beta", grad.sum(axis=0))
        dxhat = grad * gamma
        if not self._training:
            return dxhat * self._inv_std
        B = grad.shape[0]
        return (self._inv_std / B) * (
            B * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
        )


class ReLU(Layer):
    def forward(self, x, training=False):
        self._x = x
        return np.maximum(x, 0.0)

    def backward(self, grad):
        return grad * (self._x > 0)


class Dropout(Layer):
    """Inverted dropout; identity at inference."""

    def __init__(self, rate: float, seed=None):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self.reseed(seed)

    def reseed(self, seed):
        self.rng = np.random.default_rng(seed)

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._scale = None
            return x
        keep = self.rng.random(x.shape) >= self.rate
        self._scale = keep / (1.0 - self.rate)
        return x * self._scale

    def backward(self, grad):
        return grad if self._scale is None else grad * self._scale


def residual_add(x, y):
    return x + y


class Sequential(Layer):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


class ResidualBlock(Layer):
    """Dense -> Norm -> ReLU -> (+ input) -> Dropout, width preserved."""

    def __init__(self, store, name, width, rng, dropout=0.2, dropout_seed=None, momentum=0.9):
        self.body = Sequential(
            Dense(store, f"{name}.dense", width, width, rng, bias=False),
            BatchNorm(store, f"{name}.norm", width, momentum=momentum),
            ReLU(),
        )
        self.drop = Dropout(dropout, dropout_seed)

    def forward(self, x, training=False):
        return self.drop.forward(residual_add(x, self.body.forward(x, training)), training)

    def backward(self, grad):
        g = self.drop.backward(grad)
        return g + self.body.backward(g)


def conv_output_size(n: int, kernel: int, stride: int = 1, pad: int = 0) -> int:
    """(n + 2*pad - kernel) / stride + 1, floored; raises if below 1."""
    size = (n + 2 * pad - kernel) // stride + 1
    if size < 1:
        raise ShapeMismatch(f"convolution output size {size} < 1 for input {n}, kernel {kernel}")
    return size


class Conv2d(Layer):
    """Multi-input-channel 2-D cross-correlation summed over input channels, plus bias."""

    def __init__(self, store, name, c_in, c_out, kernel=(2, 2), stride=1, pad=0, rng=None):
        self.store, self.name = store, name
        self.c_in, self.c_out = c_in, c_out
        self.kernel = tuple(kernel)
        self.stride, self.pad = stride, pad
        kh, kw = self.kernel
        fan_in, fan_out = c_in * kh * kw, c_out * kh * kw
        store.add(f"{name}.K", glorot(rng, fan_in, fan_out, (c_out, c_in, kh, kw)))
        store.add(f"{name}.b", np.zeros(c_out))

    def output_shape(self, h, w):
        return (conv_output_size(h, self.kernel[0], self.stride, self.pad),
                conv_output_size(w, self.kernel[1], self.stride, self.pad))

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeMismatch(f"{self.name}: expected [B, {self.c_in}, H, W], got {list(x.shape)}")
        self.output_shape(*x.shape[2:])
        self._x = x
        out = _kernels.conv2d_forward(x, self.store[f"{self.name}.K"], self.stride, self.pad)
        return out + self.store[f"{self.name}.b"][None, :, None, None]

    def backward(self, grad):
        gx, gw = _kernels.conv2d_backward(self._x, self.store[f"{self.name}.K"], grad, self.stride, self.pad)
        self.store.accumulate(f"{self.name}.K", gw)
        self.store.accumulate(f"{self.name}.b", grad.sum(axis=(0, 2, 3)))
        return gx


class AttentionFuse(Layer):
    """Weighted sum of per-user vectors with weights softmax(W · concat(users))."""

    def __init__(self, store, name, n_users, width, rng):
        self.n_users, self.width = n_users, width
        self.score = Dense(store, name, n_users * width, n_users, rng)

    def forward(self, u, training=False):
        if u.ndim != 3 or u.shape[1:] != (self.n_users, self.width):
            raise ShapeMismatch(f"attention expects [B, {self.n_users}, {self.width}], got {list(u.shape)}")
        self._u = u
        self.weights = softmax(self.score.forward(u.reshape(u.shape[0], -1), training))
        return np.einsum("bu,buf->bf", self.weights, u)

    def backward(self, grad):
        u, w = self._u, self.weights
        du = w[:, :, None] * grad[:, None, :]
        dw = np.einsum("bf,buf->bu", grad, u)
        dscore = softmax_backward(w, dw)
        du += self.score.backward(dscore).reshape(u.shape)
        return du


class DimensionGate(Layer):
    """Per-dimension attention: out = F * softmax(Dense(h)) * h."""

    def __init__(self, store, name, width, rng):
        self.width = width
        self.score = Dense(store, name, width, width, rng)

    def forward(self, h, training=False):
        self._h = h
        self.weights = softmax(self.score.forward(h, training))
        return self.width * self.weights * h

    def backward(self, grad):
        a, h = self.weights, self._h
        dh = self.width * grad * a
        da = self.width * grad * h
        return dh + self.score.backward(softmax_backward(a, da))


# ---------------------------------------------------------------- losses

LOG_EPS = 1e-12


def cross_entropy(y, target):
    """Mean over the batch of -sum(target * log(y + eps)); y, target [B, C]."""
    return float(-(target * np.log(y + LOG_EPS)).sum(axis=-1).mean())


def softmax_cross_entropy(logits, labels):
    """Cross-entropy of softmax(logits) against integer labels.

    ``logits`` is [B, G, C] for G grouped heads; the loss is the batch mean
    summed over heads. Returns (loss, gradient w.r.t. logits).
    """
    B, G, C = logits.shape
    y = softmax(logits)
    onehot = np.zeros_like(y)
    np.put_along_axis(onehot, labels[..., None].astype(np.int64), 1.0, axis=-1)
    p_true = (y * onehot).sum(axis=-1, keepdims=True)
    loss = float(-np.log(p_true + LOG_EPS).sum() / B)
    grad = (p_true / (p_true + LOG_EPS)) * (y - onehot) / B
    return loss, grad

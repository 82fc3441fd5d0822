"""Minimal dense/convolutional network with from-scratch backprop.

Double-precision throughout so analytic gradients can be checked against
central finite differences.  Batches are channel-last ``(N, H, W, C)``.
Training is plain SGD with momentum, weight decay and a multistep learning
rate schedule, run over a deterministic seeded batch order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class Layer:
    """Forward/backward unit; parametric layers expose params and grads."""

    params: list[np.ndarray] = []
    grads: list[np.ndarray] = []

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    n, h, w, c = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    s0, s1, s2, s3 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x, shape=(n, oh, ow, kh, kw, c), strides=(s0, s1, s2, s1, s2, s3)
    )
    return windows.reshape(n * oh * ow, kh * kw * c)


class Conv2D(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, padding: int, rng: np.random.Generator):
        fan_in = kernel * kernel * in_channels
        bound = np.sqrt(3.0 / fan_in)
        self.w = rng.uniform(-bound, bound, size=(kernel, kernel, in_channels, out_channels))
        self.b = np.zeros(out_channels)
        self.kernel = kernel
        self.padding = padding
        self.params = [self.w, self.b]
        self.grads = [np.zeros_like(self.w), np.zeros_like(self.b)]

    def output_shape(self, in_shape):
        h, w, _ = in_shape
        k, p = self.kernel, self.padding
        return (h + 2 * p - k + 1, w + 2 * p - k + 1, self.w.shape[3])

    def forward(self, x):
        p = self.padding
        if p:
            x = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        self._x_padded = x
        n, h, w, c = x.shape
        k = self.kernel
        oh, ow = h - k + 1, w - k + 1
        cols = _im2col(x, k, k)
        self._cols = cols
        out = cols @ self.w.reshape(-1, self.w.shape[3]) + self.b
        return out.reshape(n, oh, ow, -1)

    def backward(self, grad_out):
        n, oh, ow, co = grad_out.shape
        k, p = self.kernel, self.padding
        g = grad_out.reshape(-1, co)
        self.grads[0][...] = (self._cols.T @ g).reshape(self.w.shape)
        self.grads[1][...] = g.sum(axis=0)
        gcols = g @ self.w.reshape(-1, co).T  # (N*oh*ow, k*k*cin)
        gx = np.zeros_like(self._x_padded)
        gcols = gcols.reshape(n, oh, ow, k, k, -1)
        for i in range(k):
            for j in range(k):
                gx[:, i : i + oh, j : j + ow, :] += gcols[:, :, :, i, j, :]
        if p:
            gx = gx[:, p:-p, p:-p, :]
        return gx


class ReLU(Layer):
    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out):
        return np.where(self._mask, grad_out, 0.0)


class MaxPool2x2(Layer):
    """2x2 max pooling.  The published layer table lists stride 1, but the
    downstream shapes (16->8, 8->4) only chain with stride 2, so stride 2
    it is."""

    def output_shape(self, in_shape):
        h, w, c = in_shape
        return (h // 2, w // 2, c)

    def forward(self, x):
        n, h, w, c = x.shape
        blocks = x.reshape(n, h // 2, 2, w // 2, 2, c)
        out = blocks.max(axis=(2, 4))
        self._mask = blocks == out[:, :, None, :, None, :]
        return out

    def backward(self, grad_out):
        n, oh, ow, c = grad_out.shape
        g = grad_out[:, :, None, :, None, :] * self._mask
        # ties split the gradient; normalize by tie count for correctness
        counts = self._mask.sum(axis=(2, 4), keepdims=True)
        g = g / counts
        return g.reshape(n, oh * 2, ow * 2, c)


class Flatten(Layer):
    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._shape)


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        bound = np.sqrt(3.0 / in_features)
        self.w = rng.uniform(-bound, bound, size=(in_features, out_features))
        self.b = np.zeros(out_features)
        self.params = [self.w, self.b]
        self.grads = [np.zeros_like(self.w), np.zeros_like(self.b)]

    def output_shape(self, in_shape):
        return (self.w.shape[1],)

    def forward(self, x):
        self._x = x
        return x @ self.w + self.b

    def backward(self, grad_out):
        self.grads[0][...] = self._x.T @ grad_out
        self.grads[1][...] = grad_out.sum(axis=0)
        return grad_out @ self.w.T


class Network:
    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def shape_trace(self, in_shape: tuple[int, ...]) -> list[tuple[int, ...]]:
        shapes = [in_shape]
        for layer in self.layers:
            in_shape = layer.output_shape(in_shape)
            shapes.append(in_shape)
        return shapes

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    @property
    def grads(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    probs = softmax(logits)
    n = len(labels)
    loss = float(-np.log(probs[np.arange(n), labels] + 1e-300).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


@dataclass
class SGDConfig:
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    gamma: float = 0.1
    milestones: tuple[float, ...] = (0.5, 0.75)  # fractions of max_iter
    max_iter: int = 8000
    batch_size: int = 32
    # global L2 gradient-norm clip; the hot base rate needs it to stay stable
    clip_gradients: float = 1.0


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    train_accuracy: float = 0.0
    iterations: int = 0


def train_sgd(
    net: Network,
    inputs: np.ndarray,
    labels: np.ndarray,
    config: SGDConfig,
    rng: np.random.Generator,
    *,
    stop_at_loss: float | None = None,
) -> TrainReport:
    """Deterministic SGD given a seeded rng for the batch order."""
    if len(set(labels.tolist())) < 2:
        raise ValueError("training needs both classes present")
    n = len(inputs)
    velocities = [np.zeros_like(p) for p in net.params]
    boundaries = [int(m * config.max_iter) for m in config.milestones]
    report = TrainReport()
    order = rng.permutation(n)
    cursor = 0
    lr = config.base_lr
    for it in range(config.max_iter):
        if it in boundaries:
            lr *= config.gamma
        if cursor + config.batch_size > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor : cursor + config.batch_size]
        cursor += config.batch_size
        logits = net.forward(inputs[idx])
        loss, grad = cross_entropy(logits, labels[idx])
        net.backward(grad)
        scale = 1.0
        if config.clip_gradients is not None:
            norm = math.sqrt(sum(float((g**2).sum()) for g in net.grads))
            if norm > config.clip_gradients:
                scale = config.clip_gradients / norm
        for p, g, v in zip(net.params, net.grads, velocities):
            v *= config.momentum
            v -= lr * (scale * g + config.weight_decay * p)
            p += v
        report.losses.append(loss)
        report.iterations = it + 1
        if stop_at_loss is not None and loss < stop_at_loss:
            break
    preds = predict(net, inputs)
    report.train_accuracy = float((preds == labels).mean())
    return report


def predict(net: Network, inputs: np.ndarray, batch: int = 256) -> np.ndarray:
    out = []
    for i in range(0, len(inputs), batch):
        out.append(net.forward(inputs[i : i + batch]).argmax(axis=1))
    return np.concatenate(out) if out else np.empty(0, dtype=int)


def gradient_check(layer: Layer, x: np.ndarray, *, eps: float = 1e-6) -> float:
    """Max relative error between analytic and finite-difference gradients.

    Drives the layer with a random projection loss so every output matters,
    and checks the input gradient plus every parameter gradient.
    """
    rng = np.random.default_rng(0)
    x_work = np.array(x, dtype=float)
    proj = rng.normal(size=layer.forward(x_work).shape)
    worst = 0.0

    def check(analytic: np.ndarray, target: np.ndarray) -> None:
        nonlocal worst
        flat_t = target.reshape(-1)
        flat_a = analytic.reshape(-1)
        idx = rng.choice(flat_t.size, size=min(48, flat_t.size), replace=False)
        for i in idx:
            orig = flat_t[i]
            flat_t[i] = orig + eps
            hi = float((layer.forward(x_work) * proj).sum())
            flat_t[i] = orig - eps
            lo = float((layer.forward(x_work) * proj).sum())
            flat_t[i] = orig
            numeric = (hi - lo) / (2 * eps)
            denom = max(abs(numeric), abs(flat_a[i]), 1e-8)
            worst = max(worst, abs(numeric - flat_a[i]) / denom)

    layer.forward(x_work)
    grad_in = layer.backward(proj)
    check(grad_in.copy(), x_work)
    for p, g in zip(layer.params, layer.grads):
        layer.forward(x_work)
        layer.backward(proj)
        check(g.copy(), p)
    return worst

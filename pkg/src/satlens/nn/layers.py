"""Layers with hand-written forward and backward passes (NCHW layout).

Every layer caches what it needs for ``backward`` during ``forward`` and
accumulates parameter gradients into ``self.grads``. Parameters live in
``self.params`` under the same keys.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch


class Layer:
    kind = "layer"
    trainable = False

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        return input_shape

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grad(self):
        for name, value in self.params.items():
            self.grads[name] = np.zeros_like(value)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Dense(Layer):
    kind = "dense"
    trainable = True

    def __init__(self, in_features: int, units: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.units = units
        self.params = {
            "weight": kaiming_uniform(rng, (in_features, units), in_features, dtype),
            "bias": np.zeros(units, dtype=dtype),
        }
        self.zero_grad()

    def output_shape(self, input_shape):
        if len(input_shape) != 1 or input_shape[0] != self.in_features:
            raise ShapeMismatch(f"dense layer expects ({self.in_features},), got {input_shape}")
        return (self.units,)

    def forward(self, x, train):
        self._x = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, grad):
        self.grads["weight"] += self._x.T @ grad
        self.grads["bias"] += grad.sum(axis=0)
        return grad @ self.params["weight"].T


def _conv_out(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _windows(xp: np.ndarray, kernel: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    # (N, C, out_h, out_w, k, k) strided view into a padded input
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    return win[:, :, ::stride, ::stride][:, :, :out_h, :out_w]


class Conv2d(Layer):
    kind = "conv2d"
    trainable = True

    def __init__(self, in_channels: int, filters: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, dtype=np.float32):
        super().__init__()
        self.in_channels = in_channels
        self.filters = filters
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel * kernel
        self.params = {
            "weight": kaiming_uniform(rng, (filters, in_channels, kernel, kernel), fan_in, dtype),
            "bias": np.zeros(filters, dtype=dtype),
        }
        self.zero_grad()

    def output_shape(self, input_shape):
        if len(input_shape) != 3 or input_shape[0] != self.in_channels:
            raise ShapeMismatch(f"conv2d expects ({self.in_channels}, H, W), got {input_shape}")
        _, h, w = input_shape
        oh = _conv_out(h, self.kernel, self.stride, self.padding)
        ow = _conv_out(w, self.kernel, self.stride, self.padding)
        if oh < 1 or ow < 1:
            raise ShapeMismatch(f"conv2d kernel {self.kernel} does not fit input {h}x{w}")
        return (self.filters, oh, ow)

    def forward(self, x, train):
        n, c, h, w = x.shape
        k, s, p = self.kernel, self.stride, self.padding
        oh, ow = _conv_out(h, k, s, p), _conv_out(w, k, s, p)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = _windows(xp, k, s, oh, ow).transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * k * k)
        wmat = self.params["weight"].reshape(self.filters, -1)
        out = cols @ wmat.T + self.params["bias"]
        self._cache = (x.shape, xp.shape, cols, oh, ow)
        return out.reshape(n, oh, ow, self.filters).transpose(0, 3, 1, 2)

    def backward(self, grad):
        x_shape, xp_shape, cols, oh, ow = self._cache
        n, c, h, w = x_shape
        k, s, p = self.kernel, self.stride, self.padding
        g = grad.transpose(0, 2, 3, 1).reshape(n * oh * ow, self.filters)
        wmat = self.params["weight"].reshape(self.filters, -1)
        self.grads["weight"] += (g.T @ cols).reshape(self.params["weight"].shape)
        self.grads["bias"] += g.sum(axis=0)
        dcols = (g @ wmat).reshape(n, oh, ow, c, k, k)
        dxp = np.zeros(xp_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, p:p + h, p:p + w] if p else dxp


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train):
        self._mask = x > 0
        # np.maximum keeps NaNs visible to the loss check
        return np.maximum(x, 0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return np.where(self._mask, grad, 0).astype(grad.dtype, copy=False)


class MaxPool2d(Layer):
    kind = "maxpool"

    def __init__(self, kernel: int = 2, stride: int | None = None, padding: int = 0):
        super().__init__()
        self.kernel = kernel
        self.stride = stride or kernel
        self.padding = padding

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeMismatch(f"maxpool expects (C, H, W), got {input_shape}")
        c, h, w = input_shape
        oh = _conv_out(h, self.kernel, self.stride, self.padding)
        ow = _conv_out(w, self.kernel, self.stride, self.padding)
        if oh < 1 or ow < 1:
            raise ShapeMismatch(f"maxpool kernel {self.kernel} does not fit input {h}x{w}")
        return (c, oh, ow)

    def forward(self, x, train):
        n, c, h, w = x.shape
        k, s, p = self.kernel, self.stride, self.padding
        oh, ow = _conv_out(h, k, s, p), _conv_out(w, k, s, p)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf) if p else x
        win = _windows(xp, k, s, oh, ow).reshape(n, c, oh, ow, k * k)
        idx = np.argmax(win, axis=-1)
        self._cache = (x.shape, xp.shape, idx, oh, ow)
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        x_shape, xp_shape, idx, oh, ow = self._cache
        _, _, h, w = x_shape
        k, s, p = self.kernel, self.stride, self.padding
        dxp = np.zeros(xp_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                hit = idx == i * k + j
                dxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += np.where(hit, grad, 0)
        return dxp[:, :, p:p + h, p:p + w] if p else dxp


class BatchNorm(Layer):
    """Batch normalisation over the feature axis of ``N x F`` or the channel axis of ``N x C x H x W``.

    Running statistics follow ``running = momentum * running + (1 - momentum) * batch``.
    """

    kind = "batchnorm"
    trainable = True

    def __init__(self, features: int, momentum: float = 0.9, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.features = features
        self.momentum = momentum
        self.eps = eps
        self.params = {"gamma": np.ones(features, dtype=dtype), "beta": np.zeros(features, dtype=dtype)}
        self.buffers = {"running_mean": np.zeros(features, dtype=dtype),
                        "running_var": np.ones(features, dtype=dtype)}
        self.zero_grad()

    def output_shape(self, input_shape):
        if input_shape[0] != self.features:
            raise ShapeMismatch(f"batchnorm expects {self.features} features, got {input_shape}")
        return input_shape

    def _axes(self, x):
        return (0,) if x.ndim == 2 else (0, 2, 3)

    def _bcast(self, v, x):
        return v if x.ndim == 2 else v[None, :, None, None]

    def forward(self, x, train):
        axes = self._axes(x)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = x.size // self.features
            unbiased = var * (m / max(m - 1, 1))
            mom = self.momentum
            self.buffers["running_mean"] = (mom * self.buffers["running_mean"] + (1 - mom) * mean).astype(x.dtype)
            self.buffers["running_var"] = (mom * self.buffers["running_var"] + (1 - mom) * unbiased).astype(x.dtype)
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bcast(mean, x)) * self._bcast(inv_std, x)
        self._cache = (xhat, inv_std, axes, train)
        return (self._bcast(self.params["gamma"], x) * xhat + self._bcast(self.params["beta"], x)).astype(x.dtype)

    def backward(self, grad):
        xhat, inv_std, axes, train = self._cache
        self.grads["gamma"] += (grad * xhat).sum(axis=axes)
        self.grads["beta"] += grad.sum(axis=axes)
        dxhat = grad * self._bcast(self.params["gamma"], grad)
        if not train:
            return dxhat * self._bcast(inv_std, grad)
        m = grad.size // self.features
        dx = (m * dxhat - dxhat.sum(axis=axes, keepdims=True)
              - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
        return (dx * self._bcast(inv_std, grad) / m).astype(grad.dtype)


def adaptive_bins(size: int, out: int) -> list[tuple[int, int]]:
    """Source ranges ``[floor(i*size/out), ceil((i+1)*size/out))`` for each output cell."""
    return [((i * size) // out, -((-(i + 1) * size) // out)) for i in range(out)]


def adaptive_avg_pool(t: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    if out_h < 1 or out_w < 1:
        raise ShapeMismatch(f"output size must be >= 1, got {out_h}x{out_w}")
    t = np.asarray(t)
    h, w = t.shape[-2:]
    if (out_h, out_w) == (h, w):
        return t.copy()
    if h % out_h == 0 and w % out_w == 0:
        bh, bw = h // out_h, w // out_w
        return t.reshape(*t.shape[:-2], out_h, bh, out_w, bw).mean(axis=(-3, -1))
    out = np.empty((*t.shape[:-2], out_h, out_w), dtype=np.result_type(t.dtype, np.float32))
    for i, (r0, r1) in enumerate(adaptive_bins(h, out_h)):
        for j, (c0, c1) in enumerate(adaptive_bins(w, out_w)):
            out[..., i, j] = t[..., r0:r1, c0:c1].mean(axis=(-2, -1))
    return out


class AdaptiveAvgPool2d(Layer):
    kind = "adaptive_avg_pool"

    def __init__(self, out_h: int, out_w: int | None = None):
        super().__init__()
        self.out_h = out_h
        self.out_w = out_w or out_h

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeMismatch(f"adaptive pooling expects (C, H, W), got {input_shape}")
        return (input_shape[0], self.out_h, self.out_w)

    def forward(self, x, train):
        self._shape = x.shape
        return adaptive_avg_pool(x, self.out_h, self.out_w).astype(x.dtype, copy=False)

    def backward(self, grad):
        h, w = self._shape[-2:]
        dx = np.zeros(self._shape, dtype=grad.dtype)
        for i, (r0, r1) in enumerate(adaptive_bins(h, self.out_h)):
            for j, (c0, c1) in enumerate(adaptive_bins(w, self.out_w)):
                dx[:, :, r0:r1, c0:c1] += grad[:, :, i:i + 1, j:j + 1] / ((r1 - r0) * (c1 - c0))
        return dx


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeMismatch(f"global pooling expects (C, H, W), got {input_shape}")
        return (input_shape[0],)

    def forward(self, x, train):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        h, w = self._shape[-2:]
        return np.broadcast_to(grad[:, :, None, None] / (h * w), self._shape).copy()


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, train):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    n = logits.shape[0]
    loss = -float(log_p[np.arange(n), labels].mean())
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return loss, (grad / n).astype(logits.dtype, copy=False)

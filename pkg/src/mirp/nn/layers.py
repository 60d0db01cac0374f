"""Layers with hand-written reverse-mode gradients.

Activations are batch-first arrays, (B, C, N) for sequences and (B, D) after
flattening. Each layer caches what its backward pass needs during
``forward`` and fills ``self.grads`` (same keys as ``self.params``) during
``backward``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.signal import lfilter

from ..physics import (DegenerateWeightsError, ShapeError, damped_readout,
                       decay_factor, decimate, readout_count)


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)

    def zero_grad(self):
        self.grads = {name: np.zeros_like(p) for name, p in self.params.items()}


def _pad_amounts(size, padding):
    if padding == "same":
        return (size - 1) // 2, size - 1 - (size - 1) // 2
    if padding == "valid":
        return 0, 0
    return int(padding), int(padding)


class Conv1d(Layer):
    """Multi-channel cross-correlation, weight shape (C_out, C_in, K)."""

    def __init__(self, c_in, c_out, size=3, stride=1, padding="same", rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.c_in, self.c_out, self.size, self.stride = c_in, c_out, size, stride
        self.padding = padding
        std = math.sqrt(2.0 / (c_in * size))
        self.params = {"W": rng.standard_normal((c_out, c_in, size)) * std,
                       "b": np.zeros(c_out)}

    def _geometry(self, n):
        left, right = _pad_amounts(self.size, self.padding)
        n_out = (n + left + right - self.size) // self.stride + 1
        if n_out < 1:
            raise ShapeError(f"input length {n} is shorter than the kernel")
        return left, right, n_out

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.c_in:
            raise ShapeError(f"conv expects (B, {self.c_in}, N), got {x.shape}")
        b, c, n = x.shape
        left, right, n_out = self._geometry(n)
        xp = np.pad(x, ((0, 0), (0, 0), (left, right))) if left or right else x
        span = self.stride * (n_out - 1) + 1
        # (B, K, C, N_out): K shifted views stacked so one GEMM does the work
        cols = np.stack([xp[:, :, i:i + span:self.stride] for i in range(self.size)], axis=1)
        cols = cols.reshape(b, self.size * c, n_out)
        w2 = self.params["W"].transpose(0, 2, 1).reshape(self.c_out, -1)
        self._cache = (n, xp.shape, cols, left, span)
        return np.matmul(w2, cols) + self.params["b"][None, :, None]

    def backward(self, grad):
        n, xp_shape, cols, left, span = self._cache
        b, o, n_out = grad.shape
        g2 = grad.transpose(1, 0, 2).reshape(o, -1)
        c2 = cols.transpose(1, 0, 2).reshape(cols.shape[1], -1)
        self.grads["W"] = (g2 @ c2.T).reshape(o, self.size, self.c_in).transpose(0, 2, 1)
        self.grads["b"] = grad.sum(axis=(0, 2))
        w2 = self.params["W"].transpose(0, 2, 1).reshape(o, -1)
        dcols = np.matmul(w2.T, grad).reshape(b, self.size, self.c_in, n_out)
        dxp = np.zeros(xp_shape)
        for i in range(self.size):
            dxp[:, :, i:i + span:self.stride] += dcols[:, i]
        return dxp[:, :, left:left + n]


class MaxPool1d(Layer):
    def __init__(self, size=3, stride=1, padding="same"):
        super().__init__()
        if size < 1:
            raise ValueError("pool size must be >= 1")
        self.size, self.stride, self.padding = size, stride, padding

    def forward(self, x):
        if x.ndim != 3:
            raise ShapeError(f"maxpool expects (B, C, N), got {x.shape}")
        left, right = _pad_amounts(self.size, self.padding)
        xp = np.pad(x, ((0, 0), (0, 0), (left, right)), constant_values=-np.inf)
        n_out = (xp.shape[2] - self.size) // self.stride + 1
        span = self.stride * (n_out - 1) + 1
        best = xp[:, :, 0:span:self.stride].copy()
        arg = np.zeros(best.shape, dtype=np.int8)
        for i in range(1, self.size):
            v = xp[:, :, i:i + span:self.stride]
            # strict comparison keeps the first maximum, as argmax would
            upd = v > best
            np.copyto(best, v, where=upd)
            arg[upd] = i
        self._cache = (x.shape, xp.shape, arg, left, span)
        return best

    def backward(self, grad):
        x_shape, xp_shape, arg, left, span = self._cache
        dxp = np.zeros(xp_shape)
        for i in range(self.size):
            dxp[:, :, i:i + span:self.stride] += np.where(arg == i, grad, 0.0)
        return dxp[:, :, left:left + x_shape[2]]


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._mask, grad, 0.0)


class Flatten(Layer):
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Dense(Layer):
    def __init__(self, d_in, d_out, rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.params = {"W": rng.standard_normal((d_in, d_out)) * math.sqrt(2.0 / d_in),
                       "b": np.zeros(d_out)}

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.params["W"].shape[0]:
            raise ShapeError(f"dense expects (B, {self.params['W'].shape[0]}), got {x.shape}")
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, grad):
        self.grads["W"] = self._x.T @ grad
        self.grads["b"] = grad.sum(axis=0)
        return grad @ self.params["W"].T


def relu(x):
    return np.maximum(x, 0.0)


def dense(x, weights, bias):
    return x @ weights + bias


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy of softmax(logits) and its gradient w.r.t. logits."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels))
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"{labels.shape[0]} labels for {n} logit rows")
    if np.any(labels < 0) or np.any(labels >= c):
        raise ValueError(f"label out of range [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    logp = z - log_norm[:, None]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


# ---------------------------------------------------------------------------
# physical front ends
# ---------------------------------------------------------------------------

class PhysicalLayer(Layer):
    """Trainable damped-convolution front end.

    Input (B, J, M) unit-rms envelopes, output (B, J*L, floor(M/k)) readouts
    in units of the readout amplitude, i.e. the sums of the rms-normalized
    pump weights against the signal. With ``train_gamma`` the linewidth is a
    parameter too, stored as its logarithm.
    """

    def __init__(self, channels, modes, length, k, gamma, dt, rng=None, train_gamma=False):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.channels, self.modes, self.length, self.k = channels, modes, length, k
        self.dt = dt
        self.train_gamma = train_gamma
        if readout_count(length, k) < 1:
            raise ShapeError(f"stride {k} exceeds record length {length}")
        self.params = {"W": rng.standard_normal((channels, modes, length))}
        if train_gamma:
            self.params["log_gamma"] = np.array([math.log(gamma)])
        self._gamma = gamma

    @property
    def gamma(self):
        if self.train_gamma:
            return float(np.exp(self.params["log_gamma"][0]))
        return self._gamma

    @property
    def readouts(self):
        return readout_count(self.length, self.k)

    def forward(self, x):
        b, j, m = x.shape
        if (j, m) != (self.channels, self.length):
            raise ShapeError(f"front end expects (B, {self.channels}, {self.length}), got {x.shape}")
        w = self.params["W"]
        rms = float(np.sqrt(np.mean(w ** 2)))
        if rms == 0.0:
            raise DegenerateWeightsError("pump weights are identically zero")
        w_hat = w / rms
        d = decay_factor(self.gamma, self.dt)
        products = x[:, :, None, :] * w_hat[None]
        state = lfilter([1.0], [1.0, -d], products, axis=-1)
        r = self.readouts
        self._cache = (x, w_hat, rms, d, state)
        return state[..., self.k - 1:r * self.k:self.k].reshape(b, j * self.modes, r)

    def backward(self, grad):
        x, w_hat, rms, d, state = self._cache
        b, j, m = x.shape
        r, k = self.readouts, self.k
        up = np.zeros((b, j, self.modes, m))
        up[..., k - 1:r * k:k] = grad.reshape(b, j, self.modes, r)
        # reverse-time recurrence h[m] = up[m] + d h[m+1]
        h = lfilter([1.0], [1.0, -d], up[..., ::-1], axis=-1)[..., ::-1]
        g_hat = np.einsum("bjlm,bjm->jlm", h, x, optimize=True)
        self.grads["W"] = (g_hat - w_hat * np.mean(g_hat * w_hat)) / rms
        if self.train_gamma:
            # u[m] = d u[m-1] + s[m-1] is ds/dd
            u = lfilter([0.0, 1.0], [1.0, -d], state, axis=-1)
            dd = float(np.sum(up * u))
            self.grads["log_gamma"] = np.array([dd * (-self.dt / 2.0) * d * self.gamma])
        return None


class CwFrontEnd(Layer):
    """Untrained front end: constant pump, one readout channel per input channel."""

    def __init__(self, channels, length, k, gamma, dt):
        super().__init__()
        self.channels, self.length, self.k, self.gamma, self.dt = channels, length, k, gamma, dt
        self.modes = 1

    @property
    def readouts(self):
        return readout_count(self.length, self.k)

    def forward(self, x):
        return damped_readout(x, decay_factor(self.gamma, self.dt), self.k)

    def backward(self, grad):
        return None


class DecimatingFrontEnd(Layer):
    """Conventional receiver digitization: keep every k-th sample (or average
    each block of k samples)."""

    def __init__(self, channels, length, k, average=False):
        super().__init__()
        self.channels, self.length, self.k, self.average = channels, length, k, average
        self.modes = 1

    @property
    def readouts(self):
        return readout_count(self.length, self.k)

    def forward(self, x):
        return decimate(x, self.k, self.average)

    def backward(self, grad):
        return None

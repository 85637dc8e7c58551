"""Minimal reverse-mode differentiation core for the sequence classifiers.

Differentiation works at layer granularity: every :class:`Layer` caches what
it needs in ``forward`` and, given the loss gradient with respect to its
output, ``backward`` accumulates parameter gradients into ``Tensor.grad`` and
returns the gradient with respect to its input.  Everything runs in float64.

Sequence tensors are laid out ``(batch, time, channels)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class NeuralError(ValueError):
    pass


class Tensor:
    """A named float64 array with a gradient slot."""

    def __init__(self, data, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor({self.name!r}, shape={self.shape})"


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    def parameters(self) -> Dict[str, Tensor]:
        return {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()


# --------------------------------------------------------------------------
# convolution and pooling
# --------------------------------------------------------------------------

class Conv1D(Layer):
    """Stride-1 'same' cross-correlation with zero border padding."""

    def __init__(self, in_channels: int, filters: int, kernel_size: int = 5,
                 rng: Optional[np.random.Generator] = None, name: str = "conv"):
        if kernel_size % 2 != 1:
            raise NeuralError("kernel size must be odd")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.k, self.cin, self.cout = kernel_size, in_channels, filters
        self.W = Tensor(glorot_uniform(rng, (kernel_size, in_channels, filters),
                                       kernel_size * in_channels, kernel_size * filters), f"{name}.W")
        self.b = Tensor(np.zeros(filters), f"{name}.b")

    def parameters(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x):
        if x.ndim != 3 or x.shape[2] != self.cin:
            raise NeuralError(f"conv1d expects (batch, time, {self.cin}), got {x.shape}")
        B, T, C = x.shape
        pad = (self.k - 1) // 2
        xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
        # (B, T, C, K) -> (B, T, K, C)
        cols = sliding_window_view(xp, self.k, axis=1).transpose(0, 1, 3, 2).reshape(B, T, self.k * C)
        self._cols = cols
        self._T = T
        return cols @ self.W.data.reshape(self.k * C, self.cout) + self.b.data

    def backward(self, dout):
        B, T, F = dout.shape
        KC = self.k * self.cin
        self.W.grad += (self._cols.reshape(-1, KC).T @ dout.reshape(-1, F)).reshape(self.W.shape)
        self.b.grad += dout.sum(axis=(0, 1))
        dcols = (dout @ self.W.data.reshape(KC, F).T).reshape(B, T, self.k, self.cin)
        pad = (self.k - 1) // 2
        dxp = np.zeros((B, T + self.k - 1, self.cin))
        for j in range(self.k):
            dxp[:, j:j + T] += dcols[:, :, j]
        return dxp[:, pad:pad + T]


def conv1d_forward(x, W, b):
    """Functional same-padding convolution; ``W`` is ``(kernel, in, filters)``."""
    layer = Conv1D(W.shape[1], W.shape[2], W.shape[0])
    layer.W.data[...] = W
    layer.b.data[...] = b
    return layer.forward(np.asarray(x, dtype=np.float64))


class MaxPool1D(Layer):
    """Non-overlapping max pooling; a short last window pools what it has."""

    def __init__(self, pool: int = 3, stride: int = 3):
        if pool != stride:
            raise NeuralError("only pool == stride is supported")
        self.pool = pool

    def forward(self, x):
        B, T, C = x.shape
        if T == 0:
            raise NeuralError("max pooling over an empty time axis")
        p = self.pool
        To = -(-T // p)
        xp = np.full((B, To * p, C), -np.inf)
        xp[:, :T] = x
        win = xp.reshape(B, To, p, C)
        idx = np.argmax(win, axis=2)  # first index on ties
        self._idx, self._shape = idx, x.shape
        return np.take_along_axis(win, idx[:, :, None, :], axis=2)[:, :, 0, :]

    def backward(self, dout):
        B, T, C = self._shape
        p = self.pool
        To = dout.shape[1]
        dwin = np.zeros((B, To, p, C))
        np.put_along_axis(dwin, self._idx[:, :, None, :], dout[:, :, None, :], axis=2)
        return dwin.reshape(B, To * p, C)[:, :T]


def maxpool1d(x, pool: int = 3, stride: int = 3):
    return MaxPool1D(pool, stride).forward(np.asarray(x, dtype=np.float64))


class GlobalAvgPool(Layer):
    """Mean over time.  Padded steps count unless ``exclude_padding`` is set."""

    def __init__(self, exclude_padding: bool = False):
        self.exclude_padding = exclude_padding

    def forward(self, x, lengths=None):
        B, T, C = x.shape
        if T < 1:
            raise NeuralError("global average pooling needs time >= 1")
        if self.exclude_padding and lengths is not None:
            w = (np.arange(T)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)
            w /= w.sum(axis=1, keepdims=True)
        else:
            w = np.full((B, T), 1.0 / T)
        self._w = w
        return np.einsum("bt,btc->bc", w, x)

    def backward(self, dout):
        return self._w[:, :, None] * dout[:, None, :]


def global_avg_pool(x, lengths=None, exclude_padding=False):
    return GlobalAvgPool(exclude_padding).forward(np.asarray(x, dtype=np.float64), lengths)


# --------------------------------------------------------------------------
# dense layers and activations
# --------------------------------------------------------------------------

def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dout):
        return dout * self._mask


class Dense(Layer):
    """``x @ W + b`` followed by ``relu``, ``softmax`` or no activation."""

    def __init__(self, in_features: int, units: int, activation: Optional[str] = None,
                 rng: Optional[np.random.Generator] = None, name: str = "dense"):
        if activation not in (None, "none", "relu", "softmax"):
            raise NeuralError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.activation = None if activation == "none" else activation
        self.W = Tensor(glorot_uniform(rng, (in_features, units), in_features, units), f"{name}.W")
        self.b = Tensor(np.zeros(units), f"{name}.b")

    def parameters(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.W.shape[0]:
            raise NeuralError(f"dense expects (batch, {self.W.shape[0]}), got {x.shape}")
        self._x = x
        z = x @ self.W.data + self.b.data
        if self.activation == "relu":
            self._out = np.maximum(z, 0.0)
        elif self.activation == "softmax":
            self._out = softmax(z)
        else:
            self._out = z
        return self._out

    def backward(self, dout):
        if self.activation == "relu":
            dz = dout * (self._out > 0)
        elif self.activation == "softmax":
            y = self._out
            dz = y * (dout - (dout * y).sum(axis=1, keepdims=True))
        else:
            dz = dout
        self.W.grad += self._x.T @ dz
        self.b.grad += dz.sum(axis=0)
        return dz @ self.W.data.T


def dense(x, W, b, activation=None):
    layer = Dense(W.shape[0], W.shape[1], activation)
    layer.W.data[...] = W
    layer.b.data[...] = b
    return layer.forward(np.asarray(x, dtype=np.float64))


def softmax_cross_entropy(logits, labels) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax(logits) and its gradient w.r.t. the logits."""
    p = softmax(logits)
    n = logits.shape[0]
    rows = np.arange(n)
    loss = -np.mean(np.log(np.maximum(p[rows, labels], 1e-300)))
    d = p.copy()
    d[rows, labels] -= 1.0
    return float(loss), d / n


# --------------------------------------------------------------------------
# LSTM
# --------------------------------------------------------------------------

@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_step(x_t, state: LstmState, W, U, b):
    """One LSTM step; gate blocks in ``W``/``U``/``b`` are ordered i, f, g, o."""
    H = state.h.shape[-1]
    z = x_t @ W + state.h @ U + b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:])
    c = f * state.c + i * g
    h = o * np.tanh(c)
    return h, LstmState(h, c)


class LSTM(Layer):
    """Unidirectional LSTM returning only the final hidden state.

    With a ``mask`` (batch, time), masked steps leave the state unchanged, so
    padding after the real vertices does not reach the output.
    """

    def __init__(self, input_size: int, units: int, rng: Optional[np.random.Generator] = None,
                 forget_bias: float = 1.0, name: str = "lstm"):
        rng = rng if rng is not None else np.random.default_rng(0)
        H = units
        self.units = H
        self.W = Tensor(glorot_uniform(rng, (input_size, 4 * H), input_size, 4 * H), f"{name}.W")
        self.U = Tensor(glorot_uniform(rng, (H, 4 * H), H, 4 * H), f"{name}.U")
        b = np.zeros(4 * H)
        b[H:2 * H] = forget_bias
        self.b = Tensor(b, f"{name}.b")

    def parameters(self):
        return {"W": self.W, "U": self.U, "b": self.b}

    def forward(self, x, mask=None):
        B, T, _ = x.shape
        H = self.units
        W, U, b = self.W.data, self.U.data, self.b.data
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        # input projection for every step at once
        zx = x @ W + b
        self._cache = []
        self._x = x
        for t in range(T):
            z = zx[:, t] + h @ U
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = sigmoid(z[:, 3 * H:])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            m = None if mask is None else mask[:, t:t + 1]
            self._cache.append((h, c, i, f, g, o, tc, m))
            if m is None:
                h, c = h_new, c_new
            else:
                h = m * h_new + (1.0 - m) * h
                c = m * c_new + (1.0 - m) * c
        return h

    def backward(self, dh):
        B, T, I = self._x.shape
        U = self.U.data
        dc = np.zeros_like(dh)
        dz_all = np.empty((B, T, 4 * self.units))
        for t in range(T - 1, -1, -1):
            h_prev, c_prev, i, f, g, o, tc, m = self._cache[t]
            if m is None:
                dh_new, dc_new = dh, dc
                dh_keep = dc_keep = 0.0
            else:
                dh_new, dc_new = m * dh, m * dc
                dh_keep, dc_keep = (1.0 - m) * dh, (1.0 - m) * dc
            do = dh_new * tc
            dc_new = dc_new + dh_new * o * (1.0 - tc * tc)
            dz = np.concatenate([
                dc_new * g * i * (1.0 - i),
                dc_new * c_prev * f * (1.0 - f),
                dc_new * i * (1.0 - g * g),
                do * o * (1.0 - o),
            ], axis=1)
            dz_all[:, t] = dz
            self.U.grad += h_prev.T @ dz
            dh = dz @ U.T + dh_keep
            dc = dc_new * f + dc_keep
        flat = dz_all.reshape(-1, 4 * self.units)
        self.W.grad += self._x.reshape(-1, I).T @ flat
        self.b.grad += flat.sum(axis=0)
        return (flat @ self.W.data.T).reshape(B, T, I)


class BiLSTM(Layer):
    """Forward and time-reversed LSTMs; their final outputs are concatenated."""

    def __init__(self, input_size: int, units: int = 32, rng: Optional[np.random.Generator] = None,
                 mask_padding: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.fwd = LSTM(input_size, units, rng, name="bilstm.fwd")
        self.bwd = LSTM(input_size, units, rng, name="bilstm.bwd")
        self.units = units
        self.mask_padding = mask_padding

    def parameters(self):
        return {**{f"fwd.{k}": v for k, v in self.fwd.parameters().items()},
                **{f"bwd.{k}": v for k, v in self.bwd.parameters().items()}}

    def forward(self, x, lengths=None):
        if x.shape[1] < 1:
            raise NeuralError("bilstm needs time >= 1")
        mask = None
        if self.mask_padding and lengths is not None:
            mask = (np.arange(x.shape[1])[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)
        hf = self.fwd.forward(x, mask)
        hb = self.bwd.forward(x[:, ::-1], None if mask is None else mask[:, ::-1])
        return np.concatenate([hf, hb], axis=1)

    def backward(self, dout):
        H = self.units
        dxf = self.fwd.backward(dout[:, :H])
        dxb = self.bwd.backward(dout[:, H:])
        return dxf + dxb[:, ::-1]


def bilstm(x, units: int = 32, rng=None):
    return BiLSTM(x.shape[2], units, rng).forward(np.asarray(x, dtype=np.float64))


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------

def adam_step(param, grad, m, v, t, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, name="param"):
    """One bias-corrected Adam update; returns ``(param, m, v)``."""
    if t < 1:
        raise NeuralError("Adam step counter starts at 1")
    if not np.all(np.isfinite(grad)):
        raise NeuralError(f"non-finite gradient for parameter {name!r}")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    return param - lr * mhat / (np.sqrt(vhat) + eps), m, v


class Adam:
    def __init__(self, params: Dict[str, Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        for k, p in self.params.items():
            p.data, self.m[k], self.v[k] = adam_step(
                p.data, p.grad, self.m[k], self.v[k], self.t,
                self.lr, self.beta1, self.beta2, self.eps, name=k)

"""Parameterized layers with paired forward/backward passes."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from . import functional as F
from .module import Module, Param, xavier_uniform


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.weight = Param(xavier_uniform(rng, d_in, d_out))
        self.bias = Param(np.zeros((1, d_out)))
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return F.linear_forward(x, self.weight, self.bias)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx, dw, db = F.linear_backward(dy, self._x, self.weight.value)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-6):
        if eps <= 0:
            raise ContractError("layer_norm: eps must be positive")
        self.gain = Param(np.ones((1, d)))
        self.bias = Param(np.zeros((1, d)))
        self.eps = eps
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + self.eps)
        xhat = (x - mu) * inv
        self._cache = (xhat, inv)
        return xhat * self.gain.value[0] + self.bias.value[0]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv = self._cache
        d = xhat.shape[-1]
        self.gain.grad += (dy * xhat).reshape(-1, d).sum(axis=0, keepdims=True)
        self.bias.grad += dy.reshape(-1, d).sum(axis=0, keepdims=True)
        dxhat = dy * self.gain.value[0]
        return inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )


class ReLU(Module):
    def __init__(self):
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        # np.maximum keeps NaN visible to the loss check
        return np.maximum(x, 0.0).astype(x.dtype, copy=False)

    def backward(self, dy):
        return np.where(self._mask, dy, 0.0).astype(dy.dtype, copy=False)


class Dropout(Module):
    """Inverted dropout; identity unless ``train`` and a generator is set."""

    def __init__(self, rate: float = 0.1):
        if not 0.0 <= rate < 1.0:
            raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng: np.random.Generator | None = None
        self._scale = None

    def mask(self, shape, dtype) -> np.ndarray | None:
        if self.rate == 0.0 or self.rng is None:
            return None
        keep = self.rng.random(shape) >= self.rate
        return keep.astype(dtype) / (1.0 - self.rate)

    def forward(self, x, train: bool = False):
        self._scale = self.mask(x.shape, x.dtype) if train else None
        return x if self._scale is None else x * self._scale

    def backward(self, dy):
        return dy if self._scale is None else dy * self._scale


class Conv1d(Module):
    def __init__(self, d_in: int, d_out: int, kernel_size: int, rng: np.random.Generator):
        fan_in, fan_out = kernel_size * d_in, kernel_size * d_out
        self.kernel = Param(xavier_uniform(rng, fan_in, fan_out, shape=(kernel_size, d_in, d_out)))
        self.bias = Param(np.zeros((1, d_out)))
        self._x = None

    def forward(self, x):
        self._x = x
        return F.temporal_conv1d(x, self.kernel, self.bias)

    def backward(self, dy):
        dx, dk, db = F.temporal_conv1d_backward(dy, self._x, self.kernel.value)
        self.kernel.grad += dk
        self.bias.grad += db
        return dx


class MaxPool1d(Module):
    def __init__(self):
        self._cache = None

    def forward(self, x):
        out, idx = F._max_pool(x, 2)
        self._cache = (x.shape, idx)
        return out

    def backward(self, dy):
        shape, idx = self._cache
        return F.max_pool1d_backward(dy, shape, idx)


class UpsampleRepeat(Module):
    def __init__(self, target_len: int):
        self.target_len = target_len
        self._t_in = None

    def forward(self, x):
        self._t_in = x.shape[-2]
        return F.upsample_repeat(x, self.target_len)

    def backward(self, dy):
        return F.upsample_repeat_backward(dy, self._t_in)


class FeedForward(Module):
    """Position-wise ``Linear -> ReLU -> Linear``."""

    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator):
        self.fc1 = Linear(d_model, d_ff, rng)
        self.act = ReLU()
        self.fc2 = Linear(d_ff, d_model, rng)

    def forward(self, x):
        return self.fc2.forward(self.act.forward(self.fc1.forward(x)))

    def backward(self, dy):
        return self.fc1.backward(self.act.backward(self.fc2.backward(dy)))

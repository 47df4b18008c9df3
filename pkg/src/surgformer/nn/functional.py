"""Stateless forward/backward kernels.

All kernels accept arrays shaped ``(..., T, d)``: the last two axes are
time and channels, any leading axes are batch. Parameters may be passed
either as :class:`~surgformer.nn.module.Param` or as plain arrays.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, ContractError, DimensionError
from .module import Param


def _val(p):
    return p.value if isinstance(p, Param) else np.asarray(p)


def linear_forward(x: np.ndarray, w, b=None) -> np.ndarray:
    """``out[t] = x[t] @ w + b``."""
    w = _val(w)
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input shape {x.shape} incompatible with weight shape {w.shape}")
    out = _mm(x, w)
    if b is not None:
        b = _val(b)
        if b.shape[-1] != w.shape[1]:
            raise DimensionError(f"linear: bias shape {b.shape} incompatible with weight shape {w.shape}")
        out = out + b.reshape(-1)
    return out


def _mm(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # flatten leading axes so the product goes through a single BLAS call
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(*x.shape[:-1], w.shape[-1])


def linear_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Return ``(dx, dw, db)``; ``db`` has shape ``(1, d_out)``."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return _mm(dy, w.T), x2.T @ dy2, dy2.sum(axis=0, keepdims=True)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with max subtraction.

    Rows that are entirely ``-inf`` are not supported (a causal mask always
    leaves the diagonal visible).
    """
    z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return y * (dy - np.sum(dy * y, axis=-1, keepdims=True))


def causal_mask(t_q: int, t_k: int) -> np.ndarray:
    """Boolean mask, True where query ``i`` may NOT see key ``j`` (``j > i``)."""
    return np.triu(np.ones((t_q, t_k), dtype=bool), k=1)


def attention_weights(q: np.ndarray, k: np.ndarray, causal: bool = False) -> np.ndarray:
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"attention: query shape {q.shape} and key shape {k.shape} differ in d_k")
    scores = (q @ np.swapaxes(k, -1, -2)) / np.sqrt(q.shape[-1])
    if causal:
        scores = np.where(causal_mask(q.shape[-2], k.shape[-2]), -np.inf, scores)
    return softmax_rows(scores)


def scaled_dot_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, causal: bool = False) -> np.ndarray:
    """``softmax(q k^T / sqrt(d_k) [+ mask]) v``."""
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention: key shape {k.shape} and value shape {v.shape} differ in length")
    return attention_weights(q, k, causal) @ v


def attention_backward(dout, q, k, v, weights, used_weights=None, drop_scale=None):
    """Gradients of ``used_weights @ v`` w.r.t. ``q``, ``k``, ``v``.

    ``used_weights`` is the post-dropout matrix (defaults to ``weights``)
    and ``drop_scale`` the matching dropout multiplier.
    """
    if used_weights is None:
        used_weights = weights
    dv = np.swapaxes(used_weights, -1, -2) @ dout
    dw = dout @ np.swapaxes(v, -1, -2)
    if drop_scale is not None:
        dw = dw * drop_scale
    ds = softmax_backward(dw, weights) / np.sqrt(q.shape[-1])
    dq = ds @ k
    dk = np.swapaxes(ds, -1, -2) @ q
    return dq, dk, dv


def layer_norm(x: np.ndarray, gain, bias, eps: float = 1e-6) -> np.ndarray:
    if eps <= 0:
        raise ContractError("layer_norm: eps must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    xhat = (x - mu) / np.sqrt(var + eps)
    return xhat * _val(gain).reshape(-1) + _val(bias).reshape(-1)


def temporal_conv1d(x: np.ndarray, kernel, bias=None) -> np.ndarray:
    """Same-length temporal convolution with symmetric zero padding.

    ``kernel`` has shape ``(k, d_in, d_out)`` with odd ``k``;
    ``out[t] = sum_j x[t + j - k//2] @ kernel[j]``.
    """
    w = _val(kernel)
    cols = _im2col(x, w)
    out = _mm(cols, w.reshape(-1, w.shape[2]))
    if bias is not None:
        out = out + _val(bias).reshape(-1)
    return out


def _im2col(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    k, d_in, _ = w.shape
    if k % 2 == 0:
        raise ConfigurationError(f"temporal_conv1d: kernel width must be odd, got {k}")
    if x.shape[-1] != d_in:
        raise DimensionError(f"temporal_conv1d: input shape {x.shape} incompatible with kernel shape {w.shape}")
    pad = k // 2
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(x, widths)
    # (..., T, d_in, k) -> (..., T, k, d_in)
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=-2)
    win = np.swapaxes(win, -1, -2)
    return win.reshape(*x.shape[:-1], k * d_in)


def temporal_conv1d_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Return ``(dx, dkernel, dbias)``."""
    k, d_in, d_out = w.shape
    cols = _im2col(x, w)
    dw = cols.reshape(-1, k * d_in).T @ dy.reshape(-1, d_out)
    db = dy.reshape(-1, d_out).sum(axis=0, keepdims=True)
    dcols = _mm(dy, w.reshape(-1, d_out).T).reshape(*dy.shape[:-1], k, d_in)
    t = x.shape[-2]
    pad = k // 2
    dxp = np.zeros(x.shape[:-2] + (t + 2 * pad, d_in), dtype=dy.dtype)
    for j in range(k):
        dxp[..., j:j + t, :] += dcols[..., j, :]
    return dxp[..., pad:pad + t, :], dw.reshape(k, d_in, d_out), db


def max_pool1d(x: np.ndarray, width: int = 2) -> np.ndarray:
    """Channel-wise max over non-overlapping time pairs; an odd tail passes through."""
    return _max_pool(x, width)[0]


def _max_pool(x, width=2):
    if width != 2:
        raise ConfigurationError("max_pool1d: only width 2 is supported")
    t = x.shape[-2]
    if t < 1:
        raise ContractError("max_pool1d: empty sequence")
    even = t - t % 2
    pairs = x[..., :even, :].reshape(*x.shape[:-2], even // 2, 2, x.shape[-1])
    idx = np.argmax(pairs, axis=-2)
    out = np.take_along_axis(pairs, idx[..., None, :], axis=-2)[..., 0, :]
    if t % 2:
        out = np.concatenate([out, x[..., -1:, :]], axis=-2)
    return out, idx


def max_pool1d_backward(dy: np.ndarray, x_shape, idx: np.ndarray) -> np.ndarray:
    t = x_shape[-2]
    even = t - t % 2
    half = even // 2
    dpairs = np.zeros(tuple(x_shape[:-2]) + (half, 2, x_shape[-1]), dtype=dy.dtype)
    np.put_along_axis(dpairs, idx[..., None, :], dy[..., :half, None, :], axis=-2)
    dx = np.empty(x_shape, dtype=dy.dtype)
    dx[..., :even, :] = dpairs.reshape(tuple(x_shape[:-2]) + (even, x_shape[-1]))
    if t % 2:
        dx[..., -1:, :] = dy[..., -1:, :]
    return dx


def pooled_length(t: int) -> int:
    return (t + 1) // 2


def upsample_counts(t_in: int, t_out: int) -> np.ndarray:
    """Repeat count per input row.

    Split points are ``floor(i * t_out / t_in + 1/2)`` for ``i = 0..t_in``
    (round half up, exact integer arithmetic), so counts differ by at most one.
    """
    if t_in < 1:
        raise ContractError("upsample_repeat: empty sequence")
    if t_out < t_in:
        raise ContractError(f"upsample_repeat: target length {t_out} shorter than input length {t_in}")
    i = np.arange(t_in + 1)
    splits = (2 * i * t_out + t_in) // (2 * t_in)
    return np.diff(splits)


def upsample_repeat(x: np.ndarray, target_len: int) -> np.ndarray:
    counts = upsample_counts(x.shape[-2], target_len)
    return np.repeat(x, counts, axis=-2)


def upsample_repeat_backward(dy: np.ndarray, t_in: int) -> np.ndarray:
    counts = upsample_counts(t_in, dy.shape[-2])
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return np.add.reduceat(dy, starts, axis=-2)


def sinusoidal_positions(length: int, d_model: int, dtype=np.float64) -> np.ndarray:
    """Fixed sin/cos position table of shape ``(length, d_model)``."""
    pos = np.arange(length)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)

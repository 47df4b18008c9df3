"""Multi-head attention and pre-norm transformer blocks."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from . import functional as F
from .layers import Dropout, FeedForward, LayerNorm, Linear
from .module import Module


class MultiHeadAttention(Module):
    """Per-head projections, scaled dot attention, concat, output projection.

    Dropout (if any) is applied to the attention weights.
    """

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator, dropout: float = 0.0):
        if heads < 1 or d_model % heads != 0:
            raise ConfigurationError(f"d_model={d_model} is not divisible by heads={heads}")
        self.heads = heads
        self.d_head = d_model // heads
        self.q_proj = Linear(d_model, d_model, rng)
        self.k_proj = Linear(d_model, d_model, rng)
        self.v_proj = Linear(d_model, d_model, rng)
        self.out_proj = Linear(d_model, d_model, rng)
        self.drop = Dropout(dropout)
        self._cache = None
        self.last_weights = None

    def _split(self, x):
        *lead, t, _ = x.shape
        return np.swapaxes(x.reshape(*lead, t, self.heads, self.d_head), -2, -3)

    def _merge(self, x):
        x = np.swapaxes(x, -2, -3)
        return x.reshape(*x.shape[:-2], self.heads * self.d_head)

    def forward(self, xq, xkv, causal: bool = False, train: bool = False):
        q = self._split(self.q_proj.forward(xq))
        k = self._split(self.k_proj.forward(xkv))
        v = self._split(self.v_proj.forward(xkv))
        w = F.attention_weights(q, k, causal)
        scale = self.drop.mask(w.shape, w.dtype) if train else None
        used = w if scale is None else w * scale
        self._cache = (q, k, v, w, used, scale)
        self.last_weights = w
        return self.out_proj.forward(self._merge(used @ v))

    def backward(self, dy):
        """Return ``(d_xq, d_xkv)``; add them for self-attention."""
        q, k, v, w, used, scale = self._cache
        dctx = self._split(self.out_proj.backward(dy))
        dq, dk, dv = F.attention_backward(dctx, q, k, v, w, used, scale)
        dxq = self.q_proj.backward(self._merge(dq))
        dxkv = self.k_proj.backward(self._merge(dk)) + self.v_proj.backward(self._merge(dv))
        return dxq, dxkv


class EncoderLayer(Module):
    """``x + MHA(LN(x))`` then ``x + Drop(FFN(LN(x)))``."""

    def __init__(self, d_model, heads, d_ff, rng, dropout=0.1, eps=1e-6):
        self.norm1 = LayerNorm(d_model, eps)
        self.attn = MultiHeadAttention(d_model, heads, rng, dropout)
        self.norm2 = LayerNorm(d_model, eps)
        self.ffn = FeedForward(d_model, d_ff, rng)
        self.drop = Dropout(dropout)

    def forward(self, x, train=False):
        h = self.norm1.forward(x)
        x = x + self.attn.forward(h, h, train=train)
        return x + self.drop.forward(self.ffn.forward(self.norm2.forward(x)), train)

    def backward(self, dy):
        dx = dy + self.norm2.backward(self.ffn.backward(self.drop.backward(dy)))
        dq, dkv = self.attn.backward(dx)
        return dx + self.norm1.backward(dq + dkv)


class DecoderLayer(Module):
    """Causal self-attention, cross-attention over memory, FFN; all pre-norm."""

    def __init__(self, d_model, heads, d_ff, rng, dropout=0.1, eps=1e-6):
        self.norm1 = LayerNorm(d_model, eps)
        self.self_attn = MultiHeadAttention(d_model, heads, rng, dropout)
        self.norm2 = LayerNorm(d_model, eps)
        self.cross_attn = MultiHeadAttention(d_model, heads, rng, dropout)
        self.norm3 = LayerNorm(d_model, eps)
        self.ffn = FeedForward(d_model, d_ff, rng)
        self.drop = Dropout(dropout)

    def forward(self, x, memory, train=False):
        h = self.norm1.forward(x)
        x = x + self.self_attn.forward(h, h, causal=True, train=train)
        x = x + self.cross_attn.forward(self.norm2.forward(x), memory, train=train)
        return x + self.drop.forward(self.ffn.forward(self.norm3.forward(x)), train)

    def backward(self, dy):
        """Return ``(dx, d_memory)``."""
        dx = dy + self.norm3.backward(self.ffn.backward(self.drop.backward(dy)))
        dq, dmem = self.cross_attn.backward(dx)
        dx = dx + self.norm2.backward(dq)
        dq, dkv = self.self_attn.backward(dx)
        return dx + self.norm1.backward(dq + dkv), dmem

"""Per-frame gesture recognizer: TCN encoder, transformer encoder, linear head."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .data.trials import UNLABELED
from .errors import ContractError
from .features import TcnEncoder
from .nn.attention import EncoderLayer
from .nn.functional import sinusoidal_positions
from .nn.layers import LayerNorm, Linear
from .nn.losses import cross_entropy
from .nn.module import Module


class Recognizer(Module):
    def __init__(self, d_in: int, *, window: int = 30, d_model: int = 60, n_layers: int = 3,
                 heads: int = 2, d_ff: int = 240, n_classes: int = 10,
                 tcn_channels: Sequence[int] = (32, 64), kernel_size: int = 5,
                 dropout: float = 0.1, rng: np.random.Generator | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.d_in = d_in
        self.d_model = d_model
        self.n_classes = n_classes
        self.tcn = TcnEncoder(d_in, [*tcn_channels, d_model], kernel_size, window, rng)
        self.layers = [EncoderLayer(d_model, heads, d_ff, rng, dropout) for _ in range(n_layers)]
        self.norm = LayerNorm(d_model)
        self.head = Linear(d_model, n_classes, rng)
        self._pos = sinusoidal_positions(window, d_model)

    def forward(self, x: np.ndarray, train: bool = False):
        """Return ``(hidden, logits)`` for windows shaped ``(..., W_obs, d_in)``."""
        h = self.tcn.forward(x) + self._pos.astype(x.dtype, copy=False)
        for layer in self.layers:
            h = layer.forward(h, train)
        hidden = self.norm.forward(h)
        return hidden, self.head.forward(hidden)

    def backward(self, dlogits: np.ndarray, dhidden: np.ndarray | None = None) -> np.ndarray:
        dh = self.head.backward(dlogits)
        if dhidden is not None:
            dh = dh + dhidden
        dh = self.norm.backward(dh)
        for layer in reversed(self.layers):
            dh = layer.backward(dh)
        return self.tcn.backward(dh)


def encoder_forward(window_features: np.ndarray, params: Recognizer):
    return params.forward(window_features, train=False)


def recognize(window_features: np.ndarray, params: Recognizer) -> np.ndarray:
    """Per-frame argmax labels; ``np.argmax`` resolves ties to the lowest class index."""
    _, logits = params.forward(window_features, train=False)
    return np.argmax(logits, axis=-1)


def recognition_loss(logits: np.ndarray, labels: np.ndarray):
    """Masked mean cross-entropy; unlabeled frames are excluded."""
    labels = np.asarray(labels)
    mask = labels != UNLABELED
    if not mask.any():
        raise ContractError("recognition_loss: every frame is unlabeled")
    return cross_entropy(logits, labels, mask)

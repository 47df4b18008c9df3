"""Feature fusion and the temporal-convolution window encoder."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError
from .nn.layers import Conv1d, MaxPool1d, ReLU, UpsampleRepeat
from .nn.module import Module

KINEMATIC_KINDS = ("K38", "K14")
CONTEXT_KINDS = ("C",)
VIDEO_KINDS = ("V_Res", "V_Spatial", "V_Seg")
CANONICAL_ORDER = KINEMATIC_KINDS + CONTEXT_KINDS + VIDEO_KINDS


def canonical_selection(selection: Sequence[str]) -> tuple[str, ...]:
    """Validate a modality selection and return it in fusion order."""
    sel = tuple(selection)
    if not sel:
        raise ConfigurationError("feature selection is empty")
    unknown = [s for s in sel if s not in CANONICAL_ORDER]
    if unknown:
        raise ConfigurationError(f"unknown feature kinds {unknown}; expected a subset of {CANONICAL_ORDER}")
    if len(set(sel)) != len(sel):
        raise ConfigurationError(f"duplicate feature kinds in {sel}")
    if "K38" in sel and "K14" in sel:
        raise ConfigurationError("select at most one of K38 / K14")
    return tuple(k for k in CANONICAL_ORDER if k in sel)


def fuse(vectors: Mapping[str, np.ndarray]) -> np.ndarray:
    """Concatenate per-modality arrays (last axis) in canonical order.

    Works for single vectors and for per-frame matrices alike.
    """
    order = canonical_selection(list(vectors))
    return np.concatenate([np.asarray(vectors[k], dtype=np.float64) for k in order], axis=-1)


class TcnEncoder(Module):
    """Stack of ``conv -> ReLU -> max-pool`` layers, upsampled back to the window length."""

    def __init__(self, d_in: int, channels: Sequence[int], kernel_size: int, window: int,
                 rng: np.random.Generator):
        if len(channels) < 1:
            raise ConfigurationError("TCN needs at least one layer")
        if window < 2 ** len(channels):
            raise ConfigurationError(
                f"window length {window} < 2^{len(channels)}: pooling would vanish"
            )
        dims = [d_in, *channels]
        self.convs = [Conv1d(dims[i], dims[i + 1], kernel_size, rng) for i in range(len(channels))]
        self._acts = [ReLU() for _ in channels]
        self._pools = [MaxPool1d() for _ in channels]
        self._up = UpsampleRepeat(window)
        self.window = window
        self.d_out = dims[-1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-2] != self.window:
            raise ConfigurationError(f"TCN expects windows of {self.window} frames, got {x.shape[-2]}")
        for conv, act, pool in zip(self.convs, self._acts, self._pools):
            x = pool.forward(act.forward(conv.forward(x)))
        return self._up.forward(x)

    def pooled(self, x: np.ndarray) -> np.ndarray:
        """Pooled representation before upsampling (diagnostics and tests)."""
        for conv, act, pool in zip(self.convs, self._acts, self._pools):
            x = pool.forward(act.forward(conv.forward(x)))
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dy = self._up.backward(dy)
        for conv, act, pool in zip(self.convs[::-1], self._acts[::-1], self._pools[::-1]):
            dy = conv.backward(act.backward(pool.backward(dy)))
        return dy


def tcn_encode(window: np.ndarray, params: TcnEncoder) -> np.ndarray:
    return params.forward(window)

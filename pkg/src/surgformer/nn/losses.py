"""Losses returning ``(value, gradient)`` pairs."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, DataError, DimensionError
from .functional import softmax_rows


def cross_entropy(logits: np.ndarray, labels, mask=None):
    """Mean negative log-likelihood over the (unmasked) frames.

    ``logits`` is ``(..., T, C)`` and ``labels`` ``(..., T)`` integer class
    indices. Frames with ``mask == False`` contribute neither loss nor
    gradient. Returns ``(loss, dlogits)``.
    """
    labels = np.asarray(labels)
    if labels.shape != logits.shape[:-1]:
        raise DimensionError(f"cross_entropy: labels shape {labels.shape} vs logits shape {logits.shape}")
    n_classes = logits.shape[-1]
    keep = np.ones(labels.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    bad = keep & ((labels < 0) | (labels >= n_classes))
    if bad.any():
        frame = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DataError(f"cross_entropy: label {labels[frame]} out of range [0, {n_classes}) at frame {frame}")
    count = int(keep.sum())
    if count == 0:
        raise ContractError("cross_entropy: every frame is masked")
    safe = np.where(keep, labels, 0)
    z = logits - logits.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1))
    picked = np.take_along_axis(z, safe[..., None], axis=-1)[..., 0]
    loss = float(((logsum - picked) * keep).sum() / count)
    grad = softmax_rows(logits)
    np.put_along_axis(grad, safe[..., None], np.take_along_axis(grad, safe[..., None], -1) - 1.0, -1)
    grad = grad * (keep[..., None] / count)
    return loss, grad


def cumulative_l2(pred: np.ndarray, truth: np.ndarray):
    """Sum over window steps of the squared Euclidean error.

    With a leading batch axis (``(B, W, D)``) the per-window sums are
    averaged over the batch. Returns ``(loss, dpred)``.
    """
    if pred.shape != truth.shape:
        raise DimensionError(f"cumulative_l2: prediction shape {pred.shape} vs truth shape {truth.shape}")
    diff = pred - truth
    n = int(np.prod(pred.shape[:-2])) if pred.ndim > 2 else 1
    return float(np.sum(diff * diff) / n), 2.0 * diff / n

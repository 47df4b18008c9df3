"""Numpy neural-network kernels with hand-written backward passes."""

from .attention import DecoderLayer, EncoderLayer, MultiHeadAttention
from .functional import (
    attention_weights,
    layer_norm,
    linear_forward,
    max_pool1d,
    scaled_dot_attention,
    sinusoidal_positions,
    softmax_rows,
    temporal_conv1d,
    upsample_counts,
    upsample_repeat,
)
from .layers import Conv1d, Dropout, FeedForward, LayerNorm, Linear, MaxPool1d, ReLU, UpsampleRepeat
from .losses import cross_entropy, cumulative_l2
from .module import Module, Param
from .optim import Adam, AdamState, NoamSchedule, adam_step, noam_lr

__all__ = [
    "Adam", "AdamState", "Conv1d", "DecoderLayer", "Dropout", "EncoderLayer", "FeedForward",
    "LayerNorm", "Linear", "MaxPool1d", "Module", "MultiHeadAttention", "NoamSchedule", "Param",
    "ReLU", "UpsampleRepeat", "adam_step", "attention_weights", "cross_entropy", "cumulative_l2",
    "layer_norm", "linear_forward", "max_pool1d", "noam_lr", "scaled_dot_attention",
    "sinusoidal_positions", "softmax_rows", "temporal_conv1d", "upsample_counts", "upsample_repeat",
]

"""Decoder that predicts future gestures and end-effector positions.

The decoder attends over a memory built from the recognizer's hidden
states, the observed gesture labels and the raw fused features, all at the
prediction rate. Decoder step ``i`` is fed the gesture and position of step
``i - 1`` (the last observed ones for ``i = 0``, plus a learned start
vector). Positions are represented relative to a reference point, scaled
by a fixed factor fitted on training data: in ``"delta"`` mode the
reference is the last observed position, in ``"absolute"`` mode it is the
training-set mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data.trials import UNLABELED
from .errors import ConfigurationError, ContractError
from .nn.attention import DecoderLayer
from .nn.functional import sinusoidal_positions
from .nn.layers import LayerNorm, Linear
from .nn.losses import cross_entropy, cumulative_l2
from .nn.module import Module, Param
from .recognition import Recognizer, recognize

TRAJ_DIM = 6
TRAJ_MODES = ("delta", "absolute")


@dataclass(frozen=True)
class LossWeights:
    w_gesture: float = 1.0
    w_traj: float = 0.01

    def __post_init__(self):
        if self.w_gesture < 0 or self.w_traj < 0:
            raise ConfigurationError("loss weights must be non-negative")
        if self.w_gesture == 0 and self.w_traj == 0:
            raise ConfigurationError("loss weights are both zero")


class Predictor(Module):
    def __init__(self, d_in: int, *, w_obs: int = 30, w_pred: int = 10, factor: int = 3,
                 d_model: int = 60, n_layers: int = 2, heads: int = 4, d_ff: int = 240,
                 n_classes: int = 10, d_emb: int = 16, dropout: float = 0.1,
                 traj_mode: str = "delta", rng: np.random.Generator | None = None):
        if traj_mode not in TRAJ_MODES:
            raise ConfigurationError(f"traj_mode must be one of {TRAJ_MODES}, got {traj_mode!r}")
        if w_obs % factor:
            raise ConfigurationError(f"W_obs={w_obs} is not a multiple of the downsample factor {factor}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.d_in, self.d_model, self.d_emb = d_in, d_model, d_emb
        self.w_obs, self.w_pred, self.factor = w_obs, w_pred, factor
        self.n_classes = n_classes
        self.traj_mode = traj_mode
        # last row embeds the unlabeled marker
        self.embedding = Param(rng.normal(0.0, d_emb ** -0.5, size=(n_classes + 1, d_emb)))
        self.mem_proj = Linear(d_model + d_emb + d_in, d_model, rng)
        self.in_proj = Linear(d_emb + TRAJ_DIM, d_model, rng)
        self.start = Param(rng.normal(0.0, d_model ** -0.5, size=(1, d_model)))
        self.layers = [DecoderLayer(d_model, heads, d_ff, rng, dropout) for _ in range(n_layers)]
        self.norm = LayerNorm(d_model)
        self.gesture_head = Linear(d_model, n_classes, rng)
        self.traj_head = Linear(d_model, TRAJ_DIM, rng)
        self.traj_center = np.zeros(TRAJ_DIM)
        self.traj_scale = 1.0
        self._mem_pos = sinusoidal_positions(w_obs // factor, d_model)
        self._dec_pos = sinusoidal_positions(w_pred, d_model)
        self._cache = None

    # -- non-learned state persisted with checkpoints --
    def buffers(self) -> dict[str, np.ndarray]:
        return {"traj_center": np.asarray(self.traj_center, dtype=np.float64),
                "traj_scale": np.asarray([self.traj_scale], dtype=np.float64)}

    def load_buffers(self, bufs: dict[str, np.ndarray]) -> None:
        self.traj_center = np.asarray(bufs["traj_center"], dtype=np.float64).copy()
        self.traj_scale = float(np.asarray(bufs["traj_scale"]).reshape(-1)[0])

    def fit_trajectory_scale(self, last_pos: np.ndarray, future: np.ndarray) -> None:
        """Pick the reference/scale so represented coordinates have unit RMS."""
        if self.traj_mode == "absolute":
            self.traj_center = future.reshape(-1, TRAJ_DIM).mean(axis=0)
            rel = future - self.traj_center
        else:
            self.traj_center = np.zeros(TRAJ_DIM)
            rel = future - last_pos[..., None, :]
        rms = float(np.sqrt(np.mean(rel ** 2))) if rel.size else 0.0
        self.traj_scale = rms if rms > 1e-9 else 1.0

    def _reference(self, last_pos):
        return last_pos if self.traj_mode == "delta" else np.broadcast_to(self.traj_center, last_pos.shape)

    def _emb_index(self, g):
        g = np.asarray(g)
        return np.where(g == UNLABELED, self.n_classes, g)

    # -- memory --
    def build_memory(self, enc_hidden, obs_gestures, raw_obs_features):
        w_mem = self.w_obs // self.factor
        if enc_hidden.shape[-2] != self.w_obs or np.shape(obs_gestures)[-1] != self.w_obs:
            raise ContractError(
                f"build_memory: encoder output has {enc_hidden.shape[-2]} frames and gestures "
                f"{np.shape(obs_gestures)[-1]}; expected {self.w_obs}"
            )
        raw = raw_obs_features
        if raw.shape[-2] == self.w_obs:
            raw = raw[..., ::self.factor, :]
        if raw.shape[-2] != w_mem:
            raise ContractError(f"build_memory: raw features have {raw_obs_features.shape[-2]} frames; "
                                f"expected {self.w_obs} or {w_mem}")
        hid = enc_hidden[..., ::self.factor, :]
        idx = self._emb_index(np.asarray(obs_gestures)[..., ::self.factor])
        emb = self.embedding.value[idx]
        dtype = self.embedding.value.dtype
        x = np.concatenate([hid.astype(dtype, copy=False), emb, raw.astype(dtype, copy=False)], axis=-1)
        self._mem_idx = idx
        return self.mem_proj.forward(x) + self._mem_pos.astype(dtype, copy=False)

    def _memory_backward(self, dmem):
        dx = self.mem_proj.backward(dmem)
        d = self.d_model
        np.add.at(self.embedding.grad, self._mem_idx, dx[..., d:d + self.d_emb])

    # -- decoder --
    def _tokens(self, prev_g, prev_coord):
        idx = self._emb_index(prev_g)
        dtype = self.embedding.value.dtype
        x = np.concatenate([self.embedding.value[idx], prev_coord.astype(dtype, copy=False)], axis=-1)
        t = x.shape[-2]
        h = self.in_proj.forward(x) + self._dec_pos[:t].astype(dtype, copy=False)
        h[..., 0, :] += self.start.value[0]
        self._tok_idx = idx
        return h

    def _tokens_backward(self, dh):
        self.start.grad += dh[..., 0, :].reshape(-1, self.d_model).sum(axis=0, keepdims=True)
        dx = self.in_proj.backward(dh)
        np.add.at(self.embedding.grad, self._tok_idx, dx[..., :self.d_emb])

    def _decode(self, tokens, memory, train):
        h = tokens
        for layer in self.layers:
            h = layer.forward(h, memory, train)
        h = self.norm.forward(h)
        return self.gesture_head.forward(h), self.traj_head.forward(h)

    def teacher_forced(self, memory, last_gesture, last_pos, target_gestures, target_traj, train=False,
                       coord_noise: float = 0.0, noise_rng: np.random.Generator | None = None):
        """One parallel pass fed with ground-truth previous steps.

        With ``coord_noise > 0`` the fed-back coordinates of steps 1.. (not
        the observed step 0) are jittered by Gaussian noise of that standard
        deviation in normalized units, so the decoder learns to correct its
        own drift instead of copying the previous point.

        Returns ``(gesture_logits, traj_mm)``.
        """
        ref = self._reference(last_pos)
        prev_g = np.concatenate([np.asarray(last_gesture)[..., None], np.asarray(target_gestures)[..., :-1]], axis=-1)
        prev_pos = np.concatenate([last_pos[..., None, :], target_traj[..., :-1, :]], axis=-2)
        prev_coord = (prev_pos - ref[..., None, :]) / self.traj_scale
        if coord_noise > 0:
            if noise_rng is None:
                raise ConfigurationError("teacher_forced: coord_noise needs a noise_rng")
            noise = noise_rng.normal(0.0, coord_noise, size=prev_coord.shape)
            noise[..., 0, :] = 0.0
            prev_coord = prev_coord + noise
        logits, out = self._decode(self._tokens(prev_g, prev_coord), memory, train)
        return logits, ref[..., None, :] + out * self.traj_scale

    def backward(self, dlogits, dtraj_mm):
        dh = self.gesture_head.backward(dlogits) + self.traj_head.backward(dtraj_mm * self.traj_scale)
        dh = self.norm.backward(dh)
        dmem = 0.0
        for layer in reversed(self.layers):
            dh, dm = layer.backward(dh)
            dmem = dmem + dm
        self._tokens_backward(dh)
        self._memory_backward(dmem)

    def autoregressive(self, memory, last_gesture, last_pos):
        """Decode ``w_pred`` steps feeding back argmax gestures and predicted positions."""
        ref = self._reference(last_pos)
        lead = memory.shape[:-2]
        prev_g = np.empty(lead + (self.w_pred,), dtype=np.int64)
        prev_coord = np.empty(lead + (self.w_pred, TRAJ_DIM), dtype=memory.dtype)
        prev_g[..., 0] = last_gesture
        prev_coord[..., 0, :] = (last_pos - ref) / self.traj_scale
        logits = np.empty(lead + (self.w_pred, self.n_classes), dtype=memory.dtype)
        coords = np.empty(lead + (self.w_pred, TRAJ_DIM), dtype=memory.dtype)
        for i in range(self.w_pred):
            lg, out = self._decode(self._tokens(prev_g[..., :i + 1], prev_coord[..., :i + 1, :]), memory, False)
            logits[..., i, :] = lg[..., i, :]
            coords[..., i, :] = out[..., i, :]
            if i + 1 < self.w_pred:
                prev_g[..., i + 1] = np.argmax(lg[..., i, :], axis=-1)
                prev_coord[..., i + 1, :] = out[..., i, :]
        return logits, ref[..., None, :] + coords * self.traj_scale


def build_memory(enc_hidden, obs_gestures, raw_obs_features, params: Predictor):
    return params.build_memory(enc_hidden, obs_gestures, raw_obs_features)


def predict(memory, params: Predictor, mode: str = "autoregressive", *, last_gesture, last_pos,
            targets=None):
    """Run the decoder; ``targets`` is ``(gestures, traj_mm)`` in teacher-forced mode."""
    if mode == "teacher_forced":
        if targets is None:
            raise ContractError("teacher-forced prediction needs targets")
        return params.teacher_forced(memory, last_gesture, last_pos, *targets)
    if mode == "autoregressive":
        return params.autoregressive(memory, last_gesture, last_pos)
    raise ConfigurationError(f"unknown decoding mode {mode!r}")


def multitask_loss(gesture_logits, gesture_targets, traj, traj_targets, w: LossWeights):
    """``w_gesture * CE + w_traj * cumulative L2``; returns ``(loss, dlogits, dtraj)``.

    Unlabeled target steps are excluded from the gesture term (which is
    zero if every step is unlabeled).
    """
    gesture_targets = np.asarray(gesture_targets)
    mask = gesture_targets != UNLABELED
    if mask.any():
        ce, dlogits = cross_entropy(gesture_logits, gesture_targets, mask)
    else:
        ce, dlogits = 0.0, np.zeros_like(gesture_logits)
    l2, dtraj = cumulative_l2(traj, traj_targets)
    return (w.w_gesture * ce + w.w_traj * l2,
            w.w_gesture * dlogits, w.w_traj * dtraj)


def end_to_end_infer(window_features: np.ndarray, recognizer: Recognizer, predictor: Predictor,
                     last_position: np.ndarray | None = None):
    """Recognize the observation window, then predict the horizon in one decoder run.

    ``window_features`` is ``(W_obs, d_in)`` or batched ``(B, W_obs, d_in)``;
    ``last_position`` (mm) is the last observed end-effector sample on the
    prediction-rate grid, zeros if unknown.
    Returns ``(obs_labels, pred_labels, traj_mm)``.
    """
    hidden, logits = recognizer.forward(window_features, train=False)
    obs_labels = np.argmax(logits, axis=-1)
    memory = predictor.build_memory(hidden, obs_labels, window_features)
    if last_position is None:
        last_position = np.zeros(window_features.shape[:-2] + (TRAJ_DIM,), dtype=window_features.dtype)
    last_g = obs_labels[..., (predictor.w_obs // predictor.factor - 1) * predictor.factor]
    pred_logits, traj = predictor.autoregressive(memory, last_g, last_position)
    return obs_labels, np.argmax(pred_logits, axis=-1), traj


__all__ = ["LossWeights", "Predictor", "build_memory", "end_to_end_infer", "multitask_loss",
           "predict", "recognize"]

"""Training loops for the recognizer and the predictor.

Randomness comes from one :class:`numpy.random.SeedSequence` per fold;
independent streams for initialization, dropout and each epoch's window
shuffle are derived from it by spawn key, so changing one consumer never
shifts another's draws.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..data.trials import UNLABELED, LabeledTrial, WindowBatch, stack_windows
from ..errors import ConfigurationError, NumericError
from ..nn.optim import Adam, NoamSchedule
from ..prediction import Predictor, multitask_loss
from ..recognition import Recognizer, recognition_loss
from .config import TrainConfig

log = logging.getLogger(__name__)

_INIT, _DROPOUT, _SHUFFLE, _NOISE = 0, 1, 2, 3
_RECOGNIZER, _PREDICTOR = 0, 1


def substream(parent: np.random.SeedSequence, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(parent.entropy, spawn_key=tuple(parent.spawn_key) + tuple(key))


def rng_for(parent: np.random.SeedSequence, *key: int) -> np.random.Generator:
    return np.random.default_rng(substream(parent, *key))


@dataclass
class TrainResult:
    model: object
    losses: list[float] = field(default_factory=list)
    optimizer: Adam | None = None


def build_recognizer(config: TrainConfig, d_in: int, rng: np.random.Generator) -> Recognizer:
    return Recognizer(d_in, window=config.w_obs, d_model=config.d_model, n_layers=config.n_enc,
                      heads=config.h_enc, d_ff=config.d_ff, n_classes=config.fc_dim,
                      tcn_channels=config.tcn_channels, kernel_size=config.kernel_size,
                      dropout=config.dropout, rng=rng)


def build_predictor(config: TrainConfig, d_in: int, rng: np.random.Generator) -> Predictor:
    return Predictor(d_in, w_obs=config.w_obs, w_pred=config.w_pred, factor=config.downsample,
                     d_model=config.d_model, n_layers=config.n_dec, heads=config.h_dec, d_ff=config.d_ff,
                     n_classes=config.fc_dim, d_emb=config.d_emb, dropout=config.dropout,
                     traj_mode=config.traj_mode, rng=rng)


def _optimizer(model, config: TrainConfig) -> Adam:
    return Adam(dict(model.named_params()),
                NoamSchedule(config.d_model, config.warmup_steps, config.lr_factor),
                config.adam_beta1, config.adam_beta2, config.adam_eps)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    # the last partial batch is kept
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _check_finite(loss: float, epoch: int, step: int, what: str) -> None:
    if not np.isfinite(loss):
        raise NumericError(f"{what}: non-finite loss {loss} at epoch {epoch + 1}, optimizer step {step}")


def train_recognizer(trials: Sequence[LabeledTrial], config: TrainConfig,
                     seed: np.random.SeedSequence | None = None) -> TrainResult:
    """Adam + warmup schedule over shuffled tumbling windows; one loss value per epoch."""
    if not trials:
        raise ConfigurationError("train_recognizer: empty training set")
    seed = np.random.SeedSequence(config.seed) if seed is None else seed
    wb = stack_windows(trials, config.w_obs, 0, config.downsample)
    labeled = np.flatnonzero((wb.obs_labels != UNLABELED).any(axis=1))
    if labeled.size == 0:
        raise ConfigurationError("train_recognizer: no labeled windows in the training set")
    x, y = wb.obs_features[labeled], wb.obs_labels[labeled]
    model = build_recognizer(config, trials[0].d_in, rng_for(seed, _RECOGNIZER, _INIT))
    model.set_rng(rng_for(seed, _RECOGNIZER, _DROPOUT))
    opt = _optimizer(model, config)
    losses = []
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for idx in _batches(len(x), config.batch_size, rng_for(seed, _RECOGNIZER, _SHUFFLE, epoch)):
            yb = y[idx]
            if not (yb != UNLABELED).any():
                continue
            opt.zero_grad()
            _, logits = model.forward(x[idx], train=True)
            loss, dlogits = recognition_loss(logits, yb)
            _check_finite(loss, epoch, opt.step_count + 1, "recognizer")
            model.backward(dlogits)
            opt.step()
            total += loss * len(idx)
            count += len(idx)
        losses.append(total / max(count, 1))
        log.debug("recognizer epoch %d loss %.5f", epoch + 1, losses[-1])
    model.set_rng(None)
    return TrainResult(model, losses, opt)


def encode_windows(recognizer: Recognizer, features: np.ndarray, chunk: int = 256):
    """Recognizer hidden states and argmax labels for a stack of windows (inference mode)."""
    hid, lab = [], []
    for i in range(0, len(features), chunk):
        h, lg = recognizer.forward(features[i:i + chunk], train=False)
        hid.append(h)
        lab.append(np.argmax(lg, axis=-1))
    if not hid:
        return (np.zeros(features.shape[:2] + (recognizer.d_model,)),
                np.zeros(features.shape[:2], dtype=np.int64))
    return np.concatenate(hid), np.concatenate(lab)


def observed_gestures(wb: WindowBatch, recognized: np.ndarray, source: str) -> np.ndarray:
    if source == "ground_truth":
        return wb.obs_labels
    if source == "recognized":
        return recognized
    raise ConfigurationError(f"unknown gesture source {source!r}")


def last_observed(labels: np.ndarray, config: TrainConfig) -> np.ndarray:
    """Label at the last prediction-rate sample of each observation window."""
    return labels[:, config.w_obs - config.downsample]


def train_predictor(trials: Sequence[LabeledTrial], recognizer: Recognizer, config: TrainConfig,
                    gesture_source: str | None = None,
                    seed: np.random.SeedSequence | None = None) -> TrainResult:
    """Teacher-forced multi-task training on top of a frozen recognizer.

    ``gesture_source`` chooses whether the memory sees transcript labels
    (``"ground_truth"``) or the recognizer's output (``"recognized"``).
    """
    if not trials:
        raise ConfigurationError("train_predictor: empty training set")
    source = config.predictor_gestures if gesture_source is None else gesture_source
    seed = np.random.SeedSequence(config.seed) if seed is None else seed
    wb = stack_windows(trials, config.w_obs, config.w_pred, config.downsample)
    if wb.empty:
        raise ConfigurationError("train_predictor: no trial is long enough for a window plus horizon")
    hidden, recognized = encode_windows(recognizer, wb.obs_features)
    obs_g = observed_gestures(wb, recognized, source)
    last_g = last_observed(obs_g, config)
    model = build_predictor(config, trials[0].d_in, rng_for(seed, _PREDICTOR, _INIT))
    model.fit_trajectory_scale(wb.last_pos, wb.pred_traj)
    model.set_rng(rng_for(seed, _PREDICTOR, _DROPOUT))
    opt = _optimizer(model, config)
    weights = config.loss_weights
    noise_rng = rng_for(seed, _PREDICTOR, _NOISE)
    losses = []
    for epoch in range(config.epochs):
        total = 0.0
        for idx in _batches(len(wb), config.batch_size, rng_for(seed, _PREDICTOR, _SHUFFLE, epoch)):
            opt.zero_grad()
            memory = model.build_memory(hidden[idx], obs_g[idx], wb.ds_features[idx])
            logits, traj = model.teacher_forced(memory, last_g[idx], wb.last_pos[idx],
                                                wb.pred_labels[idx], wb.pred_traj[idx], train=True,
                                                coord_noise=config.coord_noise, noise_rng=noise_rng)
            loss, dlogits, dtraj = multitask_loss(logits, wb.pred_labels[idx], traj, wb.pred_traj[idx], weights)
            _check_finite(loss, epoch, opt.step_count + 1, "predictor")
            model.backward(dlogits, dtraj)
            opt.step()
            total += loss * len(idx)
        losses.append(total / len(wb))
        log.debug("predictor epoch %d loss %.5f", epoch + 1, losses[-1])
    model.set_rng(None)
    return TrainResult(model, losses, opt)

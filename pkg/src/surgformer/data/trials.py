"""Labeled trials, downsampling, tumbling windows, LOUO folds and z-scoring."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..errors import ConfigurationError, ContractError, DataError

UNLABELED = -1


@dataclass
class LabeledTrial:
    """Aligned per-frame streams of one task execution.

    ``labels`` holds class indices with ``UNLABELED`` for frames outside
    every transcript interval; ``traj`` holds the two PSM end-effector
    positions in millimeters (left xyz, right xyz).
    """

    trial_id: str
    subject: str
    features: np.ndarray
    labels: np.ndarray
    traj: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.traj = np.asarray(self.traj, dtype=np.float64)
        n = len(self.features)
        if len(self.labels) != n or len(self.traj) != n:
            raise DataError(
                f"trial {self.trial_id}: per-frame lengths differ "
                f"(features {n}, labels {len(self.labels)}, traj {len(self.traj)})"
            )
        if self.traj.ndim != 2 or self.traj.shape[1] != 6:
            raise DataError(f"trial {self.trial_id}: trajectory must be (T, 6), got {self.traj.shape}")
        if not np.all(np.isfinite(self.traj)):
            raise DataError(f"trial {self.trial_id}: non-finite trajectory values")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def d_in(self) -> int:
        return self.features.shape[1]


def downsample(trial: LabeledTrial, factor: int = 3) -> LabeledTrial:
    """Keep frames ``0, factor, 2*factor, ...`` of every per-frame array."""
    if factor < 1:
        raise ContractError(f"downsample factor must be >= 1, got {factor}")
    return replace(trial, features=trial.features[::factor], labels=trial.labels[::factor],
                   traj=trial.traj[::factor], meta=dict(trial.meta))


@dataclass
class WindowBatch:
    """Observation windows and (optionally) their prediction horizons.

    ``obs_*`` arrays are at the source rate (``W_obs`` frames); ``ds_*`` are
    the same windows at the prediction rate; ``pred_*`` the following
    ``W_pred`` prediction-rate steps. ``last_pos`` is the final ``ds_traj``
    sample of each window.
    """

    obs_features: np.ndarray
    obs_labels: np.ndarray
    ds_features: np.ndarray
    ds_labels: np.ndarray
    last_pos: np.ndarray
    pred_labels: np.ndarray
    pred_traj: np.ndarray
    trial_ids: list[str]
    starts: np.ndarray

    def __len__(self) -> int:
        return len(self.obs_features)

    def subset(self, idx) -> "WindowBatch":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowBatch(
            self.obs_features[idx], self.obs_labels[idx], self.ds_features[idx], self.ds_labels[idx],
            self.last_pos[idx], self.pred_labels[idx], self.pred_traj[idx],
            [self.trial_ids[i] for i in idx], self.starts[idx],
        )

    @property
    def empty(self) -> bool:
        return len(self) == 0


def window_starts(n_frames: int, w_obs: int, w_pred: int = 0, factor: int = 3) -> list[int]:
    """Start frames of tumbling windows that fit with a full horizon.

    A window starting at ``s`` needs ``s + w_obs`` observed frames and
    ``w_pred`` more prediction-rate steps, i.e. downsampled index
    ``(s + w_obs) / factor + w_pred <= ceil(n_frames / factor)``.
    """
    if w_obs < 1:
        raise ConfigurationError("W_obs must be >= 1")
    if w_pred and w_obs % factor:
        raise ConfigurationError(f"W_obs={w_obs} is not a multiple of factor {factor}")
    n_ds = -(-n_frames // factor)
    starts = []
    s = 0
    while s + w_obs <= n_frames:
        if w_pred == 0 or (s + w_obs) // factor + w_pred <= n_ds:
            starts.append(s)
        s += w_obs
    return starts


def tumbling_windows(trial: LabeledTrial, w_obs: int = 30, w_pred: int = 10, factor: int = 3) -> WindowBatch:
    """Non-overlapping windows stepping by ``w_obs``; trailing partial windows dropped.

    ``w_pred = 0`` yields recognition-only windows covering the
    ``floor(T / w_obs) * w_obs`` prefix. A trial too short for any window
    gives an empty batch.
    """
    return stack_windows([trial], w_obs, w_pred, factor)


def stack_windows(trials: Sequence[LabeledTrial], w_obs: int = 30, w_pred: int = 10, factor: int = 3) -> WindowBatch:
    obs_f, obs_l, ds_f, ds_l, last, pl, pt, ids, starts = ([] for _ in range(9))
    d_in = trials[0].d_in if trials else 0
    for trial in trials:
        ds = downsample(trial, factor)
        w_ds = w_obs // factor
        for s in window_starts(len(trial), w_obs, w_pred, factor):
            obs_f.append(trial.features[s:s + w_obs])
            obs_l.append(trial.labels[s:s + w_obs])
            if w_pred:
                j = s // factor
                ds_f.append(ds.features[j:j + w_ds])
                ds_l.append(ds.labels[j:j + w_ds])
                last.append(ds.traj[j + w_ds - 1])
                pl.append(ds.labels[j + w_ds:j + w_ds + w_pred])
                pt.append(ds.traj[j + w_ds:j + w_ds + w_pred])
            ids.append(trial.trial_id)
            starts.append(s)
    n = len(obs_f)
    w_ds = w_obs // factor if w_pred else 0

    def stack(xs, shape, dtype=np.float64):
        return np.stack(xs).astype(dtype) if xs else np.zeros(shape, dtype=dtype)

    return WindowBatch(
        obs_features=stack(obs_f, (0, w_obs, d_in)),
        obs_labels=stack(obs_l, (0, w_obs), np.int64),
        ds_features=stack(ds_f, (n, w_ds, d_in)),
        ds_labels=stack(ds_l, (n, w_ds), np.int64),
        last_pos=stack(last, (n, 6)),
        pred_labels=stack(pl, (n, w_pred), np.int64),
        pred_traj=stack(pt, (n, w_pred, 6)),
        trial_ids=ids,
        starts=np.asarray(starts, dtype=np.int64),
    )


def louo_splits(trials: Sequence[LabeledTrial]) -> list[tuple[str, list[LabeledTrial], list[LabeledTrial]]]:
    """One ``(subject, train, test)`` fold per subject, subjects in sorted order."""
    subjects = sorted({t.subject for t in trials})
    if len(subjects) < 2:
        raise ConfigurationError(f"LOUO needs at least 2 subjects, got {len(subjects)}")
    return [
        (s, [t for t in trials if t.subject != s], [t for t in trials if t.subject == s])
        for s in subjects
    ]


@dataclass
class Normalizer:
    """Per-feature z-score statistics fitted on training trials only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, trials: Sequence[LabeledTrial]) -> "Normalizer":
        if not trials:
            raise ContractError("cannot fit normalization on an empty trial set")
        x = np.concatenate([t.features for t in trials], axis=0)
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        # zero-variance features pass through unscaled (and unshifted)
        const = std < 1e-12
        mean = np.where(const, 0.0, mean)
        std = np.where(const, 1.0, std)
        return cls(mean, std)

    def apply(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.mean.shape[0]:
            raise DataError(f"normalizer fitted on {self.mean.shape[0]} features, got {x.shape[-1]}")
        return (x - self.mean) / self.std

    def apply_trial(self, trial: LabeledTrial) -> LabeledTrial:
        return replace(trial, features=self.apply(trial.features), meta=dict(trial.meta))


def zscore_fit(train_trials: Sequence[LabeledTrial]) -> Normalizer:
    return Normalizer.fit(train_trials)


def zscore_apply(stats: Normalizer, trials: Sequence[LabeledTrial]) -> list[LabeledTrial]:
    return [stats.apply_trial(t) for t in trials]

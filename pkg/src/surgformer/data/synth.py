"""Synthetic trials with known generative structure, for dataset-free testing.

Gestures follow a fixed cyclic grammar (class ``c`` is followed by
``(c + 1) % n_classes``) with random segment lengths. Every frame's
feature vector is its class mean plus Gaussian noise. The trajectory is
continuous: inside a segment of class ``c`` it moves with the class
velocity plus a class-specific sinusoid that restarts at the segment start
(``"ramp"`` mode), or sits at a class-specific constant position (``"constant"``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from .trials import LabeledTrial


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 6
    feature_dim: int = 14
    n_frames: int = 300
    segment_length: tuple[int, int] = (30, 90)
    noise: float = 0.1
    traj_mode: str = "ramp"
    speed: float = 0.5          # mm per frame
    wobble: float = 2.0         # sinusoid amplitude, mm
    wobble_period: float = 45.0  # frames
    means_seed: int = 1234

    def __post_init__(self):
        lo, hi = self.segment_length
        if self.n_classes < 2 or lo < 1 or hi < lo:
            raise ConfigurationError(f"invalid synthetic config {self}")
        if self.traj_mode not in ("ramp", "constant"):
            raise ConfigurationError(f"traj_mode must be 'ramp' or 'constant', got {self.traj_mode!r}")


@dataclass
class GenerativeParams:
    class_means: np.ndarray      # (n_classes, feature_dim)
    class_velocity: np.ndarray   # (n_classes, 6), mm/frame
    class_position: np.ndarray   # (n_classes, 6), mm
    segments: list[tuple[int, int, int]]  # (start, end inclusive, class)


def class_parameters(config: SynthConfig):
    rng = np.random.default_rng(config.means_seed)
    means = rng.normal(0.0, 1.0, size=(config.n_classes, config.feature_dim))
    vel = rng.normal(0.0, 1.0, size=(config.n_classes, 6))
    vel *= config.speed / np.linalg.norm(vel, axis=1, keepdims=True)
    pos = rng.uniform(-50.0, 50.0, size=(config.n_classes, 6))
    phase = rng.uniform(0.0, 2 * np.pi, size=(config.n_classes, 6))
    return means, vel, pos, phase


def synthesize_trial(config: SynthConfig, seed: int, trial_id: str = "synthetic",
                     subject: str = "S0") -> tuple[LabeledTrial, GenerativeParams]:
    means, vel, pos, phase = class_parameters(config)
    rng = np.random.default_rng(seed)
    n = config.n_frames
    lo, hi = config.segment_length
    labels = np.empty(n, dtype=np.int64)
    segments = []
    c = int(rng.integers(config.n_classes))
    t = 0
    while t < n:
        length = int(rng.integers(lo, hi + 1))
        end = min(t + length, n) - 1
        labels[t:end + 1] = c
        segments.append((t, end, c))
        t = end + 1
        c = (c + 1) % config.n_classes
    features = means[labels] + config.noise * rng.normal(size=(n, config.feature_dim))
    traj = np.empty((n, 6))
    if config.traj_mode == "constant":
        traj[:] = pos[labels]
    else:
        origin = rng.uniform(-20.0, 20.0, size=6)
        step = np.empty((n, 6))
        for start, end, cls in segments:
            k = np.arange(end - start + 1)[:, None]
            wave = config.wobble * np.sin(2 * np.pi * k / config.wobble_period + phase[cls])
            prev = config.wobble * np.sin(2 * np.pi * (k - 1) / config.wobble_period + phase[cls])
            step[start:end + 1] = vel[cls] + (wave - prev)
        traj[:] = origin + np.cumsum(step, axis=0)
    trial = LabeledTrial(trial_id, subject, features, labels, traj, meta={"seed": seed})
    return trial, GenerativeParams(means, vel, pos, segments)


def synthesize_corpus(config: SynthConfig, n_subjects: int = 5, trials_per_subject: int = 4,
                      seed: int = 0) -> list[LabeledTrial]:
    """``n_subjects * trials_per_subject`` trials; trial seeds derive from ``seed``."""
    trials = []
    seeds = np.random.SeedSequence(seed).generate_state(n_subjects * trials_per_subject)
    for s in range(n_subjects):
        for j in range(trials_per_subject):
            k = s * trials_per_subject + j
            trial, _ = synthesize_trial(config, int(seeds[k]), f"S{s + 1}_T{j + 1}", f"S{s + 1}")
            trials.append(trial)
    return trials

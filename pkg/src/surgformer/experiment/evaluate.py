"""Per-fold evaluation of recognition, prediction and trajectory accuracy."""

from __future__ import annotations

import time
from typing import Sequence

import numpy as np

from ..data.trials import LabeledTrial, tumbling_windows
from ..metrics import (
    COORDINATES,
    edit_score,
    f1_from_labels,
    frame_accuracy,
    latency_stats,
    nanmean,
    trajectory_errors,
    window_majority_accuracy,
)
from ..prediction import Predictor, end_to_end_infer
from ..recognition import Recognizer
from .config import TrainConfig
from .train import encode_windows, last_observed, observed_gestures

F1_THRESHOLDS = (10, 25, 50)


def _segment_scores(prefix: str, pred_seqs, true_seqs) -> dict[str, float]:
    out = {f"{prefix}_accuracy": frame_accuracy(np.concatenate(pred_seqs), np.concatenate(true_seqs)),
           f"{prefix}_edit": nanmean([edit_score(p, t) for p, t in zip(pred_seqs, true_seqs)])}
    for k in F1_THRESHOLDS:
        out[f"{prefix}_f1_{k}"] = nanmean([f1_from_labels(p, t, k) for p, t in zip(pred_seqs, true_seqs)])
    return out


def evaluate_recognition(model: Recognizer, trials: Sequence[LabeledTrial], config: TrainConfig) -> dict:
    """Frame accuracy pooled over the trials; edit and F1 averaged per trial."""
    preds, truths, win_p, win_t = [], [], [], []
    for trial in trials:
        wb = tumbling_windows(trial, config.w_obs, 0, config.downsample)
        if wb.empty:
            continue
        _, labels = encode_windows(model, wb.obs_features)
        preds.append(labels.reshape(-1))
        truths.append(wb.obs_labels.reshape(-1))
        win_p.extend(labels)
        win_t.extend(wb.obs_labels)
    if not preds:
        return {"rec_accuracy": float("nan"), "rec_window_accuracy": float("nan")}
    out = _segment_scores("rec", preds, truths)
    out["rec_window_accuracy"] = window_majority_accuracy(win_p, win_t)
    return out


def predict_windows(recognizer: Recognizer, predictor: Predictor, wb, config: TrainConfig, source: str):
    """Autoregressive horizon predictions for every window of a batch."""
    hidden, recognized = encode_windows(recognizer, wb.obs_features)
    obs_g = observed_gestures(wb, recognized, source)
    memory = predictor.build_memory(hidden, obs_g, wb.ds_features)
    logits, traj = predictor.autoregressive(memory, last_observed(obs_g, config), wb.last_pos)
    return np.argmax(logits, axis=-1), traj


def teacher_forced_windows(recognizer: Recognizer, predictor: Predictor, wb, config: TrainConfig):
    hidden, _ = encode_windows(recognizer, wb.obs_features)
    memory = predictor.build_memory(hidden, wb.obs_labels, wb.ds_features)
    logits, traj = predictor.teacher_forced(memory, last_observed(wb.obs_labels, config), wb.last_pos,
                                            wb.pred_labels, wb.pred_traj)
    return np.argmax(logits, axis=-1), traj


def _traj_columns(prefix: str, pred, truth) -> dict[str, float]:
    errs = trajectory_errors(pred, truth)
    out = {}
    for metric in ("rmse", "mae", "mape"):
        for name, v in zip(COORDINATES, errs[metric]):
            out[f"{prefix}_{metric}_{name}"] = float(v)
        out[f"{prefix}_{metric}_mean"] = nanmean(errs[metric].tolist())
    return out


def evaluate_prediction(recognizer: Recognizer, predictor: Predictor, trials: Sequence[LabeledTrial],
                        config: TrainConfig) -> dict:
    """Gesture prediction with observed gestures taken from the transcript (``pred_gt``)
    and from the recognizer (``pred_rec``), teacher-forced diagnostics (``pred_tf``),
    and trajectory errors of the end-to-end run (``traj``) and teacher-forced run (``traj_tf``).
    """
    seqs = {"gt": ([], []), "rec": ([], []), "tf": ([], [])}
    trajs = {"gt": ([], []), "rec": ([], []), "tf": ([], [])}
    skipped = 0
    n_windows = 0
    for trial in trials:
        wb = tumbling_windows(trial, config.w_obs, config.w_pred, config.downsample)
        if wb.empty:
            skipped += 1
            continue
        n_windows += len(wb)
        runs = {
            "gt": predict_windows(recognizer, predictor, wb, config, "ground_truth"),
            "rec": predict_windows(recognizer, predictor, wb, config, "recognized"),
            "tf": teacher_forced_windows(recognizer, predictor, wb, config),
        }
        for key, (labels, traj) in runs.items():
            seqs[key][0].append(labels.reshape(-1))
            seqs[key][1].append(wb.pred_labels.reshape(-1))
            trajs[key][0].append(traj.reshape(-1, 6))
            trajs[key][1].append(wb.pred_traj.reshape(-1, 6))
    out: dict[str, float] = {"n_pred_windows": n_windows, "n_short_trials": skipped}
    if n_windows == 0:
        return out
    for key in ("gt", "rec", "tf"):
        out.update(_segment_scores(f"pred_{key}", *seqs[key]))
    out.update(_traj_columns("traj", np.concatenate(trajs["rec"][0]), np.concatenate(trajs["rec"][1])))
    out.update(_traj_columns("traj_gt", np.concatenate(trajs["gt"][0]), np.concatenate(trajs["gt"][1])))
    out.update(_traj_columns("traj_tf", np.concatenate(trajs["tf"][0]), np.concatenate(trajs["tf"][1])))
    return out


def measure_latency(recognizer: Recognizer, predictor: Predictor, windows: np.ndarray,
                    iterations: int, warmup: int = 10, last_pos: np.ndarray | None = None):
    """Time ``end_to_end_infer`` on single windows, cycling through ``windows``."""
    samples = []
    for i in range(iterations + warmup):
        j = i % len(windows)
        lp = None if last_pos is None else last_pos[j]
        t0 = time.perf_counter()
        end_to_end_infer(windows[j], recognizer, predictor, lp)
        samples.append((time.perf_counter() - t0) * 1000.0)
    return latency_stats(samples, warmup)

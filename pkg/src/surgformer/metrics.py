"""Frame accuracy, segmental edit score and F1@k, trajectory errors, latency statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data.trials import UNLABELED

REALTIME_BUDGET_MS = 1000.0 / 30.0
COORDINATES = ("x1", "y1", "z1", "x2", "y2", "z2")


@dataclass(frozen=True)
class Segment:
    label: int
    start: int
    end: int  # inclusive


def segments_from_labels(labels: Sequence[int]) -> list[Segment]:
    """Maximal runs of equal labels, in order; unlabeled runs are dropped."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    change = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change - 1, [labels.size - 1]])
    return [Segment(int(labels[s]), int(s), int(e)) for s, e in zip(starts, ends) if labels[s] != UNLABELED]


def levenshtein(a: Sequence, b: Sequence) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def edit_score(pred: Sequence[int], truth: Sequence[int]) -> float:
    """``100 * (1 - lev(segments(pred), segments(truth)) / max(#segments))``, clamped at 0."""
    p = [s.label for s in segments_from_labels(pred)]
    t = [s.label for s in segments_from_labels(truth)]
    denom = max(len(p), len(t))
    if denom == 0:
        return 100.0
    return max(0.0, 100.0 * (1.0 - levenshtein(p, t) / denom))


def _iou(a: Segment, b: Segment) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start) + 1
    if inter <= 0:
        return 0.0
    union = (a.end - a.start + 1) + (b.end - b.start + 1) - inter
    return inter / union


def f1_counts(pred_segs: Sequence[Segment], true_segs: Sequence[Segment], k: float) -> tuple[int, int, int]:
    """Greedy matching: each predicted segment (in order) takes the unmatched
    same-label true segment of highest IoU; a TP needs IoU strictly above
    ``k / 100``. Returns ``(tp, fp, fn)``.
    """
    thr = k / 100.0
    used = [False] * len(true_segs)
    tp = fp = 0
    for p in pred_segs:
        best, best_j = -1.0, -1
        for j, t in enumerate(true_segs):
            if used[j] or t.label != p.label:
                continue
            iou = _iou(p, t)
            if iou > best:
                best, best_j = iou, j
        if best_j >= 0 and best > thr:
            used[best_j] = True
            tp += 1
        else:
            fp += 1
    return tp, fp, len(true_segs) - tp


def f1_at_k(pred_segs: Sequence[Segment], true_segs: Sequence[Segment], k: float) -> float:
    tp, fp, fn = f1_counts(pred_segs, true_segs, k)
    if tp + fp + fn == 0:
        return 100.0
    return 100.0 * 2 * tp / (2 * tp + fp + fn)


def f1_from_labels(pred: Sequence[int], truth: Sequence[int], k: float) -> float:
    return f1_at_k(segments_from_labels(pred), segments_from_labels(truth), k)


def frame_accuracy(pred, truth) -> float:
    """Percentage of labeled frames predicted correctly (unlabeled truth frames ignored)."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    keep = truth != UNLABELED
    if not keep.any():
        return float("nan")
    return 100.0 * float(np.mean(pred[keep] == truth[keep]))


def window_majority_accuracy(pred_windows, true_windows) -> float:
    """Percentage of windows whose majority predicted label equals the majority true label."""
    hits = total = 0
    for p, t in zip(pred_windows, true_windows):
        t = np.asarray(t)
        t = t[t != UNLABELED]
        if t.size == 0:
            continue
        total += 1
        hits += _majority(np.asarray(p)) == _majority(t)
    return float("nan") if total == 0 else 100.0 * hits / total


def _majority(x: np.ndarray) -> int:
    vals, counts = np.unique(x, return_counts=True)
    return int(vals[np.argmax(counts)])


def trajectory_errors(pred: np.ndarray, truth: np.ndarray, eps: float = 1e-6) -> dict[str, np.ndarray]:
    """Per-coordinate RMSE and MAE (mm) and MAPE (%).

    MAPE skips ground-truth values with ``|v| < eps``; a column with no
    usable values gets NaN (serialized as ``null``).
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, np.shape(pred)[-1])
    truth = np.asarray(truth, dtype=np.float64).reshape(-1, np.shape(truth)[-1])
    if pred.shape != truth.shape or len(pred) == 0:
        raise ValueError(f"trajectory_errors: shapes {pred.shape} vs {truth.shape}")
    err = pred - truth
    rmse = np.sqrt(np.mean(err ** 2, axis=0))
    mae = np.mean(np.abs(err), axis=0)
    mape = np.full(pred.shape[1], np.nan)
    for c in range(pred.shape[1]):
        ok = np.abs(truth[:, c]) >= eps
        if ok.any():
            mape[c] = 100.0 * float(np.mean(np.abs(err[ok, c] / truth[ok, c])))
    return {"rmse": rmse, "mae": mae, "mape": mape}


@dataclass(frozen=True)
class LatencyStats:
    mean_ms: float
    p50_ms: float
    p99_ms: float
    n: int
    budget_ms: float = REALTIME_BUDGET_MS

    @property
    def over_budget(self) -> bool:
        return self.mean_ms > self.budget_ms

    def as_dict(self) -> dict:
        return {"mean_ms": self.mean_ms, "p50_ms": self.p50_ms, "p99_ms": self.p99_ms, "n": self.n,
                "budget_ms": self.budget_ms, "over_budget": self.over_budget}


def latency_stats(samples_ms: Sequence[float], warmup: int = 10,
                  budget_ms: float = REALTIME_BUDGET_MS) -> LatencyStats:
    """Summaries of per-call durations after dropping the first ``warmup`` samples."""
    s = np.asarray(samples_ms, dtype=np.float64)[warmup:]
    if s.size == 0:
        raise ValueError(f"latency_stats: no samples left after excluding {warmup} warmup iterations")
    return LatencyStats(float(s.mean()), float(np.percentile(s, 50)), float(np.percentile(s, 99)),
                        int(s.size), budget_ms)


def nanmean(values) -> float:
    vals = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    return float(np.mean(vals)) if vals else float("nan")

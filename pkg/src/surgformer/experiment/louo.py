"""Leave-one-user-out cross-validation and the evaluation report."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ..data.pca import pca_fit, pca_transform
from ..data.trials import LabeledTrial, Normalizer, louo_splits, stack_windows
from ..errors import ConfigurationError, ContractError
from ..metrics import nanmean
from .config import TrainConfig
from .evaluate import evaluate_prediction, evaluate_recognition, measure_latency
from .train import train_predictor, train_recognizer

log = logging.getLogger(__name__)


def _clean(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return None if math.isnan(v) or math.isinf(v) else v
    if isinstance(v, np.integer):
        return int(v)
    return v


@dataclass
class EvalReport:
    config: dict
    folds: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)

    def columns(self) -> list[str]:
        cols: list[str] = []
        for row in self.folds + [self.aggregate]:
            for k in row:
                if k not in cols:
                    cols.append(k)
        return cols

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "folds": [{k: _clean(v) for k, v in f.items()} for f in self.folds],
            "aggregate": {k: _clean(v) for k, v in self.aggregate.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        cols = self.columns()
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in self.folds + [self.aggregate]:
            writer.writerow({k: ("" if (v := _clean(row.get(k))) is None else v) for k in cols})
        return buf.getvalue()

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        return cls(d["config"], d["folds"], d["aggregate"])


def trial_set_hash(trials: Sequence[LabeledTrial]) -> str:
    h = hashlib.sha256()
    for tid in sorted(t.trial_id for t in trials):
        h.update(tid.encode())
        h.update(b"\0")
    return h.hexdigest()[:16]


def reduce_modality(train: Sequence[LabeledTrial], test: Sequence[LabeledTrial], kind: str,
                    components: int):
    """Replace one fused modality's columns by its PCA projection fitted on ``train``.

    Trials must carry ``meta["feature_slices"]`` (set by ``align_and_label``).
    """
    slices = train[0].meta.get("feature_slices", {})
    if kind not in slices:
        return list(train), list(test), None
    a, b = slices[kind]
    basis = pca_fit(np.concatenate([t.features[:, a:b] for t in train]), components)

    def apply(t: LabeledTrial) -> LabeledTrial:
        reduced = pca_transform(basis, t.features[:, a:b])
        feats = np.concatenate([t.features[:, :a], reduced, t.features[:, b:]], axis=1)
        new_slices = {}
        for k, (s, e) in t.meta["feature_slices"].items():
            shift = components - (b - a)
            new_slices[k] = (s, a + components) if k == kind else ((s + shift, e + shift) if s >= b else (s, e))
        return replace(t, features=feats, meta={**t.meta, "feature_slices": new_slices})

    return [apply(t) for t in train], [apply(t) for t in test], basis


def prepare_fold(train: Sequence[LabeledTrial], test: Sequence[LabeledTrial], config: TrainConfig):
    """Fit PCA (optional) and normalization on ``train`` only; apply to both sides."""
    basis = None
    if config.seg_pca_components > 0 and "V_Seg" in config.features:
        train, test, basis = reduce_modality(train, test, "V_Seg", config.seg_pca_components)
    norm = Normalizer.fit(train)
    return [norm.apply_trial(t) for t in train], [norm.apply_trial(t) for t in test], norm, basis


def run_fold(train: Sequence[LabeledTrial], test: Sequence[LabeledTrial], config: TrainConfig,
             seed: np.random.SeedSequence) -> dict:
    train_ids = {t.trial_id for t in train}
    leaked = sorted(train_ids & {t.trial_id for t in test})
    if leaked:
        raise ContractError(f"test trials leaked into training: {leaked}")
    train, test, _, _ = prepare_fold(train, test, config)
    rec = train_recognizer(train, config, seed)
    pred = train_predictor(train, rec.model, config, seed=seed)
    row = {
        "train_hash": trial_set_hash(train),
        "n_train_trials": len(train),
        "n_test_trials": len(test),
        "rec_final_loss": rec.losses[-1],
        "pred_final_loss": pred.losses[-1],
    }
    row.update(evaluate_recognition(rec.model, test, config))
    row.update(evaluate_prediction(rec.model, pred.model, test, config))
    if config.latency_iterations > 0:
        wb = stack_windows(test, config.w_obs, config.w_pred, config.downsample)
        if not wb.empty:
            stats = measure_latency(rec.model, pred.model, wb.obs_features, config.latency_iterations,
                                    config.latency_warmup, wb.last_pos)
            row.update({"latency_mean_ms": stats.mean_ms, "latency_p50_ms": stats.p50_ms,
                        "latency_p99_ms": stats.p99_ms})
    row["recognizer_params"] = rec.model.num_params()
    row["predictor_params"] = pred.model.num_params()
    return row


def run_louo(trials: Sequence[LabeledTrial], config: TrainConfig, folds: Sequence[str] | None = None,
             progress: Callable[[str, dict], None] | None = None) -> EvalReport:
    """Train and evaluate one model pair per held-out subject.

    ``folds`` restricts the run to the named subjects. Fold ``i`` (in sorted
    subject order) draws its randomness from ``SeedSequence(seed)`` child
    ``i``, so restricting folds does not change any fold's numbers.
    Latency columns appear only when ``config.latency_iterations > 0``.
    """
    splits = louo_splits(trials)
    if folds is not None:
        unknown = sorted(set(folds) - {s for s, _, _ in splits})
        if unknown:
            raise ConfigurationError(f"unknown fold subject(s) {unknown}")
    root = np.random.SeedSequence(config.seed)
    report = EvalReport(config=config.to_dict())
    for i, (subject, train, test) in enumerate(splits):
        if folds is not None and subject not in folds:
            continue
        log.info("fold %s: %d train / %d test trials", subject, len(train), len(test))
        seed = np.random.SeedSequence(root.entropy, spawn_key=(i,))
        row = {"fold": subject}
        row.update(run_fold(train, test, config, seed))
        report.folds.append(row)
        if progress is not None:
            progress(subject, row)
    report.aggregate = aggregate(report.folds)
    return report


def aggregate(rows: Sequence[dict]) -> dict:
    """Unweighted mean over folds of every numeric column."""
    out: dict = {"fold": "aggregate"}
    skip = {"fold", "train_hash"}
    keys: list[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys and k not in skip]
    for k in keys:
        vals = [r.get(k) for r in rows]
        if all(isinstance(v, (int, float, np.floating, np.integer)) or v is None for v in vals):
            out[k] = nanmean([float(v) for v in vals if v is not None])
    return out


def sweep(trials: Sequence[LabeledTrial], config: TrainConfig, grid: dict[str, Sequence],
          folds: Sequence[str] | None = None) -> list[tuple[dict, dict]]:
    """LOUO aggregate for every combination of ``grid`` values (e.g. ``w_gesture``/``w_traj``).

    Returns ``(overrides, aggregate)`` pairs in grid order; selecting among
    them is left to the caller.
    """
    keys = list(grid)
    if not keys or any(len(grid[k]) == 0 for k in keys):
        raise ConfigurationError("sweep: grid needs at least one value per key")
    out = []
    for values in itertools.product(*(grid[k] for k in keys)):
        overrides = dict(zip(keys, values))
        log.info("sweep point %s", overrides)
        report = run_louo(trials, config.replace(**overrides), folds)
        out.append((overrides, report.aggregate))
    return out

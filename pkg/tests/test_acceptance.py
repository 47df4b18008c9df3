"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line
(also collected in the terminal summary)."""

import os
import time

import numpy as np
import pytest

import conftest
import gradcheck
from oracles import (
    edit_oracle,
    greedy_tp,
    optimal_tp,
    runs,
    sequences_with_max_segments,
)
from surgformer.cli import _load_manifest_trials, build_parser, run_bench
from surgformer.data import Normalizer, SynthConfig, louo_splits, synthesize_corpus
from surgformer.errors import ConfigurationError
from surgformer.experiment import (
    Checkpoint,
    TrainConfig,
    build_predictor,
    build_recognizer,
    evaluate_prediction,
    evaluate_recognition,
    load_checkpoint,
    run_louo,
    save_checkpoint,
    train_predictor,
    train_recognizer,
)
from surgformer.experiment.louo import prepare_fold
from surgformer.metrics import edit_score, f1_counts, segments_from_labels

LABELS = tuple(f"G{i}" for i in range(1, 7))
# synthetic runs: fewer warmup steps than the default 4000 (the corpus gives ~10 steps per epoch)
SYNTH_CONFIG = TrainConfig(features=("C",), labels=LABELS, epochs=30, warmup_steps=200, dropout=0.0)
PREDICTOR_OVERRIDES = dict(epochs=150, warmup_steps=300, coord_noise=0.15)
REAL_DATA_ENV = "SURGFORMER_JIGSAWS_MANIFEST"
REAL_FEATURES_ENV = "SURGFORMER_JIGSAWS_FEATURES"


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    conftest.ACCEPTANCE[n] = line
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def corpus():
    trials = synthesize_corpus(SynthConfig(n_classes=6, noise=0.1), 5, 4, seed=0)
    norm = Normalizer.fit(trials)
    return [norm.apply_trial(t) for t in trials]


@pytest.fixture(scope="module")
def recognizer(corpus):
    return train_recognizer(corpus, SYNTH_CONFIG)


def test_c01_gradient_suite():
    t0 = time.perf_counter()
    worst = {name: max(case(seed) for seed in gradcheck.SEEDS) for name, case in gradcheck.CASES.items()}
    elapsed = time.perf_counter() - t0
    name = max(worst, key=worst.get)
    verdict(1, worst[name] < 1e-4 and elapsed < 60,
            f"{len(worst)} layers x {len(gradcheck.SEEDS)} seeds, worst rel. error {worst[name]:.1e} ({name}), "
            f"{elapsed:.1f} s")


def _random_labels(rng, n_max, n_classes, p_change):
    out, cur = [], int(rng.integers(n_classes))
    for _ in range(int(rng.integers(0, n_max + 1))):
        if rng.random() < p_change:
            cur = int(rng.integers(n_classes))
        out.append(cur)
    return out


def _f1_agrees(p, t):
    ps, ts, pr, tr = segments_from_labels(p), segments_from_labels(t), runs(p), runs(t)
    for k in (10, 25, 50):
        tp = f1_counts(ps, ts, k)[0]
        if tp != greedy_tp(pr, tr, k) or tp > optimal_tp(pr, tr, k):
            return False
        if k >= 50 and tp != optimal_tp(pr, tr, k):
            return False
    return True


def test_c02_metric_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    edit_bad = sum(edit_score(p, t) != edit_oracle(p, t)
                   for p, t in ((_random_labels(rng, 40, 4, 0.2), _random_labels(rng, 40, 4, 0.2))
                                for _ in range(1000)))
    seqs = list(sequences_with_max_segments(5, (0, 1, 2), 4))
    exhaustive_bad = sum(not _f1_agrees(p, t) for p in seqs for t in seqs)
    random_bad = sum(not _f1_agrees(_random_labels(rng, 30, 3, 0.25), _random_labels(rng, 30, 3, 0.25))
                     for _ in range(1000))
    elapsed = time.perf_counter() - t0
    verdict(2, edit_bad == exhaustive_bad == random_bad == 0 and elapsed < 60,
            f"edit mismatches {edit_bad}/1000, F1 mismatches {exhaustive_bad}/{len(seqs) ** 2} exhaustive, "
            f"{random_bad}/1000 random, {elapsed:.1f} s")


def test_c03_recognition_overfit(corpus, recognizer):
    t0 = time.perf_counter()
    train_acc = evaluate_recognition(recognizer.model, corpus, SYNTH_CONFIG)["rec_accuracy"]
    raw = synthesize_corpus(SynthConfig(n_classes=6, noise=0.1), 5, 4, seed=0)
    fold_acc = []
    for subject, train, test in louo_splits(raw):
        train, test, _, _ = prepare_fold(train, test, SYNTH_CONFIG)
        rec = train_recognizer(train, SYNTH_CONFIG)
        fold_acc.append(evaluate_recognition(rec.model, test, SYNTH_CONFIG)["rec_accuracy"])
    louo = float(np.mean(fold_acc))
    elapsed = time.perf_counter() - t0
    verdict(3, train_acc >= 95.0 and louo >= 80.0 and SYNTH_CONFIG.epochs <= 200,
            f"training-window accuracy {train_acc:.1f}% after {SYNTH_CONFIG.epochs} epochs, "
            f"LOUO accuracy {louo:.1f}% (folds {', '.join(f'{a:.1f}' for a in fold_acc)}), {elapsed:.0f} s")


def test_c04_prediction_overfit(corpus, recognizer):
    cfg = SYNTH_CONFIG.replace(**PREDICTOR_OVERRIDES)
    pred = train_predictor(corpus, recognizer.model, cfg)
    r = evaluate_prediction(recognizer.model, pred.model, corpus, cfg)
    ratio = r["traj_mae_mean"] / r["traj_tf_mae_mean"]
    gt, rec = r["pred_gt_accuracy"], r["pred_rec_accuracy"]
    ok = r["pred_tf_accuracy"] >= 90.0 and ratio <= 5.0 and gt >= rec and gt - rec <= 10.0
    verdict(4, ok, f"teacher-forced accuracy {r['pred_tf_accuracy']:.1f}%, AR/TF trajectory MAE "
                   f"{r['traj_mae_mean']:.2f}/{r['traj_tf_mae_mean']:.2f} mm (ratio {ratio:.2f}), "
                   f"accuracy ground-truth {gt:.1f}% vs recognized {rec:.1f}%")


def test_c05_default_configuration_shapes():
    cfg = TrainConfig(features=("K14",))
    counts = set()
    rng = np.random.default_rng(0)
    x = rng.normal(size=(30, 14))
    for seed in (0, 1):
        rec = build_recognizer(cfg, 14, np.random.default_rng(seed))
        pred = build_predictor(cfg, 14, np.random.default_rng(seed))
        pooled = rec.tcn.pooled(x)
        hidden, logits = rec.forward(x)
        memory = pred.build_memory(hidden, np.argmax(logits, -1), x)
        out_g, out_t = pred.autoregressive(memory, 0, np.zeros(6))
        shapes = (rec.tcn.forward(x).shape, pooled.shape, hidden.shape, logits.shape, memory.shape,
                  out_g.shape, out_t.shape)
        assert shapes == ((30, 60), (4, 60), (30, 60), (30, 10), (10, 60), (10, 10), (10, 6)), shapes
        assert len(rec.layers) == 3 and rec.layers[0].attn.heads == 2
        assert len(pred.layers) == 2 and pred.layers[0].self_attn.heads == 4
        counts.add((rec.num_params(), pred.num_params()))
    with pytest.raises(ConfigurationError):
        cfg.replace(h_dec=7)
    verdict(5, len(counts) == 1, f"shapes match; parameters recognizer {min(counts)[0]:,}, "
                                 f"predictor {min(counts)[1]:,} (stable: {len(counts) == 1})")


def test_c06_realtime_budget():
    args = build_parser().parse_args(["bench", "--iterations", "200", "--threads", "1", "--dtype", "float32"])
    t0 = time.perf_counter()
    r = run_bench(args)
    elapsed = time.perf_counter() - t0
    verdict(6, r["mean_ms"] < 33.33 and elapsed < 60,
            f"mean {r['mean_ms']:.2f} ms, p50 {r['p50_ms']:.2f} ms, p99 {r['p99_ms']:.2f} ms per 30-frame window "
            f"(budget 33.33 ms; 1 thread, float32, K14 input)")


def test_c07_determinism():
    trials = synthesize_corpus(SynthConfig(n_frames=150), 3, 2, seed=3)
    cfg = TrainConfig(features=("C",), labels=LABELS, epochs=2, warmup_steps=50)
    a = run_louo(trials, cfg).to_json().encode()
    b = run_louo(trials, cfg).to_json().encode()
    verdict(7, a == b, f"two LOUO runs: {len(a)} report bytes, identical={a == b}")


def test_c08_checkpoint_round_trip(corpus, recognizer, tmp_path):
    cfg = SYNTH_CONFIG.replace(epochs=1)
    pred = train_predictor(corpus, recognizer.model, cfg)
    ckpt = Checkpoint(cfg, corpus[0].d_in, recognizer.model, pred.model,
                      optimizers={"recognizer": recognizer.optimizer, "predictor": pred.optimizer})
    save_checkpoint(tmp_path / "m.ckpt", ckpt)
    back = load_checkpoint(tmp_path / "m.ckpt", expect=cfg)
    probe = np.random.default_rng(1).normal(size=(4, 30, corpus[0].d_in))
    outs = []
    for c in (ckpt, back):
        hidden, logits = c.recognizer.forward(probe)
        memory = c.predictor.build_memory(hidden, np.argmax(logits, -1), probe)
        g, t = c.predictor.autoregressive(memory, np.zeros(4, int), np.zeros((4, 6)))
        outs.append(b"".join(a.tobytes() for a in (hidden, logits, g, t)))
    verdict(8, outs[0] == outs[1], f"probe outputs bitwise equal after save/load: {outs[0] == outs[1]}")


def test_c09_causality():
    cfg = TrainConfig(features=("K14",), dropout=0.0)
    rng = np.random.default_rng(2)
    pred = build_predictor(cfg, 14, rng)
    memory = pred.build_memory(rng.normal(size=(30, 60)), rng.integers(0, 10, 30), rng.normal(size=(30, 14)))
    tg, tt = rng.integers(0, 10, 10), rng.normal(size=(10, 6)) * 5
    last_g, last_p = 3, rng.normal(size=6)
    base_g, base_t = pred.teacher_forced(memory, last_g, last_p, tg, tt)
    ok_steps = 0
    for t in range(cfg.w_pred):
        # the token fed at step t is (last_g, last_p) for t = 0 and target t-1 afterwards
        g2, t2, lg, lp = tg.copy(), tt.copy(), last_g, last_p.copy()
        if t == 0:
            lg, lp = 7, lp + 40.0
        else:
            g2[t - 1] = (g2[t - 1] + 5) % 10
            t2[t - 1] += 40.0
        out_g, out_t = pred.teacher_forced(memory, lg, lp, g2, t2)
        past_same = np.array_equal(out_g[:t], base_g[:t]) and np.array_equal(out_t[:t], base_t[:t])
        ok_steps += past_same and not np.allclose(out_g[t], base_g[t])
    verdict(9, ok_steps == cfg.w_pred, f"{ok_steps}/{cfg.w_pred} perturbed steps leave earlier outputs unchanged")


@pytest.mark.skipif(not os.environ.get(REAL_DATA_ENV), reason=f"set {REAL_DATA_ENV} to a JIGSAWS manifest")
def test_c10_real_data():
    features = os.environ.get(REAL_FEATURES_ENV, "K14+V_Spatial+C").replace(",", "+").split("+")
    cfg = TrainConfig(features=tuple(features))
    trials = _load_manifest_trials(os.environ[REAL_DATA_ENV], cfg)
    report = run_louo(trials, cfg)
    cols = report.columns()
    needed = ["rec_accuracy", "rec_edit", "rec_f1_10", "rec_f1_25", "rec_f1_50", "pred_gt_accuracy",
              "pred_rec_accuracy", "traj_rmse_mean", "traj_mae_mean", "traj_mape_mean"]
    missing = [c for c in needed if c not in cols]
    agg = report.aggregate
    verdict(10, len(report.folds) == 8 and not missing,
            f"{len(report.folds)} folds, missing columns {missing}; recognition {agg['rec_accuracy']:.1f}% "
            f"(reference 87.1), prediction {agg['pred_gt_accuracy']:.1f}% (reference 89.5) [not gated]")

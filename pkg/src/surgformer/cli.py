"""Command-line entry point.

    surgformer synth     write a synthetic JIGSAWS-format dataset + manifest
    surgformer prepare   parse/align/fuse a manifest into a hashed cache file
    surgformer train     train recognizer + predictor on all trials, save a checkpoint
    surgformer evaluate  leave-one-user-out evaluation -> report.json / report.csv
    surgformer infer     stream kinematic frames, one JSON line per 30-frame window
    surgformer bench     end-to-end latency of a single window (CPU, one thread)

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
``SURGFORMER_LOG_LEVEL`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .data.jigsaws import (
    BLOCK,
    GRIP,
    N_KINEMATIC,
    PSM_LEFT,
    PSM_RIGHT,
    ROT,
    ManifestEntry,
    format_transcript,
    labels_to_intervals,
    load_trial,
    parse_kinematic_line,
    read_feature_matrix,
    read_manifest,
    select_kinematic_subset,
    trajectory_mm,
    write_feature_matrix,
    write_kinematics,
    write_manifest,
)
from .data.synth import SynthConfig, synthesize_corpus
from .data.trials import LabeledTrial, Normalizer
from .errors import CheckpointError, ConfigurationError, DataError, NumericError, SurgformerError
from .experiment.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .experiment.config import TrainConfig, load_config
from .experiment.louo import run_louo
from .experiment.train import train_predictor, train_recognizer
from .features import KINEMATIC_KINDS, canonical_selection
from .metrics import REALTIME_BUDGET_MS, latency_stats
from .prediction import end_to_end_infer

log = logging.getLogger("surgformer")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CACHE_VERSION = 1
LOG_ENV = "SURGFORMER_LOG_LEVEL"


class UsageError(SurgformerError):
    pass


# -- dataset loading --

def _config(args) -> TrainConfig:
    return load_config(args.config, args.set or ())


def _manifest_hash(entries, config: TrainConfig) -> str:
    h = hashlib.sha256()
    h.update(f"v{CACHE_VERSION}\0".encode())
    h.update(",".join(config.features).encode() + b"\0" + ",".join(config.labels).encode() + b"\0")
    for e in sorted(entries, key=lambda e: e.trial_id):
        h.update(f"{e.trial_id}\0{e.subject}\0".encode())
        kinds = [k for k in config.features if k not in KINEMATIC_KINDS]
        for p in [e.kinematics, e.transcript] + [e.features[k] for k in kinds if k in e.features]:
            h.update(Path(p).read_bytes())
    return h.hexdigest()


def _load_manifest_trials(path, config: TrainConfig) -> list[LabeledTrial]:
    entries = read_manifest(path)
    trials = []
    for e in entries:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            trials.append(load_trial(e, config.features, config.label_map))
        for w in caught:
            log.warning("%s", w.message)
    return trials


def save_cache(path, trials, config: TrainConfig, digest: str) -> None:
    meta = {
        "version": CACHE_VERSION,
        "hash": digest,
        "features": list(config.features),
        "labels": list(config.labels),
        "trials": [{"trial_id": t.trial_id, "subject": t.subject,
                    "feature_slices": {k: list(v) for k, v in t.meta.get("feature_slices", {}).items()}}
                   for t in trials],
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for i, t in enumerate(trials):
        arrays[f"t{i}/features"] = t.features
        arrays[f"t{i}/labels"] = t.labels
        arrays[f"t{i}/traj"] = t.traj
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)


def load_cache(path, config: TrainConfig | None = None) -> tuple[list[LabeledTrial], dict]:
    try:
        with np.load(path) as npz:
            meta = json.loads(npz["meta"].tobytes().decode())
            trials = [
                LabeledTrial(m["trial_id"], m["subject"], npz[f"t{i}/features"], npz[f"t{i}/labels"],
                             npz[f"t{i}/traj"],
                             meta={"feature_slices": {k: tuple(v) for k, v in m["feature_slices"].items()}})
                for i, m in enumerate(meta["trials"])
            ]
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"{path}: unreadable dataset cache ({exc})") from None
    if config is not None and (tuple(meta["features"]) != config.features or tuple(meta["labels"]) != config.labels):
        raise ConfigurationError(
            f"{path}: cache was prepared for features={meta['features']} labels={meta['labels']}, "
            f"config asks for features={list(config.features)} labels={list(config.labels)}"
        )
    return trials, meta


def _dataset(args, config: TrainConfig) -> list[LabeledTrial]:
    if args.cache:
        return load_cache(args.cache, config)[0]
    return _load_manifest_trials(args.manifest, config)


# -- commands --

def cmd_synth(args) -> int:
    out = Path(args.out)
    for sub in ("kinematics", "transcriptions", "features"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    sc = SynthConfig(n_classes=args.classes, n_frames=args.frames, noise=args.noise)
    trials = synthesize_corpus(sc, args.subjects, args.trials, seed=args.seed)
    names = [f"G{i}" for i in range(1, sc.n_classes + 1)]
    entries = []
    for t in trials:
        kin = np.zeros((len(t), N_KINEMATIC))
        for block in range(4):
            kin[:, block * BLOCK + ROT.start:block * BLOCK + ROT.stop] = np.eye(3).reshape(-1)
        kin[:, PSM_LEFT:PSM_LEFT + 3] = t.traj[:, :3] / 1000.0
        kin[:, PSM_RIGHT:PSM_RIGHT + 3] = t.traj[:, 3:] / 1000.0
        kin[:, PSM_LEFT + GRIP] = t.features[:, 0]
        kin[:, PSM_RIGHT + GRIP] = t.features[:, 1]
        kin_path = out / "kinematics" / f"{t.trial_id}.txt"
        tr_path = out / "transcriptions" / f"{t.trial_id}.txt"
        feat_path = out / "features" / f"{t.trial_id}_C.bin"
        write_kinematics(kin_path, kin)
        tr_path.write_text(format_transcript(labels_to_intervals(t.labels, names)))
        write_feature_matrix(feat_path, t.features)
        entries.append(ManifestEntry(t.trial_id, t.subject, kin_path, tr_path, {"C": feat_path}))
    write_manifest(out / "manifest.txt", entries)
    print(json.dumps({"manifest": str(out / "manifest.txt"), "trials": len(entries), "labels": names}))
    return EXIT_OK


def cmd_prepare(args) -> int:
    config = _config(args)
    entries = read_manifest(args.manifest)
    digest = _manifest_hash(entries, config)
    cache_dir = Path(args.cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"{digest[:16]}.npz"
    if path.exists():
        try:
            _, meta = load_cache(path)
            if meta.get("hash") == digest:
                log.info("cache hit %s", path)
                print(json.dumps({"cache": str(path), "hash": digest, "hit": True}))
                return EXIT_OK
        except DataError:
            log.warning("rebuilding unreadable cache %s", path)
    trials = _load_manifest_trials(args.manifest, config)
    save_cache(path, trials, config, digest)
    print(json.dumps({"cache": str(path), "hash": digest, "hit": False, "trials": len(trials),
                      "features": list(config.features)}))
    return EXIT_OK


def cmd_train(args) -> int:
    config = _config(args)
    trials = _dataset(args, config)
    norm = Normalizer.fit(trials)
    trials = [norm.apply_trial(t) for t in trials]
    seed = np.random.SeedSequence(config.seed)
    rec = train_recognizer(trials, config, seed)
    pred = train_predictor(trials, rec.model, config, seed=seed)
    ckpt = Checkpoint(config, trials[0].d_in, rec.model, pred.model, normalizer=norm,
                      optimizers={"recognizer": rec.optimizer, "predictor": pred.optimizer},
                      rng_state={"seed": config.seed})
    save_checkpoint(args.out, ckpt)
    print(json.dumps({"checkpoint": str(args.out), "rec_final_loss": rec.losses[-1],
                      "pred_final_loss": pred.losses[-1], "recognizer_params": rec.model.num_params(),
                      "predictor_params": pred.model.num_params()}))
    return EXIT_OK


SUMMARY_KEYS = ("rec_accuracy", "rec_edit", "rec_f1_10", "rec_f1_25", "rec_f1_50",
                "pred_gt_accuracy", "pred_rec_accuracy", "traj_rmse_mean", "traj_mae_mean",
                "traj_mape_mean", "latency_mean_ms")


def cmd_evaluate(args) -> int:
    config = _config(args)
    trials = _dataset(args, config)
    report = run_louo(trials, config, folds=args.fold,
                      progress=lambda s, row: log.info("fold %s done: rec_accuracy=%.2f", s, row["rec_accuracy"]))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())
    summary = {k: report.to_dict()["aggregate"].get(k) for k in SUMMARY_KEYS if k in report.aggregate}
    print(json.dumps({"report": str(out / "report.json"), "folds": len(report.folds), **summary}))
    return EXIT_OK


def _feature_sidecars(items) -> dict[str, np.ndarray]:
    mats = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"--features expects KIND=path, got {item!r}")
        kind, p = item.split("=", 1)
        mats[kind] = read_feature_matrix(p)
    return mats


def _window_features(frames: np.ndarray, start: int, sidecars, ckpt: Checkpoint) -> np.ndarray:
    parts = []
    for kind in ckpt.config.features:
        if kind in KINEMATIC_KINDS:
            parts.append(select_kinematic_subset(frames, kind))
            continue
        if kind not in sidecars:
            raise UsageError(f"checkpoint uses {kind} features; pass --features {kind}=path")
        mat = sidecars[kind]
        if start + len(frames) > len(mat):
            raise DataError(f"{kind} sidecar has {len(mat)} rows, window needs frames up to {start + len(frames)}")
        parts.append(mat[start:start + len(frames)])
    x = np.concatenate(parts, axis=1)
    if ckpt.pca is not None:
        raise UsageError("streaming inference with a PCA-reduced modality is not supported")
    if ckpt.normalizer is not None:
        x = ckpt.normalizer.apply(x)
    return x


def _read_lines(path):
    if path in (None, "-"):
        yield from sys.stdin
    else:
        with open(path) as fh:
            yield from fh


def _label_name(names, i) -> str:
    # the head has FC_dim outputs; indices past the label set have no name
    return names[i] if i < len(names) else f"class{i}"


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    sidecars = _feature_sidecars(args.features)
    cfg = ckpt.config
    names = list(cfg.labels)
    w_obs = cfg.w_obs
    out = sys.stdout
    buf: list[str] = []
    window = 0
    frame = 0
    for raw in _read_lines(args.input):
        if not raw.strip():
            continue
        buf.append(raw)
        if len(buf) < w_obs:
            continue
        start = frame
        frame += w_obs
        lines, buf = buf, []
        try:
            rows = np.stack([parse_kinematic_line(l, start + i + 1, args.input or "<stdin>")
                             for i, l in enumerate(lines)])
            x = _window_features(rows, start, sidecars, ckpt)
        except DataError as exc:
            print(f"surgformer infer: skipping window {window} (frames {start}-{start + w_obs - 1}): {exc}",
                  file=sys.stderr)
            window += 1
            continue
        last_pos = trajectory_mm(rows)[w_obs - cfg.downsample]
        t0 = time.perf_counter()
        obs, pred, traj = end_to_end_infer(x, ckpt.recognizer, ckpt.predictor, last_pos)
        latency = (time.perf_counter() - t0) * 1000.0
        record = {
            "window": window,
            "start_frame": start,
            "recognized": [_label_name(names, i) for i in obs],
            "predicted": [_label_name(names, i) for i in pred],
            "trajectory_mm": np.round(traj, 6).tolist(),
            "latency_ms": latency,
        }
        out.write(json.dumps(record) + "\n")
        out.flush()
        window += 1
    if buf:
        log.warning("ignoring %d trailing frame(s) that do not fill a %d-frame window", len(buf), w_obs)
        print(f"surgformer infer: warning: ignored {len(buf)} trailing frame(s) (partial window)", file=sys.stderr)
    return EXIT_OK


def bench_models(args):
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        return ckpt.config, ckpt.d_in, ckpt.recognizer, ckpt.predictor
    from .experiment.train import build_predictor, build_recognizer

    config = TrainConfig(features=("K14",))
    d_in = 14
    rng = np.random.default_rng(args.seed)
    return config, d_in, build_recognizer(config, d_in, rng), build_predictor(config, d_in, rng)


def run_bench(args) -> dict:
    config, d_in, rec, pred = bench_models(args)
    dtype = np.float32 if args.dtype == "float32" else np.float64
    rec.cast(dtype)
    pred.cast(dtype)
    rng = np.random.default_rng(args.seed)
    windows = rng.normal(size=(max(1, min(args.iterations, 64)), config.w_obs, d_in)).astype(dtype)
    last = rng.normal(scale=10.0, size=(len(windows), 6)).astype(dtype)
    samples = []
    with _thread_limit(args.threads):
        for i in range(args.iterations + args.warmup):
            j = i % len(windows)
            t0 = time.perf_counter()
            end_to_end_infer(windows[j], rec, pred, last[j])
            samples.append((time.perf_counter() - t0) * 1000.0)
    stats = latency_stats(samples, args.warmup)
    return {
        **stats.as_dict(),
        "iterations": args.iterations,
        "warmup": args.warmup,
        "threads": args.threads,
        "dtype": args.dtype,
        "d_in": d_in,
        "budget_ms": REALTIME_BUDGET_MS,
        "within_budget": not stats.over_budget,
        "recognizer_params": rec.num_params(),
        "predictor_params": pred.num_params(),
    }


class _thread_limit:
    """Cap BLAS threads when threadpoolctl is available."""

    def __init__(self, n: int):
        self.n = n
        self._ctl = None

    def __enter__(self):
        try:
            from threadpoolctl import threadpool_limits
        except ImportError:
            log.warning("threadpoolctl not installed; BLAS thread count not limited")
            return self
        self._ctl = threadpool_limits(limits=self.n)
        return self

    def __exit__(self, *exc):
        if self._ctl is not None:
            self._ctl.unregister()
        return False


def cmd_bench(args) -> int:
    if args.iterations < 1:
        raise UsageError("--iterations must be >= 1")
    print(json.dumps(run_bench(args), sort_keys=True))
    return EXIT_OK


# -- argument parsing --

def _add_config_args(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable), e.g. --set features=K14,C")


def _add_dataset_args(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest", help="dataset manifest (trial subject kinematics transcript [KIND=path]...)")
    src.add_argument("--cache", help="dataset cache written by 'prepare'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="surgformer", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic JIGSAWS-format dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--subjects", type=int, default=5)
    p.add_argument("--trials", type=int, default=4, help="trials per subject")
    p.add_argument("--frames", type=int, default=300)
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="parse and fuse a manifest into a cache file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache-dir", required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train on every trial and write a checkpoint")
    _add_dataset_args(p)
    _add_config_args(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="leave-one-user-out evaluation")
    _add_dataset_args(p)
    _add_config_args(p)
    p.add_argument("--out-dir", required=True, help="directory for report.json and report.csv")
    p.add_argument("--fold", action="append", metavar="SUBJECT", help="evaluate only this held-out subject")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("infer", help="streaming inference over kinematic frames")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", help="kinematics text file (default: standard input)")
    p.add_argument("--features", action="append", metavar="KIND=PATH",
                   help="per-frame feature sidecar for a non-kinematic modality")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", help="single-window end-to-end latency")
    p.add_argument("--checkpoint", help="checkpoint (default: full-size model on K14 input, random weights)")
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        print(f"surgformer {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"surgformer {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, OSError) as exc:
        print(f"surgformer {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

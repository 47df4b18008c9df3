"""Training, cross-validation, evaluation and checkpointing."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, dump_config, load_config
from .evaluate import evaluate_prediction, evaluate_recognition, measure_latency
from .louo import EvalReport, run_louo, sweep
from .train import build_predictor, build_recognizer, train_predictor, train_recognizer

__all__ = [
    "Checkpoint", "EvalReport", "TrainConfig", "build_predictor", "build_recognizer", "dump_config",
    "evaluate_prediction", "evaluate_recognition", "load_checkpoint", "load_config", "measure_latency",
    "run_louo", "save_checkpoint", "sweep", "train_predictor", "train_recognizer",
]

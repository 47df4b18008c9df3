"""Training/evaluation configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from ..data.jigsaws import SUTURING_LABELS
from ..errors import ConfigurationError
from ..features import canonical_selection
from ..prediction import TRAJ_MODES, LossWeights

GESTURE_SOURCES = ("ground_truth", "recognized")


@dataclass(frozen=True)
class TrainConfig:
    features: tuple[str, ...] = ("K14",)
    labels: tuple[str, ...] = SUTURING_LABELS
    w_obs: int = 30
    w_pred: int = 10
    downsample: int = 3
    epochs: int = 20
    batch_size: int = 10
    seed: int = 0
    # architecture
    d_model: int = 60
    n_enc: int = 3
    h_enc: int = 2
    n_dec: int = 2
    h_dec: int = 4
    fc_dim: int = 10
    tcn_channels: tuple[int, ...] = (32, 64)
    kernel_size: int = 5
    d_ff: int = 240
    d_emb: int = 16
    dropout: float = 0.1
    # optimizer
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    warmup_steps: int = 4000
    lr_factor: float = 1.0
    # prediction objective
    w_gesture: float = 1.0
    w_traj: float = 0.01
    traj_mode: str = "delta"
    predictor_gestures: str = "ground_truth"
    coord_noise: float = 0.0
    # preprocessing
    seg_pca_components: int = 0
    # evaluation
    latency_iterations: int = 0
    latency_warmup: int = 10

    def __post_init__(self):
        object.__setattr__(self, "features", canonical_selection(self.features))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "tcn_channels", tuple(int(c) for c in self.tcn_channels))
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if self.w_obs < 1 or self.w_pred < 1 or self.downsample < 1:
            raise ConfigurationError("w_obs, w_pred and downsample must be >= 1")
        if self.w_obs % self.downsample:
            raise ConfigurationError(f"w_obs={self.w_obs} must be a multiple of downsample={self.downsample}")
        if len(set(self.labels)) != len(self.labels) or not self.labels:
            raise ConfigurationError("labels must be a non-empty list of distinct gesture names")
        if len(self.labels) > self.fc_dim:
            raise ConfigurationError(f"{len(self.labels)} labels do not fit FC_dim={self.fc_dim}")
        if self.d_model % self.h_enc or self.d_model % self.h_dec:
            raise ConfigurationError(f"d_model={self.d_model} must be divisible by h_enc and h_dec")
        if self.w_obs < 2 ** (len(self.tcn_channels) + 1):
            raise ConfigurationError(f"w_obs={self.w_obs} < 2^N_conv: pooling would vanish")
        if self.traj_mode not in TRAJ_MODES:
            raise ConfigurationError(f"traj_mode must be one of {TRAJ_MODES}")
        if self.predictor_gestures not in GESTURE_SOURCES:
            raise ConfigurationError(f"predictor_gestures must be one of {GESTURE_SOURCES}")
        if not self.coord_noise >= 0:
            raise ConfigurationError("coord_noise must be >= 0")
        self.loss_weights  # validates

    @property
    def n_conv(self) -> int:
        return len(self.tcn_channels) + 1

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.w_gesture, self.w_traj)

    @property
    def label_map(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.labels)}

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {unknown}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def parse_value(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigurationError(f"unknown config key {key!r}")
    typ = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if typ.startswith("tuple[int"):
            return tuple(int(x) for x in raw.replace("+", ",").split(",") if x.strip())
        if typ.startswith("tuple"):
            return tuple(x.strip() for x in raw.replace("+", ",").split(",") if x.strip())
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"config key {key!r}: cannot parse {raw!r} as {typ}") from None
    return raw


def parse_overrides(pairs) -> dict[str, Any]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigurationError(f"expected key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        key = key.strip()
        out[key] = parse_value(key, raw)
    return out


def load_config(path=None, overrides=()) -> TrainConfig:
    """Read a flat ``key = value`` file (``#`` comments), then apply ``overrides``."""
    values: dict[str, Any] = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}: line {lineno}: expected key = value")
            values.update(parse_overrides([line]))
    values.update(parse_overrides(overrides) if not isinstance(overrides, Mapping) else overrides)
    return TrainConfig(**values)


def dump_config(config: TrainConfig) -> str:
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"

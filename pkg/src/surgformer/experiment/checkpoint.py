"""Binary checkpoint container.

Layout: 8-byte magic ``b"SGTCKPT\\n"``, uint32 format version, uint64
header length, UTF-8 JSON header, then an ``.npz`` payload with every
array. The header records the payload length and its SHA-256 so
truncation and corruption are detected before any array is decoded.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data.pca import PcaBasis
from ..data.trials import Normalizer
from ..errors import CheckpointError
from ..nn.optim import Adam, AdamState, NoamSchedule
from ..prediction import Predictor
from ..recognition import Recognizer
from .config import TrainConfig
from .train import build_predictor, build_recognizer

MAGIC = b"SGTCKPT\n"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


@dataclass
class Checkpoint:
    config: TrainConfig
    d_in: int
    recognizer: Recognizer
    predictor: Predictor
    normalizer: Normalizer | None = None
    pca: PcaBasis | None = None
    optimizers: dict[str, Adam] = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)

    @property
    def label_names(self) -> tuple[str, ...]:
        return self.config.labels


def _arrays(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    arrays = {f"recognizer/{k}": v for k, v in ckpt.recognizer.state_dict().items()}
    arrays.update({f"predictor/{k}": v for k, v in ckpt.predictor.state_dict().items()})
    arrays.update({f"predictor_buffer/{k}": v for k, v in ckpt.predictor.buffers().items()})
    if ckpt.normalizer is not None:
        arrays["normalizer/mean"] = ckpt.normalizer.mean
        arrays["normalizer/std"] = ckpt.normalizer.std
    if ckpt.pca is not None:
        arrays["pca/mean"] = ckpt.pca.mean
        arrays["pca/components"] = ckpt.pca.components
        arrays["pca/explained_variance"] = ckpt.pca.explained_variance
        arrays["pca/total_variance"] = np.asarray([ckpt.pca.total_variance])
    for which, opt in sorted(ckpt.optimizers.items()):
        for name, st in opt.states.items():
            arrays[f"adam/{which}/{name}/m"] = st.m
            arrays[f"adam/{which}/{name}/v"] = st.v
            arrays[f"adam/{which}/{name}/step"] = np.asarray([st.step])
    return arrays


def _npz_bytes(arrays: dict[str, np.ndarray]) -> bytes:
    """``np.savez`` layout with a fixed entry timestamp, so equal arrays give equal bytes."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asanyarray(arr), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    payload = _npz_bytes(_arrays(ckpt))
    header = json.dumps({
        "config": ckpt.config.to_dict(),
        "d_in": ckpt.d_in,
        "label_map": ckpt.config.label_map,
        "optimizers": sorted(ckpt.optimizers),
        "rng_state": ckpt.rng_state,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }, sort_keys=True).encode()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
        fh.write(header)
        fh.write(payload)
    tmp.replace(path)


def load_checkpoint(path, expect: TrainConfig | None = None) -> Checkpoint:
    """Load and validate a checkpoint.

    With ``expect`` given, the stored feature selection, label set and
    architecture must match it.
    """
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint (no header)")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    start = _PREFIX.size
    if len(data) < start + hlen:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(data[start:start + hlen])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    payload = data[start + hlen:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(f"{path}: truncated payload ({len(payload)} of {header['payload_bytes']} bytes)")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"{path}: payload checksum mismatch")
    config = TrainConfig.from_dict(header["config"])
    if expect is not None:
        _check_compatible(config, expect)
    with np.load(io.BytesIO(payload)) as npz:
        arrays = {k: npz[k] for k in npz.files}
    d_in = int(header["d_in"])
    rng = np.random.default_rng(0)
    rec = build_recognizer(config, d_in, rng)
    pred = build_predictor(config, d_in, rng)
    rec.load_state_dict(_section(arrays, "recognizer/"))
    pred.load_state_dict(_section(arrays, "predictor/"))
    pred.load_buffers(_section(arrays, "predictor_buffer/"))
    norm = None
    if "normalizer/mean" in arrays:
        norm = Normalizer(arrays["normalizer/mean"], arrays["normalizer/std"])
        if norm.mean.shape[0] != d_in:
            raise CheckpointError(f"{path}: normalizer has {norm.mean.shape[0]} features, model expects {d_in}")
    pca = None
    if "pca/mean" in arrays:
        pca = PcaBasis(arrays["pca/mean"], arrays["pca/components"], arrays["pca/explained_variance"],
                       float(arrays["pca/total_variance"][0]))
    optimizers = {}
    for which in header.get("optimizers", []):
        model = rec if which == "recognizer" else pred
        opt = Adam(dict(model.named_params()), _schedule(config), config.adam_beta1,
                   config.adam_beta2, config.adam_eps)
        for name in opt.states:
            key = f"adam/{which}/{name}"
            opt.states[name] = AdamState(arrays[f"{key}/m"].copy(), arrays[f"{key}/v"].copy(),
                                         int(arrays[f"{key}/step"][0]), config.adam_beta1,
                                         config.adam_beta2, config.adam_eps)
        optimizers[which] = opt
    return Checkpoint(config, d_in, rec, pred, norm, pca, optimizers, header.get("rng_state", {}))


def _schedule(config):
    return NoamSchedule(config.d_model, config.warmup_steps, config.lr_factor)


def _section(arrays, prefix):
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


_ARCH_KEYS = ("features", "labels", "w_obs", "w_pred", "downsample", "d_model", "n_enc", "h_enc",
              "n_dec", "h_dec", "fc_dim", "tcn_channels", "kernel_size", "d_ff", "d_emb", "traj_mode")


def _check_compatible(stored: TrainConfig, expect: TrainConfig) -> None:
    diffs = [f"{k}: checkpoint={getattr(stored, k)!r} config={getattr(expect, k)!r}"
             for k in _ARCH_KEYS if getattr(stored, k) != getattr(expect, k)]
    if diffs:
        raise CheckpointError("checkpoint does not match the configuration: " + "; ".join(diffs))

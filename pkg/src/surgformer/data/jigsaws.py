"""Readers and writers for JIGSAWS-style trial files.

Kinematics: whitespace separated text, 76 columns per 30 Hz frame, laid
out as four 19-value blocks (MTM left, MTM right, PSM left, PSM right).
Each block is position (3, meters), rotation matrix (9, row-major),
linear velocity (3), angular velocity (3), gripper angle (1).

Transcripts: ``start end Gk`` lines with 1-based inclusive frame indices.

Feature matrices: a 16-byte header (``b"SGFM"``, uint32 version, uint32
rows, uint32 cols, little endian) followed by row-major little-endian
float32 values. ``.csv``/``.txt`` files are read as comma or whitespace
separated text instead.
"""

from __future__ import annotations

import logging
import re
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..errors import AlignmentError, ConfigurationError, DataError, ParseError
from ..features import canonical_selection
from .trials import UNLABELED, LabeledTrial

log = logging.getLogger(__name__)

N_KINEMATIC = 76
BLOCK = 19
BLOCK_NAMES = ("MTM_left", "MTM_right", "PSM_left", "PSM_right")
PSM_LEFT, PSM_RIGHT = 2 * BLOCK, 3 * BLOCK

# offsets inside a 19-value block
POS = slice(0, 3)
ROT = slice(3, 12)
VEL = slice(12, 15)
ANG_VEL = slice(15, 18)
GRIP = 18

K38_INDICES = np.arange(PSM_LEFT, PSM_LEFT + 2 * BLOCK)
_K14_BLOCK = np.array([0, 1, 2, 12, 13, 14, 18])
K14_INDICES = np.concatenate([PSM_LEFT + _K14_BLOCK, PSM_RIGHT + _K14_BLOCK])
TRAJ_INDICES = np.concatenate([PSM_LEFT + np.arange(3), PSM_RIGHT + np.arange(3)])

GESTURE_VOCABULARY = tuple(f"G{i}" for i in range(1, 16))
# gestures that occur in the Suturing task
SUTURING_LABELS = ("G1", "G2", "G3", "G4", "G5", "G6", "G8", "G9", "G10", "G11")

FEATURE_MAGIC = b"SGFM"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class RotationWarning(UserWarning):
    """A rotation block is far from a proper rotation (``|det - 1| >= 0.05``)."""


def parse_kinematics(path) -> np.ndarray:
    """Read a kinematics file into an ``(N, 76)`` array, one row per frame."""
    path = Path(path)
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rows.append(parse_kinematic_line(line, lineno, path))
    frames = np.array(rows, dtype=np.float64).reshape(-1, N_KINEMATIC)
    check_rotations(frames, source=str(path))
    return frames


def parse_kinematic_line(line: str, lineno: int = 0, source="<stream>") -> np.ndarray:
    tokens = line.split()
    if len(tokens) != N_KINEMATIC:
        raise ParseError(f"{source}: row {lineno} has {len(tokens)} columns, expected {N_KINEMATIC}")
    try:
        row = np.array([float(t) for t in tokens])
    except ValueError as exc:
        raise ParseError(f"{source}: row {lineno}: non-numeric token ({exc})") from None
    if not np.all(np.isfinite(row)):
        raise ParseError(f"{source}: row {lineno}: non-finite value")
    return row


def check_rotations(frames: np.ndarray, source: str = "") -> np.ndarray:
    """Warn about frames whose rotation blocks have ``|det - 1| >= 0.05``.

    Returns the indices of offending frames.
    """
    if len(frames) == 0:
        return np.zeros(0, dtype=np.int64)
    rots = np.stack([frames[:, b * BLOCK + 3:b * BLOCK + 12] for b in range(4)], axis=1)
    dets = np.linalg.det(rots.reshape(len(frames), 4, 3, 3))
    bad = np.flatnonzero(np.any(np.abs(dets - 1.0) >= 0.05, axis=1))
    if bad.size:
        warnings.warn(
            f"{source}: {bad.size} frame(s) with rotation determinant far from 1 (first row {bad[0] + 1})",
            RotationWarning, stacklevel=2,
        )
    return bad


def select_kinematic_subset(frame: np.ndarray, spec: str) -> np.ndarray:
    """K38: both PSM blocks in file order. K14: PSM position, velocity, gripper per arm.

    Accepts a single frame or an ``(N, 76)`` array.
    """
    if spec == "K38":
        return frame[..., K38_INDICES]
    if spec == "K14":
        return frame[..., K14_INDICES]
    raise ConfigurationError(f"unknown kinematic subset {spec!r}")


def trajectory_mm(frames: np.ndarray) -> np.ndarray:
    """PSM left/right Cartesian positions converted from meters to millimeters."""
    return frames[..., TRAJ_INDICES] * 1000.0


@dataclass(frozen=True)
class Interval:
    start: int
    end: int
    label: str


def parse_transcript(path) -> list[Interval]:
    path = Path(path)
    text = path.read_text()
    return parse_transcript_text(text, source=str(path))


def parse_transcript_text(text: str, source: str = "<transcript>") -> list[Interval]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"{source}: line {lineno}: expected 'start end Gk', got {line.strip()!r}")
        try:
            start, end = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"{source}: line {lineno}: non-integer frame index") from None
        label = parts[2]
        if label not in GESTURE_VOCABULARY:
            raise DataError(f"{source}: line {lineno}: unknown gesture label {label!r}")
        if start > end or start < 1:
            raise DataError(f"{source}: line {lineno}: invalid interval {start}..{end}")
        out.append(Interval(start, end, label))
    out.sort(key=lambda iv: iv.start)
    for a, b in zip(out, out[1:]):
        if b.start <= a.end:
            raise DataError(f"{source}: overlapping intervals {a.start}-{a.end} {a.label} and "
                            f"{b.start}-{b.end} {b.label}")
    return out


def format_transcript(intervals: Sequence[Interval]) -> str:
    return "".join(f"{iv.start} {iv.end} {iv.label}\n" for iv in intervals)


def frame_labels(intervals: Sequence[Interval], n_frames: int, label_map: Mapping[str, int]) -> np.ndarray:
    labels = np.full(n_frames, UNLABELED, dtype=np.int64)
    for iv in intervals:
        if iv.label not in label_map:
            raise DataError(f"gesture {iv.label} is not in the configured label map {sorted(label_map)}")
        labels[iv.start - 1:min(iv.end, n_frames)] = label_map[iv.label]
    return labels


def labels_to_intervals(labels: np.ndarray, names: Sequence[str]) -> list[Interval]:
    out = []
    t = 0
    n = len(labels)
    while t < n:
        u = t
        while u + 1 < n and labels[u + 1] == labels[t]:
            u += 1
        if labels[t] != UNLABELED:
            out.append(Interval(t + 1, u + 1, names[labels[t]]))
        t = u + 1
    return out


# -- feature matrices --

def write_feature_matrix(path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype="<f4")
    if values.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {values.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, *values.shape))
        fh.write(np.ascontiguousarray(values).tobytes())


def read_feature_matrix(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() in (".csv", ".txt"):
        return _read_text_matrix(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise ParseError(f"{path}: truncated feature header")
    magic, version, rows, cols = _HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise ParseError(f"{path}: unsupported feature file version {version}")
    expected = _HEADER.size + 4 * rows * cols
    if len(data) != expected:
        raise ParseError(f"{path}: expected {expected} bytes for {rows}x{cols}, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(rows, cols).astype(np.float64)


def _read_text_matrix(path: Path) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append([float(t) for t in re.split(r"[,\s]+", line.strip())])
        except ValueError:
            raise ParseError(f"{path}: row {lineno}: non-numeric token") from None
    if not rows:
        raise ParseError(f"{path}: empty feature file")
    if len({len(r) for r in rows}) != 1:
        raise ParseError(f"{path}: ragged rows")
    return np.array(rows, dtype=np.float64)


# -- alignment --

def _check_length(kind: str, n_feat: int, n_kin: int) -> None:
    if n_feat < n_kin or n_feat > n_kin + 2:
        raise AlignmentError(
            f"{kind} has {n_feat} frames but kinematics has {n_kin} (allowed: equal or up to 2 extra)"
        )


def align_and_label(kin: np.ndarray, transcript: Sequence[Interval],
                    feature_matrices: Mapping[str, np.ndarray], selection: Sequence[str],
                    label_map: Mapping[str, int], trial_id: str = "", subject: str = "") -> LabeledTrial:
    """Fuse the selected modalities frame by frame and attach labels and trajectory targets."""
    order = canonical_selection(selection)
    n = len(kin)
    parts = []
    slices = {}
    col = 0
    for kind in order:
        if kind in ("K38", "K14"):
            parts.append(select_kinematic_subset(kin, kind))
            slices[kind] = (col, col + parts[-1].shape[1])
            col += parts[-1].shape[1]
            continue
        if kind not in feature_matrices:
            raise AlignmentError(f"trial {trial_id}: selected feature {kind} not provided")
        mat = np.asarray(feature_matrices[kind], dtype=np.float64)
        _check_length(kind, len(mat), n)
        parts.append(mat[:n])
        slices[kind] = (col, col + mat.shape[1])
        col += mat.shape[1]
    return LabeledTrial(
        trial_id=trial_id,
        subject=subject,
        features=np.concatenate(parts, axis=1),
        labels=frame_labels(transcript, n, label_map),
        traj=trajectory_mm(kin),
        meta={"feature_slices": slices},
    )


# -- manifest --

@dataclass
class ManifestEntry:
    trial_id: str
    subject: str
    kinematics: Path
    transcript: Path
    features: dict[str, Path]


def read_manifest(path) -> list[ManifestEntry]:
    """Parse ``trial_id subject kinematics transcript [KIND=path ...]`` lines.

    Relative paths are resolved against the manifest's directory; ``#``
    starts a comment.
    """
    path = Path(path)
    base = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 4:
            raise ParseError(f"{path}: line {lineno}: expected 'trial subject kinematics transcript [KIND=path]...'")
        feats = {}
        for item in parts[4:]:
            if "=" not in item:
                raise ParseError(f"{path}: line {lineno}: feature entry {item!r} is not KIND=path")
            kind, p = item.split("=", 1)
            feats[kind] = base / p
        entries.append(ManifestEntry(parts[0], parts[1], base / parts[2], base / parts[3], feats))
    if not entries:
        raise ParseError(f"{path}: manifest lists no trials")
    return entries


def write_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    path = Path(path)
    lines = []
    for e in entries:
        items = [e.trial_id, e.subject, _rel(e.kinematics, path.parent), _rel(e.transcript, path.parent)]
        items += [f"{k}={_rel(p, path.parent)}" for k, p in sorted(e.features.items())]
        lines.append(" ".join(items))
    path.write_text("\n".join(lines) + "\n")


def _rel(p: Path, base: Path) -> str:
    try:
        return str(Path(p).resolve().relative_to(base.resolve()))
    except ValueError:
        return str(p)


def load_trial(entry: ManifestEntry, selection: Sequence[str], label_map: Mapping[str, int]) -> LabeledTrial:
    kin = parse_kinematics(entry.kinematics)
    transcript = parse_transcript(entry.transcript)
    order = canonical_selection(selection)
    mats = {k: read_feature_matrix(entry.features[k]) for k in order
            if k not in ("K38", "K14") and k in entry.features}
    return align_and_label(kin, transcript, mats, order, label_map, entry.trial_id, entry.subject)


def write_kinematics(path, frames: np.ndarray) -> None:
    np.savetxt(path, np.asarray(frames, dtype=np.float64), fmt="%.17g")

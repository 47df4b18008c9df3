"""Trial ingestion, alignment, windowing and synthetic data."""

from .jigsaws import (
    K14_INDICES,
    K38_INDICES,
    SUTURING_LABELS,
    Interval,
    ManifestEntry,
    RotationWarning,
    align_and_label,
    load_trial,
    parse_kinematics,
    parse_transcript,
    read_feature_matrix,
    read_manifest,
    select_kinematic_subset,
    write_feature_matrix,
)
from .pca import PcaBasis, pca_fit, pca_transform
from .synth import SynthConfig, synthesize_corpus, synthesize_trial
from .trials import (
    UNLABELED,
    LabeledTrial,
    Normalizer,
    WindowBatch,
    downsample,
    louo_splits,
    stack_windows,
    tumbling_windows,
    zscore_apply,
    zscore_fit,
)

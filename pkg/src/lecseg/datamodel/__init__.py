from .clips import clipify, read_cues
from .io import (
    decode_features,
    encode_features,
    read_corpus,
    read_features,
    read_gt,
    read_manifest,
    write_corpus,
    write_features,
    write_gt,
)
from .synth import SynthConfig, course_of, generate_lecture, generate_synthetic, philox_rng
from .types import (
    DEFAULT_DIMS,
    MODALITIES,
    ClipFeatureRecord,
    Lecture,
    Segmentation,
    SubtitleCue,
    canonical_labels,
    is_contiguous,
)

__all__ = [
    "DEFAULT_DIMS",
    "MODALITIES",
    "ClipFeatureRecord",
    "Lecture",
    "Segmentation",
    "SubtitleCue",
    "SynthConfig",
    "canonical_labels",
    "clipify",
    "course_of",
    "decode_features",
    "encode_features",
    "generate_lecture",
    "generate_synthetic",
    "is_contiguous",
    "philox_rng",
    "read_corpus",
    "read_cues",
    "read_features",
    "read_gt",
    "read_manifest",
    "write_corpus",
    "write_features",
    "write_gt",
]

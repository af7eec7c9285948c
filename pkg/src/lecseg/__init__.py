"""Unsupervised lecture segmentation on precomputed clip features."""

from .baselines import CTESegmenter, KMeansSegmenter, NaiveSegmenter
from .datamodel import Lecture, Segmentation, SynthConfig, generate_synthetic
from .embedder import JointEmbedder
from .metrics import MetricReport, evaluate
from .twfinch import TWFinch, TwfinchConfig

__version__ = "0.1.0"

__all__ = [
    "CTESegmenter",
    "JointEmbedder",
    "KMeansSegmenter",
    "Lecture",
    "MetricReport",
    "NaiveSegmenter",
    "Segmentation",
    "SynthConfig",
    "TWFinch",
    "TwfinchConfig",
    "evaluate",
    "generate_synthetic",
]

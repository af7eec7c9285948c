"""Core data types: clips, lectures, segmentations, subtitle cues."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from ..exceptions import ValidationError

MODALITIES = ("v2d", "v3d", "ocr", "text")
DEFAULT_DIMS = (2048, 2048, 768, 768)


def canonical_labels(labels) -> np.ndarray:
    """Relabel so ids are 0..k-1 in order of first occurrence."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValidationError("labels must be one-dimensional")
    if labels.size == 0:
        return np.zeros(0, dtype=np.int64)
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return rank[inverse.ravel()]


def is_contiguous(labels) -> bool:
    labels = np.asarray(labels)
    if labels.size == 0:
        return True
    runs = 1 + np.count_nonzero(labels[1:] != labels[:-1])
    return runs == np.unique(labels).size


@dataclass(eq=False)
class Segmentation:
    """Per-clip cluster labels, canonicalized to first-occurrence order.

    ``k`` and ``contiguous`` are derived from the labels and never passed in.
    """

    labels: np.ndarray
    k: int = field(init=False)
    contiguous: bool = field(init=False)

    def __post_init__(self):
        self.labels = canonical_labels(self.labels)
        self.labels.setflags(write=False)
        self.k = int(self.labels.max()) + 1 if self.labels.size else 0
        self.contiguous = is_contiguous(self.labels)

    def __len__(self):
        return self.labels.size

    def __eq__(self, other):
        if not isinstance(other, Segmentation):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    def __repr__(self):
        return f"Segmentation(k={self.k}, contiguous={self.contiguous}, labels={self.labels.tolist()})"

    def change_points(self) -> np.ndarray:
        """Indices ``i`` where clip ``i`` starts a new run."""
        return 1 + np.flatnonzero(self.labels[1:] != self.labels[:-1])

    def boundaries(self, starts) -> list[float]:
        """Start times of every non-initial run, given clip start times."""
        starts = np.asarray(starts, dtype=np.float64)
        return [float(starts[i]) for i in self.change_points()]

    @classmethod
    def from_boundaries(cls, boundaries_s, midpoints) -> "Segmentation":
        """Label each clip by how many boundaries lie at or before its midpoint."""
        b = np.sort(np.asarray(boundaries_s, dtype=np.float64))
        return cls(np.searchsorted(b, np.asarray(midpoints, dtype=np.float64), side="right"))


@dataclass(eq=False)
class ClipFeatureRecord:
    lecture_id: str
    clip_index: int
    start_s: float
    end_s: float
    v2d: np.ndarray
    v3d: np.ndarray
    ocr: np.ndarray
    text: np.ndarray

    def __post_init__(self):
        if self.clip_index < 0:
            raise ValidationError("clip_index must be >= 0")
        if not self.end_s > self.start_s:
            raise ValidationError(
                f"clip {self.clip_index}: end_s ({self.end_s}) must exceed start_s ({self.start_s})"
            )
        for name in MODALITIES:
            vec = np.asarray(getattr(self, name), dtype=np.float32)
            if vec.ndim != 1:
                raise ValidationError(f"{name} must be a vector")
            if not np.all(np.isfinite(vec)):
                raise ValidationError(f"clip {self.clip_index}: non-finite entries in {name}")
            setattr(self, name, vec)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return tuple(getattr(self, m).size for m in MODALITIES)

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.start_s + self.end_s)


@dataclass(eq=False)
class Lecture:
    lecture_id: str
    total_duration_s: float
    clips: list
    gt: Optional[Segmentation] = None

    def __post_init__(self):
        if not self.clips:
            raise ValidationError(f"lecture {self.lecture_id!r} has no clips")
        dims = self.clips[0].dims
        prev_index, prev_end = -1, -np.inf
        for clip in self.clips:
            if clip.dims != dims:
                raise ValidationError(f"lecture {self.lecture_id!r}: inconsistent feature dims")
            if clip.clip_index <= prev_index:
                raise ValidationError(f"lecture {self.lecture_id!r}: clip_index not increasing")
            if clip.start_s < prev_end:
                raise ValidationError(f"lecture {self.lecture_id!r}: overlapping or unordered clips")
            prev_index, prev_end = clip.clip_index, clip.end_s
        if self.total_duration_s < prev_end:
            raise ValidationError(
                f"lecture {self.lecture_id!r}: total_duration_s < last clip end"
            )
        if self.gt is not None:
            if len(self.gt) != len(self.clips):
                raise ValidationError("ground truth must label every clip")
            if not self.gt.contiguous:
                raise ValidationError("ground truth segmentation must be contiguous")

    @property
    def n_clips(self) -> int:
        return len(self.clips)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.clips[0].dims

    @cached_property
    def starts(self) -> np.ndarray:
        return np.array([c.start_s for c in self.clips], dtype=np.float64)

    @cached_property
    def ends(self) -> np.ndarray:
        return np.array([c.end_s for c in self.clips], dtype=np.float64)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.starts + self.ends)

    def matrix(self, modality: str) -> np.ndarray:
        """Stacked ``(n_clips, D)`` float64 features of one modality."""
        if modality not in MODALITIES:
            raise ValidationError(f"unknown modality {modality!r}")
        return self._stacked[modality]

    @cached_property
    def _stacked(self) -> dict:
        out = {}
        for m in MODALITIES:
            arr = np.stack([getattr(c, m) for c in self.clips]).astype(np.float64)
            arr.setflags(write=False)
            out[m] = arr
        return out

    def raw_features(self, modalities: Sequence[str] = MODALITIES) -> np.ndarray:
        """Concatenate the requested raw modalities column-wise."""
        if not modalities:
            raise ValidationError("at least one modality required")
        return np.hstack([self.matrix(m) for m in modalities])


@dataclass(frozen=True)
class SubtitleCue:
    start_s: float
    end_s: float
    text: str = ""

    def __post_init__(self):
        if not self.end_s > self.start_s:
            raise ValidationError(f"cue [{self.start_s}, {self.end_s}] has non-positive duration")

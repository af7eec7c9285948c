"""Binary feature files (AVLF), corpus manifests and ground-truth JSON.

AVLF layout, all little-endian::

    b"AVLF" | u32 version=1 | u32 len + utf-8 lecture_id | f64 total_duration_s
    | u32 n_clips | 4 x u32 dims (v2d, v3d, ocr, text)
    | per clip: f64 start_s, f64 end_s, f32[v2d], f32[v3d], f32[ocr], f32[text]
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..exceptions import (
    BadMagicError,
    DimensionMismatchError,
    FormatError,
    TruncatedFileError,
    UnsupportedVersionError,
    ValidationError,
)
from .types import MODALITIES, ClipFeatureRecord, Lecture, Segmentation

FEATURE_MAGIC = b"AVLF"
FEATURE_VERSION = 1


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(f"while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def encode_features(lecture: Lecture) -> bytes:
    lid = lecture.lecture_id.encode("utf-8")
    parts = [
        FEATURE_MAGIC,
        struct.pack("<I", FEATURE_VERSION),
        struct.pack("<I", len(lid)),
        lid,
        struct.pack("<d", lecture.total_duration_s),
        struct.pack("<I", lecture.n_clips),
        struct.pack("<4I", *lecture.dims),
    ]
    for clip in lecture.clips:
        parts.append(struct.pack("<2d", clip.start_s, clip.end_s))
        for m in MODALITIES:
            parts.append(np.asarray(getattr(clip, m), dtype="<f4").tobytes())
    return b"".join(parts)


def decode_features(buf: bytes, expected_dims=None) -> Lecture:
    r = _Reader(buf)
    magic = r.take(4, "magic") if len(buf) >= 4 else buf
    if magic != FEATURE_MAGIC:
        raise BadMagicError(magic)
    (version,) = r.unpack("<I", "version")
    if version != FEATURE_VERSION:
        raise UnsupportedVersionError(version)
    (n_id,) = r.unpack("<I", "lecture_id length")
    try:
        lid = r.take(n_id, "lecture_id").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"lecture_id is not valid utf-8: {exc}") from None
    (total,) = r.unpack("<d", "total_duration_s")
    (n_clips,) = r.unpack("<I", "n_clips")
    dims = r.unpack("<4I", "dims")
    if expected_dims is not None and tuple(dims) != tuple(expected_dims):
        raise DimensionMismatchError(f"dims {dims} != expected {tuple(expected_dims)}")
    per_clip = 16 + 4 * sum(dims)
    if len(buf) - r.pos < n_clips * per_clip:
        have = (len(buf) - r.pos) // per_clip
        raise TruncatedFileError(f"header declares {n_clips} clips, payload holds {have}")
    clips = []
    for i in range(n_clips):
        start, end = r.unpack("<2d", "clip times")
        vecs = {}
        for m, d in zip(MODALITIES, dims):
            vecs[m] = np.frombuffer(r.take(4 * d, m), dtype="<f4").astype(np.float32)
        clips.append(ClipFeatureRecord(lid, i, start, end, **vecs))
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after payload")
    return Lecture(lid, total, clips)


def write_features(lecture: Lecture, path) -> None:
    Path(path).write_bytes(encode_features(lecture))


def read_features(path, expected_dims=None) -> Lecture:
    return decode_features(Path(path).read_bytes(), expected_dims)


def write_gt(lecture_id: str, boundaries_s, path) -> None:
    doc = {"lecture_id": lecture_id, "boundaries_s": [float(b) for b in boundaries_s]}
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def read_gt(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if "lecture_id" not in doc or "boundaries_s" not in doc:
        raise ValidationError(f"{path}: ground-truth JSON needs lecture_id and boundaries_s")
    return doc


def write_corpus(lectures, directory, courses=None) -> Path:
    """Write AVLF files, GT JSON and ``manifest.jsonl`` under ``directory``.

    Returns the manifest path. ``courses`` optionally maps lecture id to a
    course id recorded in the manifest.
    """
    directory = Path(directory)
    (directory / "features").mkdir(parents=True, exist_ok=True)
    (directory / "gt").mkdir(exist_ok=True)
    lines = []
    for lec in lectures:
        rel = Path("features") / f"{lec.lecture_id}.avlf"
        write_features(lec, directory / rel)
        entry = {"id": lec.lecture_id, "path": rel.as_posix(), "n_clips": lec.n_clips}
        if lec.gt is not None:
            bounds = lec.gt.boundaries(lec.starts)
            write_gt(lec.lecture_id, bounds, directory / "gt" / f"{lec.lecture_id}.json")
            entry["gt_boundaries_s"] = bounds
            entry["gt_path"] = f"gt/{lec.lecture_id}.json"
        if courses is not None:
            entry["course"] = courses[lec.lecture_id]
        lines.append(json.dumps(entry))
    manifest = directory / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def read_manifest(directory) -> list[dict]:
    path = Path(directory) / "manifest.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}")
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def read_corpus(directory, expected_dims=None) -> list[Lecture]:
    """Load every lecture listed in the manifest, attaching GT when present."""
    directory = Path(directory)
    out = []
    for entry in read_manifest(directory):
        lec = read_features(directory / entry["path"], expected_dims)
        gt_path = entry.get("gt_path")
        if gt_path and (directory / gt_path).exists():
            doc = read_gt(directory / gt_path)
            lec = Lecture(
                lec.lecture_id,
                lec.total_duration_s,
                lec.clips,
                gt=Segmentation.from_boundaries(doc["boundaries_s"], lec.midpoints),
            )
        out.append(lec)
    return out

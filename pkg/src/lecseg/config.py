"""Run configuration: one JSON document with a schema version.

Values are resolved as command-line flags over the config file over the
defaults below.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .exceptions import ValidationError

SCHEMA_VERSION = 1
CLIP_DURATION_PRESETS = {"4-8": (4.0, 8.0), "10-15": (10.0, 15.0), "20-25": (20.0, 25.0)}


@dataclass
class PathsSection:
    corpus: str | None = None
    finetune_corpus: str | None = None
    checkpoint: str | None = None
    embeddings: str | None = None
    out: str = "out"


@dataclass
class SynthSection:
    n_lectures: int = 10
    k_range: list = field(default_factory=lambda: [3, 10])
    clip_len_s: float = 10.0
    clips_per_lecture: int = 200
    noise_sigma: float = 0.1
    dims: list = field(default_factory=lambda: [2048, 2048, 768, 768])
    cross_modal_map_seed: int = 0
    modality_informativeness: dict = field(default_factory=dict)
    latent_dim: int = 32
    n_courses: int = 1


@dataclass
class ModelSection:
    embed_dim: int = 4096
    ocr_proj_dim: int = 2048


@dataclass
class TrainSection:
    batch_size: int = 32
    margin: float = 0.1
    lr: float = 1e-4
    lr_decay: float = 0.9
    epochs: int = 10
    finetune_epochs: int = 10
    intra_lecture_fraction: float = 0.5
    batches_per_epoch: int | None = None
    checkpoint_every: int = 1


@dataclass
class TwfinchSection:
    alpha_init: float = 1.0
    alpha_step: float = 0.1
    alpha_max: float = 5.0
    require_contiguous: bool = True
    shared_neighbor: bool = False


@dataclass
class KMeansSection:
    n_restarts: int = 10
    max_iters: int = 100
    tol: float = 1e-6
    time_weight: float = 1.0


@dataclass
class ClipSection:
    min_len_s: float = 10.0
    max_len_s: float = 15.0


SECTIONS = {
    "paths": PathsSection,
    "synth": SynthSection,
    "model": ModelSection,
    "train": TrainSection,
    "twfinch": TwfinchSection,
    "kmeans": KMeansSection,
    "clip": ClipSection,
}


@dataclass
class RunConfig:
    paths: PathsSection = field(default_factory=PathsSection)
    synth: SynthSection = field(default_factory=SynthSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    twfinch: TwfinchSection = field(default_factory=TwfinchSection)
    kmeans: KMeansSection = field(default_factory=KMeansSection)
    clip: ClipSection = field(default_factory=ClipSection)
    modality_mask: list = field(default_factory=lambda: ["v2d", "v3d", "ocr"])
    k_list: list = field(default_factory=lambda: [30])
    seed: int = 0
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ValidationError("config must be a JSON object")
        version = doc.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValidationError(f"unsupported config schema_version {version}")
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        kwargs = {}
        for key, value in doc.items():
            if key in SECTIONS:
                kwargs[key] = _section(SECTIONS[key], key, value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc)

    def override(self, dotted: str, value) -> None:
        """Set ``section.key`` (or a top-level key) when ``value`` is not None."""
        if value is None:
            return
        target = self
        *parents, leaf = dotted.split(".")
        for p in parents:
            target = getattr(target, p)
        if not hasattr(target, leaf):
            raise ValidationError(f"unknown config key {dotted}")
        setattr(target, leaf, value)


def _section(cls, name, value):
    if not isinstance(value, dict):
        raise ValidationError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(value) - known
    if unknown:
        raise ValidationError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return cls(**value)

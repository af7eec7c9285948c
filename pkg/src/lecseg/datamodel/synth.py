"""Seeded synthetic lecture corpora with known topic segmentation.

Every random draw goes through a Philox (counter-based) bit generator keyed
by a ``SeedSequence`` built from integer seeds, so corpora are reproducible
across runs and platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ValidationError
from .types import DEFAULT_DIMS, MODALITIES, ClipFeatureRecord, Lecture, Segmentation

INFORMATIVENESS = ("all", "none", "even", "odd")


def philox_rng(*keys: int) -> np.random.Generator:
    """Generator seeded from a tuple of non-negative integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))


@dataclass
class SynthConfig:
    """Synthetic corpus parameters.

    ``modality_informativeness`` maps each modality to one of

    * ``"all"``  -- a distinct topic per segment,
    * ``"none"`` -- one topic shared by every segment (only noise varies),
    * ``"even"`` / ``"odd"`` -- the topic changes only at even / odd
      numbered boundaries, so adjacent segments pair up.

    ``noise_sigma`` is the per-coordinate standard deviation of the
    isotropic Gaussian added to each unit-norm topic vector.
    """

    n_lectures: int = 10
    k_range: tuple = (3, 10)
    clip_len_s: float = 10.0
    clips_per_lecture: int = 200
    noise_sigma: float = 0.1
    dims: tuple = DEFAULT_DIMS
    cross_modal_map_seed: int = 0
    rng_seed: int = 0
    modality_informativeness: dict = field(default_factory=lambda: {m: "all" for m in MODALITIES})
    latent_dim: int = 32
    dirichlet_concentration: float = 5.0
    n_courses: int = 1

    def __post_init__(self):
        self.k_range = tuple(int(k) for k in self.k_range)
        self.dims = tuple(int(d) for d in self.dims)
        if self.n_lectures < 1:
            raise ValidationError("n_lectures must be >= 1")
        k_min, k_max = self.k_range
        if k_min < 1 or k_max < k_min:
            raise ValidationError("k_range must satisfy 1 <= k_min <= k_max")
        if k_max > self.clips_per_lecture:
            raise ValidationError("k_max cannot exceed clips_per_lecture")
        if not self.clip_len_s > 0:
            raise ValidationError("clip_len_s must be > 0")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")
        if len(self.dims) != 4 or min(self.dims) < 1:
            raise ValidationError("dims must be four positive integers")
        if self.n_courses < 1:
            raise ValidationError("n_courses must be >= 1")
        info = {m: "all" for m in MODALITIES}
        info.update(self.modality_informativeness or {})
        for m, mode in info.items():
            if m not in MODALITIES or mode not in INFORMATIVENESS:
                raise ValidationError(f"bad informativeness entry {m!r}: {mode!r}")
        self.modality_informativeness = info


def lecture_id(cfg: SynthConfig, index: int) -> str:
    return f"c{index % cfg.n_courses:02d}-lec{index:04d}"


def course_of(lecture_id: str) -> str:
    return lecture_id.split("-", 1)[0] if "-" in lecture_id else lecture_id


def _topic_ids(mode: str, k: int) -> np.ndarray:
    s = np.arange(k)
    if mode == "all":
        return s
    if mode == "none":
        return np.full(k, k)
    if mode == "even":
        return s // 2
    return (s + 1) // 2


def cross_modal_maps(cfg: SynthConfig) -> dict:
    """Fixed latent-to-feature linear maps, one per modality.

    All modalities are images of the same per-segment latent topic, which is
    what ties text to the visual streams.
    """
    rng = philox_rng(cfg.cross_modal_map_seed, 0x5EED)
    return {
        m: rng.standard_normal((d, cfg.latent_dim)) / np.sqrt(cfg.latent_dim)
        for m, d in zip(MODALITIES, cfg.dims)
    }


def _segment_labels(rng, cfg: SynthConfig, k: int) -> np.ndarray:
    n = cfg.clips_per_lecture
    mids = (np.arange(n) + 0.5) * cfg.clip_len_s
    total = n * cfg.clip_len_s
    for _ in range(1000):
        weights = rng.dirichlet(np.full(k, cfg.dirichlet_concentration))
        cuts = np.cumsum(weights)[:-1] * total
        labels = np.searchsorted(cuts, mids, side="right")
        if np.unique(labels).size == k:
            return labels
    raise ValidationError(f"could not place {k} non-empty segments over {n} clips")


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def generate_lecture(cfg: SynthConfig, index: int, maps=None) -> Lecture:
    maps = cross_modal_maps(cfg) if maps is None else maps
    rng = philox_rng(cfg.rng_seed, index)
    k = int(rng.integers(cfg.k_range[0], cfg.k_range[1] + 1))
    labels = _segment_labels(rng, cfg, k)
    latents = rng.standard_normal((k + 1, cfg.latent_dim))
    n = labels.size

    feats = {}
    for m in MODALITIES:
        tids = _topic_ids(cfg.modality_informativeness[m], k)
        topics = _unit(latents[tids] @ maps[m].T)
        x = topics[labels]
        if cfg.noise_sigma > 0:
            x = _unit(x + cfg.noise_sigma * rng.standard_normal(x.shape))
        feats[m] = x.astype(np.float32)

    lid = lecture_id(cfg, index)
    L = cfg.clip_len_s
    clips = [
        ClipFeatureRecord(
            lecture_id=lid,
            clip_index=i,
            start_s=i * L,
            end_s=(i + 1) * L,
            **{m: feats[m][i] for m in MODALITIES},
        )
        for i in range(n)
    ]
    return Lecture(lid, n * L, clips, gt=Segmentation(labels))


def generate_synthetic(cfg: SynthConfig) -> list[Lecture]:
    """Deterministic corpus of ``cfg.n_lectures`` lectures with ground truth."""
    maps = cross_modal_maps(cfg)
    return [generate_lecture(cfg, i, maps) for i in range(cfg.n_lectures)]

"""Mini-batch sampling, Adam, and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..datamodel.synth import philox_rng
from ..exceptions import NumericalError, ValidationError
from .io import save_training_state
from .model import PARAM_ORDER, JointEmbeddingParams, batch_loss, normalize_mask

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    margin: float = 0.1
    lr: float = 1e-4
    lr_decay: float = 0.9
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    intra_lecture_fraction: float = 0.5
    rng_seed: int = 0
    modality_mask: tuple = ("v2d", "v3d", "ocr")
    batches_per_epoch: int | None = None

    def __post_init__(self):
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValidationError("batch_size must be even and >= 2")
        if not 0 < self.intra_lecture_fraction < 1:
            raise ValidationError("intra_lecture_fraction must be in (0, 1)")
        if self.lr < 0 or self.epochs < 0:
            raise ValidationError("lr and epochs must be non-negative")
        self.modality_mask = tuple(sorted(normalize_mask(self.modality_mask)))


class _Stacked:
    """Per-lecture float64 feature matrices, built once."""

    def __init__(self, corpus):
        self.lectures = list(corpus)
        self.v2d = [lec.matrix("v2d") for lec in self.lectures]
        self.v3d = [lec.matrix("v3d") for lec in self.lectures]
        self.ocr = [lec.matrix("ocr") for lec in self.lectures]
        self.text = [lec.matrix("text") for lec in self.lectures]
        self.sizes = np.array([lec.n_clips for lec in self.lectures])

    def gather(self, pairs):
        cols = []
        for store in (self.v2d, self.v3d, self.ocr, self.text):
            cols.append(np.stack([store[l][c] for l, c in pairs]))
        return cols


def sample_batch(rng: np.random.Generator, sizes, batch_size: int, intra_fraction: float):
    """Pick ``(lecture, clip)`` pairs: an intra-lecture block plus pairs from other lectures.

    The first ``round(batch_size * intra_fraction)`` pairs come from one
    anchor lecture, so in-batch negatives are partly hard (same lecture)
    and partly easy (other lectures). No pair repeats.
    """
    sizes = np.asarray(sizes)
    n_lec = sizes.size
    anchor = int(rng.integers(n_lec))
    n_intra = min(int(round(batch_size * intra_fraction)), int(sizes[anchor]))
    clips = rng.choice(int(sizes[anchor]), size=n_intra, replace=False)
    pairs = [(anchor, int(c)) for c in clips]
    seen = set(pairs)
    others = np.delete(np.arange(n_lec), anchor)
    while len(pairs) < batch_size:
        lec = int(others[rng.integers(others.size)])
        pair = (lec, int(rng.integers(sizes[lec])))
        if pair not in seen:
            seen.add(pair)
            pairs.append(pair)
    return pairs


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: JointEmbeddingParams, grads: JointEmbeddingParams, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name in PARAM_ORDER:
            g = getattr(grads, name)
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] *= self.beta1
            self.m[name] += (1.0 - self.beta1) * g
            self.v[name] *= self.beta2
            self.v[name] += (1.0 - self.beta2) * (g * g)
            p = getattr(params, name)
            p -= lr * (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + self.eps)

    def state(self) -> dict:
        out = {"t": np.array(self.t)}
        for name in self.m:
            out["m_" + name] = self.m[name]
            out["v_" + name] = self.v[name]
        return out

    @classmethod
    def from_state(cls, state, beta1=0.9, beta2=0.999, eps=1e-8) -> "Adam":
        opt = cls(beta1, beta2, eps)
        opt.t = int(state["t"])
        for name in PARAM_ORDER:
            if "m_" + name in state:
                opt.m[name] = np.array(state["m_" + name], dtype=np.float64)
                opt.v[name] = np.array(state["v_" + name], dtype=np.float64)
        return opt


@dataclass
class TrainResult:
    params: JointEmbeddingParams
    loss_trace: list = field(default_factory=list)
    optimizer: Adam | None = None
    epochs_done: int = 0


def train(
    params_init: JointEmbeddingParams,
    corpus,
    cfg: TrainConfig,
    *,
    start_epoch: int = 0,
    optimizer: Adam | None = None,
    checkpoint_dir=None,
    checkpoint_every: int = 1,
    tag: str = "model",
    loss_history=(),
) -> TrainResult:
    """Train with Adam, multiplying the learning rate by ``lr_decay`` each epoch.

    Epoch ``e`` draws its batches from a generator keyed by
    ``(rng_seed, e)``; together with the saved optimizer state this makes a
    run resumed at ``start_epoch`` identical to an uninterrupted one.
    ``loss_history`` holds the epoch losses of the run being resumed; it is
    only stored in checkpoint metadata.
    """
    corpus = list(corpus)
    if len(corpus) < 2:
        raise ValidationError("training needs at least 2 lectures (inter-lecture negatives)")
    data = _Stacked(corpus)
    params = params_init.copy()
    opt = optimizer or Adam(cfg.beta1, cfg.beta2, cfg.eps)
    n_batches = cfg.batches_per_epoch or math.ceil(int(data.sizes.sum()) / cfg.batch_size)
    trace = []
    for epoch in range(start_epoch, cfg.epochs):
        rng = philox_rng(cfg.rng_seed, epoch)
        lr = cfg.lr * cfg.lr_decay**epoch
        losses = []
        for b in range(n_batches):
            pairs = sample_batch(rng, data.sizes, cfg.batch_size, cfg.intra_lecture_fraction)
            v2d, v3d, ocr, text = data.gather(pairs)
            try:
                loss, grads = batch_loss(params, v2d, v3d, ocr, text, cfg.margin, cfg.modality_mask)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}, batch {b}: {exc}") from None
            if not all(np.all(np.isfinite(getattr(grads, n))) for n in PARAM_ORDER):
                raise NumericalError(f"epoch {epoch}, batch {b}: non-finite gradient")
            losses.append(loss)
            if lr > 0:
                opt.step(params, grads, lr)
        mean_loss = float(np.mean(losses))
        trace.append(mean_loss)
        log.info("epoch %d lr %.3g loss %.6f", epoch, lr, mean_loss)
        if checkpoint_dir is not None and ((epoch + 1) % checkpoint_every == 0 or epoch + 1 == cfg.epochs):
            meta = {"tag": tag, "loss_trace": list(loss_history) + trace}
            save_training_state(Path(checkpoint_dir) / f"{tag}_epoch{epoch + 1:03d}", params, opt, epoch + 1, meta)
    return TrainResult(params, trace, opt, cfg.epochs)

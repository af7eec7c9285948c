"""Scikit-learn style wrapper around the joint embedding model."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..datamodel.types import Lecture
from ..exceptions import ValidationError
from .model import embed_clips, embed_texts, init_params
from .train import TrainConfig, train

OUTPUTS = ("both", "clip", "text")


def embed_lecture(params, lecture: Lecture, mask=None):
    """``(f, g)``: clip and text embeddings for every clip of a lecture."""
    f = embed_clips(params, lecture.matrix("v2d"), lecture.matrix("v3d"), lecture.matrix("ocr"), mask)
    g = embed_texts(params, lecture.matrix("text"))
    return f, g


class JointEmbedder(TransformerMixin, BaseEstimator):
    """Learns gated clip/text embeddings from aligned clip-transcript pairs.

    ``fit`` takes a list of :class:`Lecture`. ``transform`` maps a lecture
    (or a list of them) to per-clip representations: ``[f(c), g(t)]`` when
    ``output="both"``, or one tower only.

    With ``warm_start=True`` a second ``fit`` continues from the current
    weights with a fresh optimizer, which is how pre-training on one corpus
    and fine-tuning on another is expressed.
    """

    def __init__(
        self,
        embed_dim=4096,
        ocr_proj_dim=2048,
        batch_size=32,
        margin=0.1,
        lr=1e-4,
        lr_decay=0.9,
        epochs=10,
        intra_lecture_fraction=0.5,
        modality_mask=("v2d", "v3d", "ocr"),
        batches_per_epoch=None,
        output="both",
        warm_start=False,
        random_state=0,
    ):
        self.embed_dim = embed_dim
        self.ocr_proj_dim = ocr_proj_dim
        self.batch_size = batch_size
        self.margin = margin
        self.lr = lr
        self.lr_decay = lr_decay
        self.epochs = epochs
        self.intra_lecture_fraction = intra_lecture_fraction
        self.modality_mask = modality_mask
        self.batches_per_epoch = batches_per_epoch
        self.output = output
        self.warm_start = warm_start
        self.random_state = random_state

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            margin=self.margin,
            lr=self.lr,
            lr_decay=self.lr_decay,
            epochs=self.epochs,
            intra_lecture_fraction=self.intra_lecture_fraction,
            rng_seed=int(self.random_state or 0),
            modality_mask=tuple(self.modality_mask),
            batches_per_epoch=self.batches_per_epoch,
        )

    def _init(self, lectures):
        d2d, d3d, d_ocr, d_text = lectures[0].dims
        return init_params(d2d, d3d, d_ocr, d_text, self.embed_dim, self.ocr_proj_dim, int(self.random_state or 0))

    def fit(self, X, y=None, **train_kwargs):
        lectures = _as_lectures(X)
        if self.output not in OUTPUTS:
            raise ValidationError(f"output must be one of {OUTPUTS}")
        start = self.params_ if self.warm_start and hasattr(self, "params_") else self._init(lectures)
        result = train(start, lectures, self.train_config(), **train_kwargs)
        self.params_ = result.params
        self.loss_trace_ = result.loss_trace
        self.optimizer_ = result.optimizer
        return self

    def embed(self, lecture: Lecture):
        check_is_fitted(self, "params_")
        return embed_lecture(self.params_, lecture, self.modality_mask)

    def _transform_one(self, lecture):
        f, g = self.embed(lecture)
        if self.output == "clip":
            return f
        if self.output == "text":
            return g
        return np.hstack([f, g])

    def transform(self, X):
        if isinstance(X, Lecture):
            return self._transform_one(X)
        return [self._transform_one(lec) for lec in _as_lectures(X)]


def _as_lectures(X) -> list:
    if isinstance(X, Lecture):
        return [X]
    lectures = list(X)
    if not lectures or not all(isinstance(x, Lecture) for x in lectures):
        raise ValidationError("expected a non-empty list of Lecture objects")
    return lectures

from .estimator import JointEmbedder, embed_lecture
from .io import (
    load_embeddings,
    load_params,
    load_training_state,
    save_embeddings,
    save_params,
    save_training_state,
)
from .model import (
    JointEmbeddingParams,
    batch_loss,
    embed_clip,
    embed_clips,
    embed_text,
    embed_texts,
    init_params,
    similarity,
)
from .retrieval import retrieve
from .train import Adam, TrainConfig, TrainResult, sample_batch, train

__all__ = [
    "Adam",
    "JointEmbedder",
    "JointEmbeddingParams",
    "TrainConfig",
    "TrainResult",
    "batch_loss",
    "embed_clip",
    "embed_clips",
    "embed_lecture",
    "embed_text",
    "embed_texts",
    "init_params",
    "load_embeddings",
    "load_params",
    "load_training_state",
    "retrieve",
    "sample_batch",
    "save_embeddings",
    "save_params",
    "save_training_state",
    "similarity",
    "train",
]

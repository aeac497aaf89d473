"""Trainable bidirectional audio-text retrieval over embedding sequences."""

from .autodiff import DiffArray, Tape, backward, forward_op
from .data import (EmbeddingSequence, RetrievalDataset, load_dataset,
                   make_batches, read_embedding_file, synth_dataset,
                   write_embedding_file)
from .model import ModelConfig, SimilarityMatrix, init_model_params, similarity_matrix
from .metrics import MetricsReport, compute_metrics, rank_queries, retrieve
from .optim import SgdConfig, sgd_step
from .train import Checkpoint, LossConfig, load_checkpoint, ranking_loss, save_checkpoint, train

__all__ = [
    "DiffArray", "Tape", "backward", "forward_op",
    "EmbeddingSequence", "RetrievalDataset", "load_dataset", "make_batches",
    "read_embedding_file", "synth_dataset", "write_embedding_file",
    "ModelConfig", "SimilarityMatrix", "init_model_params", "similarity_matrix",
    "MetricsReport", "compute_metrics", "rank_queries", "retrieve",
    "SgdConfig", "sgd_step",
    "Checkpoint", "LossConfig", "load_checkpoint", "ranking_loss",
    "save_checkpoint", "train",
]

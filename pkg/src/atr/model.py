"""Joint-embedding model: pooling -> FC projection -> context gating -> cosine.

Both branches (caption, audio) carry their own pooling parameters, one FC
layer into the shared d-dimensional space, and their own context gate
Y = sigmoid(W X + b) * X.  The caption x audio score matrix is the dot
product of the L2-normalized branch outputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import pooling
from .autodiff import DiffArray, Tape

BRANCHES = ("text", "audio")


@dataclass
class ModelConfig:
    pooling: str = "netrvlad"
    audio_dim: int = 2048
    text_dim: int = 300
    dim: int = 2048            # shared embedding size d
    clusters_text: int = 20
    clusters_audio: int = 12

    def __post_init__(self):
        if self.pooling not in pooling.POOLING_METHODS:
            raise ValueError(f"unknown pooling method {self.pooling!r}")

    def branch_input_dim(self, branch: str) -> int:
        return self.text_dim if branch == "text" else self.audio_dim

    def branch_clusters(self, branch: str) -> int:
        return self.clusters_text if branch == "text" else self.clusters_audio

    def branch_pooled_dim(self, branch: str) -> int:
        return pooling.pooled_dim(self.pooling, self.branch_input_dim(branch),
                                  self.branch_clusters(branch))

    def to_dict(self) -> dict:
        return asdict(self)


def init_model_params(cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """All trainable arrays, flat dict keyed 'branch/part/name'."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for branch in BRANCHES:
        in_dim = cfg.branch_input_dim(branch)
        pool_params = pooling.init_pooling_params(
            cfg.pooling, in_dim, cfg.branch_clusters(branch), rng)
        for name, arr in pool_params.items():
            params[f"{branch}/pool/{name}"] = arr
        p_dim = cfg.branch_pooled_dim(branch)
        params[f"{branch}/fc/weight"] = pooling.xavier_uniform(
            rng, p_dim, cfg.dim, (p_dim, cfg.dim))
        params[f"{branch}/fc/bias"] = np.zeros((1, cfg.dim))
        params[f"{branch}/gate/weight"] = pooling.xavier_uniform(
            rng, cfg.dim, cfg.dim, (cfg.dim, cfg.dim))
        params[f"{branch}/gate/bias"] = np.zeros((1, cfg.dim))
    return params


def wrap_params(params: dict[str, np.ndarray], tape: Tape | None) -> dict[str, DiffArray]:
    return {name: DiffArray(arr, tape) if tape is not None else ad.constant(arr)
            for name, arr in params.items()}


def subparams(params: dict[str, DiffArray], prefix: str) -> dict[str, DiffArray]:
    plen = len(prefix) + 1
    return {name[plen:]: arr for name, arr in params.items()
            if name.startswith(prefix + "/")}


def project_and_gate(pooled: DiffArray, branch_params: dict[str, DiffArray]) -> DiffArray:
    x = ad.add(ad.matmul(pooled, branch_params["fc/weight"]), branch_params["fc/bias"])
    gate = ad.sigmoid(ad.add(ad.matmul(x, branch_params["gate/weight"]),
                             branch_params["gate/bias"]))
    return ad.mul(gate, x)


def encode_sequences(tensor: np.ndarray, lengths, cfg: ModelConfig, branch: str,
                     params: dict[str, DiffArray]) -> DiffArray:
    """Pool, project and gate a padded batch (B x N x dim) into B x d rows."""
    branch_params = subparams(params, branch)
    pool_params = {name[5:]: arr for name, arr in branch_params.items()
                   if name.startswith("pool/")}
    # slice to the true length so padded rows can never reach the pooler
    pooled_rows = [pooling.pool(cfg.pooling,
                                ad.constant(tensor[i, :int(lengths[i])]),
                                int(lengths[i]), pool_params)
                   for i in range(tensor.shape[0])]
    pooled = pooled_rows[0] if len(pooled_rows) == 1 else ad.concat(pooled_rows, axis=0)
    return project_and_gate(pooled, branch_params)


def similarity_scores(caption_vecs: DiffArray, audio_vecs: DiffArray) -> DiffArray:
    """Cosine score matrix: normalize rows of each side, then dot products."""
    if caption_vecs.values.shape[1] != audio_vecs.values.shape[1]:
        raise ad.ShapeMismatch(
            f"similarity: dims {caption_vecs.values.shape[1]} vs "
            f"{audio_vecs.values.shape[1]}")
    return ad.matmul(ad.l2_normalize(caption_vecs),
                     ad.transpose(ad.l2_normalize(audio_vecs)))


@dataclass
class SimilarityMatrix:
    """Caption x audio cosine scores with ground-truth pairing."""
    scores: np.ndarray                  # n_captions x n_audios
    truth: np.ndarray                   # per caption row, index of its audio
    grouping: list[list[int]] = field(default_factory=list)  # per audio, caption rows

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.truth = np.asarray(self.truth, dtype=np.int64)
        if self.scores.ndim != 2 or self.scores.shape[0] != self.truth.shape[0]:
            raise ValueError("scores/truth shape mismatch")
        if np.any(np.abs(self.scores) > 1 + 1e-9):
            raise ValueError("cosine scores exceed [-1, 1] beyond tolerance")
        if not self.grouping:
            self.grouping = [[] for _ in range(self.scores.shape[1])]
            for row, col in enumerate(self.truth):
                self.grouping[int(col)].append(row)


def similarity_matrix(caption_vecs: np.ndarray, audio_vecs: np.ndarray,
                      truth) -> SimilarityMatrix:
    """Evaluation-side similarity on plain arrays (no gradients).

    Zero-norm vectors produce a zeroed row/column and a warning.
    """
    c = ad.l2_normalize(ad.constant(np.atleast_2d(caption_vecs))).values
    a = ad.l2_normalize(ad.constant(np.atleast_2d(audio_vecs))).values
    if np.any(np.all(c == 0, axis=1)) or np.any(np.all(a == 0, axis=1)):
        warnings.warn("zero-norm embedding: its scores are zeroed", RuntimeWarning)
    return SimilarityMatrix(np.clip(c @ a.T, -1.0, 1.0), np.asarray(truth))

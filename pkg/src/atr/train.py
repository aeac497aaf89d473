"""Bidirectional max-margin ranking loss, the training loop, checkpoints.

The loss over a B x B in-batch score matrix (positives on the diagonal):

    L = (1/B) sum_i sum_{j != i} [ max(0, m + s(i,j) - s(i,i))
                                 + max(0, m + s(j,i) - s(i,i)) ]

Model selection keeps the checkpoint maximizing R@1(t->a) + R@1(a->t) on
the validation split, with early stopping on that same metric.
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import metrics as metrics_mod
from .autodiff import DiffArray, NumericError, Tape
from .data import DataError, RetrievalDataset, make_batches
from .model import ModelConfig, encode_sequences, init_model_params, similarity_scores, wrap_params
from .optim import SgdConfig, sgd_step

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1


@dataclass
class LossConfig:
    margin: float = 0.2
    batch_size: int = 128

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")


def ranking_loss(scores: DiffArray, margin: float) -> DiffArray:
    """Differentiable bidirectional hinge loss over a square score block."""
    n = scores.values.shape[0]
    if scores.values.ndim != 2 or scores.values.shape != (n, n):
        raise ad.ShapeMismatch(f"ranking loss needs a square matrix, got {scores.values.shape}")
    if n < 2:
        raise ValueError("ranking loss needs batch size >= 2")
    eye = np.eye(n)
    diag_col = ad.matmul(ad.mul(scores, ad.constant(eye)), ad.constant(np.ones((n, 1))))
    diag_mat = ad.matmul(diag_col, ad.constant(np.ones((1, n))))
    # margin only off-diagonal, so the i == j terms contribute hinge(0) = 0
    margin_mat = ad.constant(margin * (1.0 - eye))
    caption_term = ad.relu_hinge(ad.add(ad.sub(scores, diag_mat), margin_mat))
    audio_term = ad.relu_hinge(ad.add(ad.sub(ad.transpose(scores), diag_mat), margin_mat))
    return ad.scalar_scale(ad.total_sum(ad.add(caption_term, audio_term)), 1.0 / n)


def batch_scores(params: dict[str, np.ndarray], batch, cfg: ModelConfig,
                 tape: Tape | None):
    """Forward both branches on one batch; returns (scores, wrapped params)."""
    wrapped = wrap_params(params, tape)
    cap = encode_sequences(batch.captions, batch.caption_lengths, cfg, "text", wrapped)
    aud = encode_sequences(batch.audios, batch.audio_lengths, cfg, "audio", wrapped)
    return similarity_scores(cap, aud), wrapped


# ---------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: dict
    epoch: int
    val_metrics: dict
    rng_state: dict = field(default_factory=dict)

    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.config["model"])


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    names = sorted(ckpt.params)
    header = {
        "version": CKPT_VERSION,
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "val_metrics": ckpt.val_metrics,
        "rng_state": ckpt.rng_state,
        "arrays": [{"name": n, "shape": list(ckpt.params[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(bytes([CKPT_VERSION]))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(ckpt.params[n], dtype="<f8").tobytes())


def load_checkpoint(path, expect_model: ModelConfig | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 9 or raw[:4] != CKPT_MAGIC:
        raise DataError(f"{path}: bad checkpoint magic")
    if raw[4] != CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {raw[4]}")
    (hlen,) = struct.unpack("<I", raw[5:9])
    if len(raw) < 9 + hlen:
        raise DataError(f"{path}: truncated header section")
    header = json.loads(raw[9:9 + hlen].decode("utf-8"))
    offset = 9 + hlen
    params = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if len(raw) < end:
            raise DataError(f"{path}: truncated array section for {entry['name']!r}")
        params[entry["name"]] = np.frombuffer(
            raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes")
    ckpt = Checkpoint(params, header["config"], header["epoch"],
                      header["val_metrics"], header["rng_state"])
    if expect_model is not None and ckpt.model_config() != expect_model:
        raise DataError(f"{path}: checkpoint config {ckpt.config['model']} "
                        f"does not match requested {expect_model.to_dict()}")
    return ckpt


# ---------------------------------------------------------------------------
# training loop

def train(dataset: RetrievalDataset, model_cfg: ModelConfig, loss_cfg: LossConfig,
          sgd_cfg: SgdConfig, epochs: int, seed: int, caption_choice: str = "sample",
          patience: int = 10, val_split: str = "val",
          log_file=None) -> tuple[Checkpoint, list[dict]]:
    """Full training run; returns the best checkpoint and the per-epoch log."""
    if not dataset.split_items("train"):
        raise DataError("train split is empty")
    if not dataset.split_items(val_split):
        raise DataError(f"validation split {val_split!r} is empty")

    config_echo = {
        "model": model_cfg.to_dict(),
        "loss": {"margin": loss_cfg.margin, "batch_size": loss_cfg.batch_size},
        "sgd": {"learning_rate": sgd_cfg.learning_rate,
                "weight_decay": sgd_cfg.weight_decay,
                "max_grad_norm": sgd_cfg.max_grad_norm},
        "epochs": epochs, "seed": seed, "caption_choice": caption_choice,
    }
    params = init_model_params(model_cfg, seed)
    history: list[dict] = []

    def evaluate(split):
        report = metrics_mod.evaluate_split(params, dataset, split, model_cfg)
        return report

    def selection(report):
        return report["t2a"]["r1"] + report["a2t"]["r1"]

    val_report = evaluate(val_split)
    best = Checkpoint(copy.deepcopy(params), config_echo, 0, val_report,
                      {"base_seed": seed, "next_epoch": 1})
    best_score = selection(val_report)
    since_improved = 0

    log_fh = open(log_file, "w", encoding="utf-8") if log_file else None
    try:
        _log(log_fh, history, {"epoch": 0, "loss": None, "val": val_report})
        for epoch in range(1, epochs + 1):
            losses = []
            batches = make_batches(dataset, "train", loss_cfg.batch_size,
                                   seed=[seed, epoch], caption_choice=caption_choice)
            for b_idx, batch in enumerate(batches):
                tape = Tape()
                scores, wrapped = batch_scores(params, batch, model_cfg, tape)
                loss = ranking_loss(scores, loss_cfg.margin)
                loss_val = float(loss.values.reshape(()))
                if not np.isfinite(loss_val):
                    raise NumericError(f"non-finite loss at epoch {epoch}, batch {b_idx}")
                ad.backward(loss)
                grads = {name: wrapped[name].grad for name in params}
                params = sgd_step(params, grads, sgd_cfg)
                losses.append(loss_val)
            val_report = evaluate(val_split)
            score = selection(val_report)
            _log(log_fh, history, {"epoch": epoch,
                                   "loss": float(np.mean(losses)) if losses else None,
                                   "val": val_report})
            if score >= best_score:
                # on ties keep the most-trained checkpoint
                best = Checkpoint(copy.deepcopy(params), config_echo, epoch,
                                  val_report, {"base_seed": seed, "next_epoch": epoch + 1})
            if score > best_score:
                best_score = score
                since_improved = 0
            else:
                since_improved += 1
                if patience is not None and since_improved >= patience:
                    break
    finally:
        if log_fh:
            log_fh.close()
    return best, history


def _log(fh, history, record):
    history.append(record)
    if fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")

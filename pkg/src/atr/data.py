"""Embedding file format, dataset loading/validation, synthesis and batching.

On-disk formats:
  *.emb        -- magic "EMB1", rows and cols as uint32 little-endian,
                  then rows*cols float32 little-endian values row-major,
                  no trailing bytes.
  manifest.json -- {"audio_dim": int, "text_dim": int, "items": [
                    {"id", "split", "audio", "captions": [...]}]},
                  paths relative to the manifest's directory.

Files store float32; everything is widened to float64 on load.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EMB_MAGIC = b"EMB1"
SPLITS = ("train", "val", "test")


class DataError(ValueError):
    """Malformed file or invalid dataset contents."""


@dataclass
class EmbeddingSequence:
    """Variable-length sequence of fixed-dimension vectors (rows x dim)."""
    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise DataError(f"embedding sequence needs >=1 rows, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise DataError("embedding sequence contains non-finite values")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass
class DatasetItem:
    id: str
    split: str
    audio: EmbeddingSequence
    captions: list[EmbeddingSequence]


@dataclass
class RetrievalDataset:
    items: list[DatasetItem]
    audio_dim: int
    text_dim: int

    def split_items(self, split: str) -> list[DatasetItem]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [it for it in self.items if it.split == split]

    def split_counts(self) -> dict[str, int]:
        return {s: len(self.split_items(s)) for s in SPLITS}


@dataclass
class Batch:
    """Padded mini-batch; caption i and audio i are a positive pair."""
    captions: np.ndarray        # B x N_max x text_dim, zero padded
    caption_lengths: np.ndarray
    audios: np.ndarray          # B x M_max x audio_dim, zero padded
    audio_lengths: np.ndarray
    item_ids: list[str]

    @property
    def size(self) -> int:
        return len(self.item_ids)


# ---------------------------------------------------------------------------
# embedding files

def write_embedding_file(path, seq: EmbeddingSequence | np.ndarray) -> None:
    data = seq.data if isinstance(seq, EmbeddingSequence) else np.asarray(seq)
    if data.ndim != 2:
        raise DataError(f"expected 2-d array, got shape {data.shape}")
    rows, cols = data.shape
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(EMB_MAGIC)
        f.write(struct.pack("<II", rows, cols))
        f.write(payload)


def read_embedding_file(path) -> EmbeddingSequence:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != EMB_MAGIC:
        raise DataError(f"{path}: bad magic at byte 0 (expected {EMB_MAGIC!r})")
    if len(raw) < 12:
        raise DataError(f"{path}: truncated header, expected 12 bytes, got {len(raw)}")
    rows, cols = struct.unpack("<II", raw[4:12])
    count = rows * cols
    if count > (1 << 31):
        raise DataError(f"{path}: rows*cols overflow ({rows}x{cols})")
    expected = 12 + 4 * count
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, got {len(raw)} "
                        f"(payload starts at byte 12)")
    values = np.frombuffer(raw, dtype="<f4", offset=12).reshape(rows, cols)
    bad = ~np.isfinite(values)
    if np.any(bad):
        first = int(np.flatnonzero(bad.ravel())[0])
        raise DataError(f"{path}: non-finite value at byte {12 + 4 * first}")
    return EmbeddingSequence(values.astype(np.float64))


# ---------------------------------------------------------------------------
# manifest loading

def load_dataset(manifest_path) -> RetrievalDataset:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"{manifest_path}: cannot read manifest: {e}") from e
    for key in ("audio_dim", "text_dim", "items"):
        if key not in manifest:
            raise DataError(f"{manifest_path}: manifest missing key {key!r}")
    root = manifest_path.parent
    audio_dim, text_dim = int(manifest["audio_dim"]), int(manifest["text_dim"])

    items, seen = [], set()
    for entry in manifest["items"]:
        item_id = entry["id"]
        if item_id in seen:
            raise DataError(f"duplicate item id {item_id!r}")
        seen.add(item_id)
        if entry["split"] not in SPLITS:
            raise DataError(f"item {item_id!r}: unknown split {entry['split']!r}")
        if not entry.get("captions"):
            raise DataError(f"item {item_id!r}: has no captions")
        audio = _load_checked(root / entry["audio"], audio_dim, item_id, "audio")
        captions = [_load_checked(root / p, text_dim, item_id, f"caption {k}")
                    for k, p in enumerate(entry["captions"])]
        items.append(DatasetItem(item_id, entry["split"], audio, captions))
    return RetrievalDataset(items, audio_dim, text_dim)


def _load_checked(path, dim, item_id, what):
    if not Path(path).exists():
        raise DataError(f"item {item_id!r}: missing {what} file {path}")
    seq = read_embedding_file(path)
    if seq.dim != dim:
        raise DataError(f"item {item_id!r}: {what} has dim {seq.dim}, "
                        f"manifest declares {dim}")
    return seq


def save_dataset(dataset: RetrievalDataset, out_dir) -> Path:
    """Write a dataset as a manifest.json + .emb tree; returns manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for it in dataset.items:
        audio_rel = f"{it.id}_audio.emb"
        write_embedding_file(out_dir / audio_rel, it.audio)
        cap_rels = []
        for k, cap in enumerate(it.captions):
            rel = f"{it.id}_cap{k}.emb"
            write_embedding_file(out_dir / rel, cap)
            cap_rels.append(rel)
        entries.append({"id": it.id, "split": it.split,
                        "audio": audio_rel, "captions": cap_rels})
    manifest = {"audio_dim": dataset.audio_dim, "text_dim": dataset.text_dim,
                "items": entries}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# synthetic data

def synth_dataset(n_items: int, latent_dim: int, audio_dim: int, text_dim: int,
                  frames_range=(4, 10), words_range=(3, 8), noise_sigma=0.1,
                  seed=0, captions_per_item=1, split_counts=None) -> RetrievalDataset:
    """Generate a dataset where both modalities are noisy linear images of a
    shared per-item latent, so retrieval is learnable at desk scale.

    Fixed random projections are shared across items; split_counts defaults
    to roughly 60/20/20 over n_items.
    """
    if n_items < 2:
        raise ValueError(f"need n_items >= 2, got {n_items}")
    for name, (lo, hi) in (("frames_range", frames_range), ("words_range", words_range)):
        if hi < lo or lo < 1:
            raise ValueError(f"degenerate {name}: ({lo}, {hi})")
    if split_counts is None:
        n_train = int(round(n_items * 0.6))
        n_val = int(round(n_items * 0.2))
        split_counts = (n_train, n_val, n_items - n_train - n_val)
    if sum(split_counts) != n_items or min(split_counts) < 0:
        raise ValueError(f"split_counts {split_counts} do not sum to {n_items}")

    rng = np.random.default_rng(seed)
    proj_audio = rng.normal(size=(latent_dim, audio_dim)) / np.sqrt(latent_dim)
    proj_text = rng.normal(size=(latent_dim, text_dim)) / np.sqrt(latent_dim)

    splits = [s for s, n in zip(SPLITS, split_counts) for _ in range(n)]
    items = []
    for i in range(n_items):
        z = rng.normal(size=latent_dim)
        m = int(rng.integers(frames_range[0], frames_range[1] + 1))
        audio = np.tile(z @ proj_audio, (m, 1)) + noise_sigma * rng.normal(size=(m, audio_dim))
        captions = []
        for _ in range(captions_per_item):
            n = int(rng.integers(words_range[0], words_range[1] + 1))
            cap = np.tile(z @ proj_text, (n, 1)) + noise_sigma * rng.normal(size=(n, text_dim))
            captions.append(EmbeddingSequence(cap))
        items.append(DatasetItem(f"item{i:04d}", splits[i],
                                 EmbeddingSequence(audio), captions))
    return RetrievalDataset(items, audio_dim, text_dim)


# ---------------------------------------------------------------------------
# batching

def pad_sequences(seqs: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([s.shape[0] for s in seqs], dtype=np.int64)
    dim = seqs[0].shape[1]
    out = np.zeros((len(seqs), int(lengths.max()), dim))
    for i, s in enumerate(seqs):
        out[i, :s.shape[0]] = s
    return out, lengths


def make_batches(dataset: RetrievalDataset, split: str, batch_size: int,
                 seed: int, caption_choice: str = "sample"):
    """Yield shuffled padded batches for one epoch.

    Multi-caption items contribute one caption per epoch: sampled uniformly
    (caption_choice="sample") or always the first ("first").  A final
    1-item batch is skipped since the loss sum over j != i would be empty.
    """
    if batch_size < 2:
        raise ValueError(f"batch_size must be >= 2, got {batch_size}")
    if caption_choice not in ("sample", "first"):
        raise ValueError(f"unknown caption_choice {caption_choice!r}")
    items = dataset.split_items(split)
    if not items:
        raise DataError(f"split {split!r} is empty")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(items))
    chosen = []
    for idx in order:
        it = items[idx]
        k = int(rng.integers(len(it.captions))) if caption_choice == "sample" else 0
        chosen.append((it, it.captions[k]))
    for start in range(0, len(chosen), batch_size):
        chunk = chosen[start:start + batch_size]
        if len(chunk) == 1:
            warnings.warn("skipping final 1-item batch (no in-batch negatives)")
            continue
        caps, cap_len = pad_sequences([c.data for _, c in chunk])
        auds, aud_len = pad_sequences([it.audio.data for it, _ in chunk])
        yield Batch(caps, cap_len, auds, aud_len, [it.id for it, _ in chunk])

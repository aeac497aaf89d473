"""Drive a full export: audio directory + caption table -> EMB1 tree + manifest.

The caption table is a JSON object mapping item id to
{"split": "train"|"val"|"test", "captions": [sentence, ...]}; each id must
have a matching `<id>.wav` in the audio directory.  Items whose audio
cannot be decoded are skipped with a log entry; items left with zero
usable captions are excluded with a log entry.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.io import wavfile
from scipy.signal import resample_poly

from .emb1 import write_embedding_file
from .encoder import AudioEncoder, load_encoder
from .errors import ExportError
from .text import Vocabulary, embed_sentence

log = logging.getLogger("embexport")

SPLITS = ("train", "val", "test")


@dataclass
class ExportJob:
    audio_dir: Path
    caption_file: Path
    out_dir: Path
    weights_path: Path
    vocab_path: Path

    def __post_init__(self):
        for name in ("audio_dir", "caption_file", "out_dir", "weights_path",
                     "vocab_path"):
            setattr(self, name, Path(getattr(self, name)))


def load_waveform(path: Path, target_rate: int) -> np.ndarray:
    """Mono float waveform at the encoder's rate; raises on bad audio."""
    rate, data = wavfile.read(path)
    was_integer = np.issubdtype(data.dtype, np.integer)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.size == 0:
        raise ValueError("zero-length clip")
    data = data.astype(np.float64)
    if was_integer:
        data /= max(abs(data).max(), 1.0)
    if rate != target_rate:
        data = resample_poly(data, target_rate, rate)
    return data


def encode_clip(encoder: AudioEncoder, waveform: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        out = encoder(torch.tensor(waveform, dtype=torch.float32))
    return out.numpy().astype(np.float64)


def export_dataset(job: ExportJob) -> Path:
    """Run the full export; returns the manifest path."""
    encoder = load_encoder(job.weights_path)
    vocab = Vocabulary.load(job.vocab_path)
    try:
        table = json.loads(job.caption_file.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ExportError(f"cannot read caption table {job.caption_file}: {e}") from e

    job.out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for item_id, info in sorted(table.items()):
        split = info.get("split", "train")
        if split not in SPLITS:
            raise ExportError(f"item {item_id!r}: unknown split {split!r}")
        wav = job.audio_dir / f"{item_id}.wav"
        try:
            waveform = load_waveform(wav, encoder.cfg.sample_rate)
            audio_emb = encode_clip(encoder, waveform)
            if audio_emb.shape[0] < 1:
                raise ValueError("clip shorter than one segment")
        except (OSError, ValueError) as e:
            log.warning("skipping %s: undecodable audio (%s)", item_id, e)
            continue
        cap_rels = []
        for k, sentence in enumerate(info.get("captions", [])):
            emb = embed_sentence(sentence, vocab)
            if emb is None:
                log.warning("item %s caption %d: all tokens out of vocabulary, "
                            "dropped", item_id, k)
                continue
            rel = f"{item_id}_cap{k}.emb"
            write_embedding_file(job.out_dir / rel, emb)
            cap_rels.append(rel)
        if not cap_rels:
            log.warning("excluding item %s: no usable captions", item_id)
            continue
        audio_rel = f"{item_id}_audio.emb"
        write_embedding_file(job.out_dir / audio_rel, audio_emb)
        entries.append({"id": item_id, "split": split,
                        "audio": audio_rel, "captions": cap_rels})

    if not entries:
        raise ExportError("export produced no items")
    manifest = {"audio_dim": encoder.cfg.embedding_dim, "text_dim": vocab.dim,
                "items": entries}
    path = job.out_dir / "manifest.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    tmp.replace(path)
    return path

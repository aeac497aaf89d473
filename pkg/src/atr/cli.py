"""Command-line interface: synth, train, evaluate, retrieve, gradcheck.

All options can come from a flat JSON config file (--config); flags
override file values.  Every command that writes artifacts drops its
fully-resolved config alongside them, and re-running from that file
reproduces the outputs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, asdict, fields
from pathlib import Path

import numpy as np

from . import gradcheck
from . import metrics as metrics_mod
from .autodiff import NumericError
from .data import DataError, load_dataset, read_embedding_file, save_dataset, synth_dataset
from .model import ModelConfig, init_model_params
from .optim import SgdConfig
from .train import Checkpoint, LossConfig, load_checkpoint, save_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    """One flat source of truth; defaults follow the reference setup."""
    dataset: str | None = None
    pooling: str = "netrvlad"
    dim: int = 2048
    clusters_text: int = 20
    clusters_audio: int = 12
    batch_size: int = 128
    margin: float = 0.2
    lr: float = 0.01
    weight_decay: float = 0.001
    max_grad_norm: float | None = None
    epochs: int = 50
    seed: int = 0
    caption_choice: str = "sample"
    patience: int = 10
    out: str = "runs/out"
    top_k: int = 10
    # synthetic-data knobs
    n_items: int = 64
    latent_dim: int = 16
    audio_dim: int = 2048
    text_dim: int = 300
    frames: str = "4:10"
    words: str = "3:8"
    noise_sigma: float = 0.1
    captions_per_item: int = 1
    n_train: int | None = None
    n_val: int | None = None
    n_test: int | None = None

    def model_config(self, audio_dim: int, text_dim: int) -> ModelConfig:
        return ModelConfig(pooling=self.pooling, audio_dim=audio_dim,
                           text_dim=text_dim, dim=self.dim,
                           clusters_text=self.clusters_text,
                           clusters_audio=self.clusters_audio)

    def loss_config(self) -> LossConfig:
        return LossConfig(margin=self.margin, batch_size=self.batch_size)

    def sgd_config(self) -> SgdConfig:
        return SgdConfig(learning_rate=self.lr, weight_decay=self.weight_decay,
                         max_grad_norm=self.max_grad_norm)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        try:
            values.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"cannot read config {args.config}: {e}") from e
    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    for name in known:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    return RunConfig(**values)


def write_resolved(cfg: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(asdict(cfg), indent=2, sort_keys=True), encoding="utf-8")


def _parse_range(text: str, name: str):
    try:
        lo, hi = (int(p) for p in text.split(":"))
    except ValueError as e:
        raise UsageError(f"--{name} must look like 'lo:hi', got {text!r}") from e
    return lo, hi


# ---------------------------------------------------------------------------
# commands

def cmd_synth(cfg: RunConfig) -> int:
    split_counts = None
    if cfg.n_train is not None or cfg.n_val is not None or cfg.n_test is not None:
        if None in (cfg.n_train, cfg.n_val, cfg.n_test):
            raise UsageError("give all of --n-train/--n-val/--n-test or none")
        split_counts = (cfg.n_train, cfg.n_val, cfg.n_test)
        n_items = sum(split_counts)
    else:
        n_items = cfg.n_items
    dataset = synth_dataset(
        n_items, cfg.latent_dim, cfg.audio_dim, cfg.text_dim,
        frames_range=_parse_range(cfg.frames, "frames"),
        words_range=_parse_range(cfg.words, "words"),
        noise_sigma=cfg.noise_sigma, seed=cfg.seed,
        captions_per_item=cfg.captions_per_item, split_counts=split_counts)
    out_dir = Path(cfg.out)
    manifest = save_dataset(dataset, out_dir)
    write_resolved(cfg, out_dir)
    print(f"wrote {manifest} ({dataset.split_counts()})")
    return EXIT_OK


def _require_dataset(cfg: RunConfig):
    if not cfg.dataset:
        raise UsageError("--dataset is required")
    dataset = load_dataset(cfg.dataset)
    print(f"loaded {cfg.dataset}: {dataset.split_counts()}")
    return dataset


def cmd_train(cfg: RunConfig) -> int:
    dataset = _require_dataset(cfg)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_cfg = cfg.model_config(dataset.audio_dim, dataset.text_dim)
    ckpt, history = train(dataset, model_cfg, cfg.loss_config(), cfg.sgd_config(),
                          epochs=cfg.epochs, seed=cfg.seed,
                          caption_choice=cfg.caption_choice, patience=cfg.patience,
                          log_file=out_dir / "train_log.jsonl")
    save_checkpoint(ckpt, out_dir / "checkpoint.ckpt")
    write_resolved(cfg, out_dir)
    last = history[-1]
    print(f"best epoch {ckpt.epoch}; final epoch {last['epoch']} loss {last['loss']}")
    print(metrics_mod.render_table(ckpt.val_metrics, label=cfg.pooling))
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, checkpoint: str | None, split: str) -> int:
    dataset = _require_dataset(cfg)
    model_cfg = cfg.model_config(dataset.audio_dim, dataset.text_dim)
    if checkpoint:
        ckpt = load_checkpoint(checkpoint, expect_model=model_cfg)
        params = ckpt.params
    else:
        params = init_model_params(model_cfg, cfg.seed)  # untrained baseline
    report = metrics_mod.evaluate_split(params, dataset, split, model_cfg)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"metrics_{split}.json").write_text(
        json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    write_resolved(cfg, out_dir)
    print(metrics_mod.render_table(report, label=cfg.pooling))
    return EXIT_OK


def cmd_retrieve(cfg: RunConfig, checkpoint: str, query_path: str,
                 direction: str, split: str) -> int:
    dataset = _require_dataset(cfg)
    model_cfg = cfg.model_config(dataset.audio_dim, dataset.text_dim)
    ckpt = load_checkpoint(checkpoint, expect_model=model_cfg)
    query = read_embedding_file(query_path)
    items = dataset.split_items(split)
    if direction == "t2a":
        candidates = [(it.id, it.audio) for it in items]
    else:
        candidates = [(f"{it.id}/cap{k}", cap) for it in items
                      for k, cap in enumerate(it.captions)]
    ranked = metrics_mod.retrieve(ckpt.params, model_cfg, query, candidates,
                                  cfg.top_k, direction)
    for rank, (cid, score) in enumerate(ranked, start=1):
        print(f"{rank:>4}  {score:+.4f}  {cid}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, tolerance: float) -> int:
    worst = 0.0
    for kind, err in gradcheck.check_all_ops(seed=cfg.seed).items():
        print(f"op   {kind:<14} max rel err {err:.3e}")
        worst = max(worst, err)
    for method, err in gradcheck.check_heads(seed=cfg.seed).items():
        print(f"head {method:<14} max rel err {err:.3e}")
        worst = max(worst, err)
    if worst > tolerance:
        print(f"FAIL: worst error {worst:.3e} exceeds tolerance {tolerance:g}")
        return EXIT_NUMERIC
    print(f"OK: worst error {worst:.3e} within tolerance {tolerance:g}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="atr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config")
        p.add_argument("--dataset")
        p.add_argument("--pooling", choices=("mean", "max", "lstm", "netvlad", "netrvlad"))
        p.add_argument("--epochs", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--margin", type=float)
        p.add_argument("--lr", type=float)
        p.add_argument("--weight-decay", dest="weight_decay", type=float)
        p.add_argument("--max-grad-norm", dest="max_grad_norm", type=float)
        p.add_argument("--clusters-text", dest="clusters_text", type=int)
        p.add_argument("--clusters-audio", dest="clusters_audio", type=int)
        p.add_argument("--dim", type=int)
        p.add_argument("--out")
        p.add_argument("--top-k", dest="top_k", type=int)
        p.add_argument("--caption-choice", dest="caption_choice",
                       choices=("sample", "first"))
        p.add_argument("--patience", type=int)

    p_synth = sub.add_parser("synth", help="write a synthetic manifest + .emb tree")
    common(p_synth)
    p_synth.add_argument("--n-items", dest="n_items", type=int)
    p_synth.add_argument("--n-train", dest="n_train", type=int)
    p_synth.add_argument("--n-val", dest="n_val", type=int)
    p_synth.add_argument("--n-test", dest="n_test", type=int)
    p_synth.add_argument("--latent-dim", dest="latent_dim", type=int)
    p_synth.add_argument("--audio-dim", dest="audio_dim", type=int)
    p_synth.add_argument("--text-dim", dest="text_dim", type=int)
    p_synth.add_argument("--frames")
    p_synth.add_argument("--words")
    p_synth.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p_synth.add_argument("--captions-per-item", dest="captions_per_item", type=int)

    p_train = sub.add_parser("train", help="train and write checkpoint + log")
    common(p_train)

    p_eval = sub.add_parser("evaluate", help="metrics for a checkpoint (or untrained model)")
    common(p_eval)
    p_eval.add_argument("--checkpoint")
    p_eval.add_argument("--split", default="test")

    p_ret = sub.add_parser("retrieve", help="rank candidates for one query embedding")
    common(p_ret)
    p_ret.add_argument("--checkpoint", required=True)
    p_ret.add_argument("--query", required=True)
    p_ret.add_argument("--direction", choices=("t2a", "a2t"), default="t2a")
    p_ret.add_argument("--split", default="test")

    p_gc = sub.add_parser("gradcheck", help="finite-difference check of every op and head")
    common(p_gc)
    p_gc.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.checkpoint, args.split)
        if args.command == "retrieve":
            return cmd_retrieve(cfg, args.checkpoint, args.query,
                                args.direction, args.split)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, args.tolerance)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

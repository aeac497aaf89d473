#!/usr/bin/env python3
"""Compare all five pooling methods on a synthetic desk-scale dataset.

Trains one model per pooling method on the same data and seed, then prints
a side-by-side retrieval table (test split, both directions).

    python3 scripts/compare_pooling.py --epochs 60 --out runs/pooling_sweep
"""

import argparse
import json
from pathlib import Path

from atr.data import synth_dataset
from atr.metrics import evaluate_split, render_table
from atr.model import ModelConfig
from atr.optim import SgdConfig
from atr.pooling import POOLING_METHODS
from atr.train import LossConfig, save_checkpoint, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/pooling_sweep")
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--clusters", type=int, default=4)
    args = ap.parse_args()

    dataset = synth_dataset(128, latent_dim=16, audio_dim=24, text_dim=16,
                            noise_sigma=0.1, seed=args.seed,
                            split_counts=(64, 32, 32))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for method in POOLING_METHODS:
        cfg = ModelConfig(pooling=method, audio_dim=24, text_dim=16,
                          dim=args.dim, clusters_text=args.clusters,
                          clusters_audio=args.clusters)
        ckpt, _ = train(dataset, cfg, LossConfig(margin=0.2, batch_size=16),
                        SgdConfig(learning_rate=0.01, weight_decay=0.2),
                        epochs=args.epochs, seed=args.seed, patience=None)
        save_checkpoint(ckpt, out_dir / f"{method}.ckpt")
        report = evaluate_split(ckpt.params, dataset, "test", cfg)
        (out_dir / f"{method}_test_metrics.json").write_text(
            json.dumps(report, indent=2, sort_keys=True))
        rows.append((method, report))
        print(f"{method}: best epoch {ckpt.epoch}")

    print()
    first = render_table(rows[0][1], label=rows[0][0])
    print("\n".join(first.splitlines()[:2]))
    for method, report in rows:
        print(render_table(report, label=method).splitlines()[-1])


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Train every cross-feed mode with one recipe and tabulate the losses."""

import argparse
import json
from pathlib import Path

import numpy as np

from regionmae.config import CROSS_FEED_MODES, ModelConfig, SynthSpec, TrainConfig
from regionmae.trainer import train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", help="optional JSON output path")
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--modes", nargs="*", default=list(CROSS_FEED_MODES))
    args = ap.parse_args()

    rows = {}
    for mode in args.modes:
        cfg = ModelConfig(cross_feed=mode)
        tc = TrainConfig(seed=args.seed, base_lr=0.08, batch_size=16,
                         total_steps=args.steps)
        _, hist = train(cfg, tc, spec=SynthSpec(), log=None)
        tail = hist[-10:]
        rows[mode] = {
            "pixel_loss": float(np.mean([r["pixel_loss"] for r in tail])),
            "region_loss": float(np.mean([r["region_loss"] for r in tail])),
            "total": float(np.mean([r["total"] for r in tail])),
        }
        print(f"{mode:14s}  pix {rows[mode]['pixel_loss']:.4f}  "
              f"reg {rows[mode]['region_loss']:.4f}  total {rows[mode]['total']:.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()

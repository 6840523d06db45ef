#!/usr/bin/env python3
"""Train the desk-scale joint model and report held-out metrics.

Equivalent to `regionmae train` with scripts/desk_config.json followed by
`regionmae eval`, in one process.
"""

import argparse
import json
from pathlib import Path

from regionmae.config import ModelConfig, SynthSpec, TrainConfig
from regionmae.trainer import build_dataset, evaluate, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=Path(__file__).with_name("desk_config.json"))
    ap.add_argument("--out", required=True, help="artifact directory")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()

    blob = json.loads(Path(args.config).read_text())
    model_cfg = ModelConfig.from_dict(blob.get("model", {}))
    train_blob = dict(blob.get("train", {}))
    if args.seed is not None:
        train_blob["seed"] = args.seed
    train_cfg = TrainConfig.from_dict(train_blob)
    spec = SynthSpec.from_dict(blob.get("synth", {"image_size": model_cfg.image_size}))

    model, hist = train(model_cfg, train_cfg, spec=spec, out_dir=args.out)
    held = build_dataset(SynthSpec.from_dict({**spec.to_dict(), "count": 64}),
                         seed=train_cfg.seed + 10_000)
    metrics = evaluate(model, held, seed=train_cfg.seed)
    summary = {
        "final_total_loss": hist[-1]["total"],
        "loss_ratio_step200": (hist[199]["total"] / hist[0]["total"]
                               if len(hist) >= 200 else None),
        "mean_iou": metrics["mean_iou"],
        "region_bce": metrics["region_bce"],
        "pixel_mse": metrics["pixel_mse"],
    }
    Path(args.out, "metrics.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()

"""Command-line entry points for every pipeline stage."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .autograd import Rng
from .completion import PromptError, complete_from_prompts
from .config import ModelConfig, SynthSpec, TrainConfig, preset
from .data import synth_dataset
from .flops import flops_estimate
from .masking import nested_mask, patchify_regions
from .model import RegionMae
from .regions import multi_scale_regions, read_region_file, write_region_file
from .trainer import (complete_region_probs, evaluate, load_checkpoint,
                      save_checkpoint, train)


def _load_config(path):
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _model_cfg(args, blob):
    if getattr(args, "preset", None):
        return preset(args.preset)
    return ModelConfig.from_dict(blob.get("model", {}))


def _save_image(path, image):
    Image.fromarray((np.clip(image, 0, 1) * 255).astype(np.uint8)).save(path)


def _load_image(path):
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0


def cmd_gen_data(args):
    blob = _load_config(args.config)
    spec = SynthSpec.from_dict({**blob.get("synth", {}), **({"count": args.count} if args.count is not None else {})})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = synth_dataset(spec, args.seed)
    for i, (img, rs) in enumerate(samples):
        stem = out / f"sample-{i:05d}"
        _save_image(stem.with_suffix(".png"), img)
        write_region_file(stem.with_suffix(".regions.pgm"), rs)
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def cmd_segment(args):
    scales = args.scale or [500.0, 1000.0, 1500.0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = sorted(Path(args.images).glob("*.png"))
    for path in paths:
        rs = multi_scale_regions(_load_image(path), scales)
        rs.scales = list(scales)
        write_region_file(out / f"{path.stem}.regions.pgm", rs)
        print(f"{path.name}: {len(rs.maps)} regions")
    return 0


def cmd_train(args):
    blob = _load_config(args.config)
    model_cfg = ModelConfig.from_dict(blob.get("model", {}))
    train_blob = dict(blob.get("train", {}))
    if args.seed is not None:
        train_blob["seed"] = args.seed
    train_cfg = TrainConfig.from_dict(train_blob)
    spec = SynthSpec.from_dict(blob.get("synth", {"image_size": model_cfg.image_size}))
    train(model_cfg, train_cfg, spec=spec, out_dir=args.out)
    print(f"training finished; artifacts in {args.out}")
    return 0


def cmd_eval(args):
    model, manifest = load_checkpoint(args.checkpoint)
    spec = SynthSpec(image_size=model.cfg.image_size, count=args.count)
    from .trainer import build_dataset
    samples = build_dataset(spec, args.seed + 7919)
    betas = tuple(args.beta) if args.beta else (0.6, 0.75, 0.9)
    metrics = evaluate(model, samples, betas=betas, seed=args.seed)
    out = {"mean_iou": metrics["mean_iou"], "region_bce": metrics["region_bce"],
           "pixel_mse": metrics["pixel_mse"], "step": manifest.get("step")}
    print(json.dumps(out, indent=2))
    return 0


def cmd_flops(args):
    blob = _load_config(args.config)
    cfg = _model_cfg(args, blob)
    report = flops_estimate(cfg)
    if args.json:
        print(report.to_json())
    else:
        print(report.to_table())
        print(f"total ~= {report.total / 1e9:.2f}e9")
    return 0


def cmd_attend(args):
    model, _ = load_checkpoint(args.checkpoint)
    image = _load_image(args.image)
    weights = model.attention_dump(image, args.query)
    g = model.cfg.grid
    grid = weights.reshape(g, g)
    scaled = (255 * grid / max(grid.max(), 1e-12)).astype(np.uint8)
    out = Path(args.out)
    with open(out, "wb") as fh:
        fh.write(f"P5\n{g} {g}\n255\n".encode("ascii"))
        fh.write(scaled.tobytes())
    print(f"attention map written to {out}")
    return 0


def cmd_complete(args):
    model, _ = load_checkpoint(args.checkpoint)
    image = _load_image(args.image)
    cfg = model.cfg
    if args.prompts:
        prompts = json.loads(Path(args.prompts).read_text())
        result = complete_from_prompts(model, image, prompts)
        probs = result["probs"]
        binary = result["binary"]
    else:
        if not args.regions:
            print("either --prompts or --regions is required", file=sys.stderr)
            return 2
        rs = read_region_file(args.regions)
        patches = patchify_regions(rs.maps, cfg.patch)[args.region]
        rng = Rng(args.seed)
        mask = nested_mask(cfg.num_patches, args.beta, rng.permutation(cfg.num_patches))
        probs = complete_region_probs(model, image, patches, mask).astype(np.float64)
        binary = (probs >= 0.5).astype(np.int64)
    payload = {"probs": probs.tolist(), "binary": binary.tolist(), "threshold": 0.5}
    if args.out:
        Path(args.out).write_text(json.dumps(payload))
    else:
        print(json.dumps(payload))
    return 0


def cmd_serve(args):
    import uvicorn

    from .server import create_app

    app = create_app(args.checkpoint, args.data, frontend_dir=args.frontend)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="regionmae")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="output directory or file")

    p = sub.add_parser("gen-data", help="synthesize images with ground-truth regions")
    common(p)
    p.add_argument("--count", type=int, default=None)
    p.set_defaults(func=cmd_gen_data, out_required=True)

    p = sub.add_parser("segment", help="graph-based segmentation over an image directory")
    common(p)
    p.add_argument("--images", required=True)
    p.add_argument("--scale", type=float, action="append")
    p.set_defaults(func=cmd_segment, out_required=True)

    p = sub.add_parser("train", help="run the training loop")
    common(p)
    p.set_defaults(func=cmd_train, out_required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out synthetic data")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=32)
    p.add_argument("--beta", type=float, action="append",
                   help="region mask ratio(s); repeatable")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flops", help="analytic compute report")
    common(p)
    p.add_argument("--preset", help="named config, e.g. vit-b-mae")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("attend", help="dump an attention heatmap as PGM")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--query", type=int, required=True)
    p.set_defaults(func=cmd_attend, out_required=True)

    p = sub.add_parser("complete", help="offline region completion")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--prompts", help="JSON file with [{'patch': i, 'label': 'fg'|'bg'}]")
    p.add_argument("--regions", help="region file (PGM + sidecar)")
    p.add_argument("--region", type=int, default=0)
    p.add_argument("--beta", type=float, default=0.75)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("serve", help="start the completion HTTP service")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--frontend", help="directory of static frontend files")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "out_required", False) and not args.out:
        parser.error(f"{args.command} requires --out")
    try:
        return args.func(args)
    except (PromptError, IOError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

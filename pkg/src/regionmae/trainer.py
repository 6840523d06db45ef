"""Desk-scale optimization loop, checkpointing, and evaluation metrics."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .autograd import Rng, read_tensor_blob, write_tensor_blob
from .config import ModelConfig, SynthSpec, TrainConfig
from .data import foreground_prior, synth_dataset
from .masking import (MaskPattern, nested_mask, round_half_up,
                      sample_shared_masks_and_regions)
from .model import RegionMae
from .optim import AdamW, lr_at
from .pixel_branch import normalized_patch_targets
from .regions import multi_scale_regions
from . import autograd as ag


class TrainDivergence(RuntimeError):
    pass


def build_dataset(spec: SynthSpec, seed, region_source="ground_truth", fh_scales=()):
    """(image, RegionSet) pairs; regions either exact shape masks or FH output."""
    samples = synth_dataset(spec, seed)
    if region_source == "fh":
        samples = [(img, multi_scale_regions(img, list(fh_scales))) for img, _ in samples]
    return samples


def assemble_batch(samples, indices, cfg: ModelConfig, rng: Rng):
    """Stack per-sample masks and region draws into training arrays."""
    imgs, regs, img_vis, reg_vis, img_masked, reg_masked = [], [], [], [], [], []
    for i in indices:
        img, rs = samples[i]
        im, rm, batch = sample_shared_masks_and_regions(
            rs, cfg.num_patches, cfg.mask_ratio_img, cfg.mask_ratio_reg,
            cfg.k, cfg.patch, rng)
        imgs.append(img)
        regs.append(batch.patches)
        img_vis.append(im.visible_indices)
        reg_vis.append(rm.visible_indices)
        img_masked.append(im.masked)
        reg_masked.append(rm.masked)
    return (np.stack(imgs), np.stack(regs), np.stack(img_vis), np.stack(reg_vis),
            np.stack(img_masked), np.stack(reg_masked))


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, spec: SynthSpec = None,
          out_dir=None, samples=None, model=None, log=print):
    """Run the loop; returns (model, history). history rows mirror the CSV log."""
    if spec is None:
        spec = SynthSpec(image_size=model_cfg.image_size)
    rng = Rng(train_cfg.seed)
    if samples is None:
        samples = build_dataset(spec, train_cfg.seed, train_cfg.region_source,
                                train_cfg.fh_scales)
    if model is None:
        model = RegionMae(model_cfg, Rng(train_cfg.seed + 1))
        if model.region_branch is not None:
            model.region_branch.set_head_prior(foreground_prior(samples, model_cfg.patch))

    params = dict(model.named_parameters())
    if train_cfg.freeze_pixel_encoder:
        params = {n: p for n, p in params.items() if not n.startswith("pixel_encoder.")}
    opt = AdamW(params.values(), train_cfg)

    out_dir = Path(out_dir) if out_dir else None
    csv_rows = []
    history = []
    for step in range(1, train_cfg.total_steps + 1):
        idx = rng.choice(len(samples), size=train_cfg.batch_size, replace=True)
        batch = assemble_batch(samples, idx, model_cfg, rng)
        model.zero_grad()
        l_pix, l_reg, total = model.forward(*batch)
        if not math.isfinite(total.item()):
            raise TrainDivergence(
                f"non-finite loss at step {step}; config: {json.dumps(model_cfg.to_dict())}")
        total.backward()
        opt.clip_grads(train_cfg.grad_clip)
        lr = lr_at(step, train_cfg)
        opt.step(lr)
        row = {"step": step, "lr": lr, "pixel_loss": l_pix.item(),
               "region_loss": l_reg.item(), "total": total.item()}
        history.append(row)
        csv_rows.append(row)
        if log and (step % train_cfg.log_every == 0 or step == 1):
            log(f"step {step:5d}  lr {lr:.2e}  pix {row['pixel_loss']:.4f}  "
                f"reg {row['region_loss']:.4f}  total {row['total']:.4f}")
        if out_dir and (step % train_cfg.checkpoint_every == 0 or step == train_cfg.total_steps):
            save_checkpoint(out_dir / f"ckpt-{step:06d}", model, model_cfg, train_cfg,
                            step, rng, metrics={"total_loss": row["total"]})

    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "loss_log.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["step", "lr", "pixel_loss",
                                                    "region_loss", "total"])
            writer.writeheader()
            writer.writerows(csv_rows)
    return model, history


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model, model_cfg: ModelConfig, train_cfg: TrainConfig,
                    step, rng: Rng, metrics=None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name, p in model.named_parameters():
        with open(path / f"{name}.tensor", "wb") as fh:
            write_tensor_blob(fh, name, p.data)
    manifest = {
        "config": model_cfg.to_dict(),
        "train_config": train_cfg.to_dict() if train_cfg else None,
        "step": step,
        "rng_state": _jsonable_rng_state(rng.state()) if rng else None,
        "metrics": metrics or {},
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return path


def _jsonable_rng_state(state):
    def conv(obj):
        if isinstance(obj, dict):
            return {k: conv(v) for k, v in obj.items()}
        if isinstance(obj, np.integer):
            return int(obj)
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        return obj
    return conv(state)


def load_checkpoint(path):
    """Rebuild the model from a checkpoint directory; returns (model, manifest)."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    cfg = ModelConfig.from_dict(manifest["config"])
    model = RegionMae(cfg, Rng(0))
    for name, p in model.named_parameters():
        blob = path / f"{name}.tensor"
        if not blob.exists():
            raise IOError(f"checkpoint missing tensor {name!r}")
        with open(blob, "rb") as fh:
            rec = read_tensor_blob(fh)
        if rec is None or rec[1].shape != p.data.shape:
            raise IOError(f"checkpoint tensor {name!r} has shape "
                          f"{None if rec is None else rec[1].shape}, model needs {p.data.shape}")
        p.data = rec[1].copy()
    return model, manifest


# ---------------------------------------------------------------------------
# evaluation


def completion_iou(prob_patches, target_patches, masked_bool, threshold=0.5):
    """IoU over masked-patch pixels between thresholded prediction and target."""
    pred = prob_patches[masked_bool] >= threshold
    gt = target_patches[masked_bool] >= 0.5
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def evaluate(model: RegionMae, samples, betas=(0.6, 0.75, 0.9), seed=0,
             threshold=0.5):
    """Held-out metrics: per-beta completion IoU (full image visible, nested
    region masks), shared-mask region BCE, and masked pixel MSE.

    Returns a dict with 'iou' (beta -> list of per-sample IoUs), 'region_bce',
    'pixel_mse'.
    """
    cfg = model.cfg
    rng = Rng(seed)
    n = cfg.num_patches
    betas = sorted(betas)
    ious = {b: [] for b in betas}
    bces, mses = [], []

    for img, rs in samples:
        patches = _region_patches(rs, cfg.patch)
        perm = rng.permutation(n)
        # one region usable at every ratio: visible sets are nested, so check
        # foreground visibility under the most aggressive mask
        tight = nested_mask(n, max(betas), perm)
        fg = patches.max(axis=2) > 0
        pool = np.flatnonzero(fg[:, tight.visible].any(axis=1))
        if pool.size == 0:
            pool = np.arange(len(rs.maps))
        region = int(pool[rng.integers(0, pool.size)])
        target = patches[region]
        # image masked at the training ratio so completion quality is measured
        # in the regime the encoder was optimized for
        img_mask = nested_mask(n, cfg.mask_ratio_img, rng.permutation(n))

        if model.region_branch is not None:
            for beta in betas:
                mask = nested_mask(n, beta, perm)
                probs = completion_probs(model, img, target, mask, img_mask)
                ious[beta].append(completion_iou(probs, target, mask.masked, threshold))

            # training-style shared-mask BCE at the model's region ratio
            im, rm, batch = sample_shared_masks_and_regions(
                rs, n, cfg.mask_ratio_img, cfg.mask_ratio_reg, cfg.k, cfg.patch, rng)
            _, l_reg, _ = model.forward(img[None], batch.patches[None],
                                        im.visible_indices[None], rm.visible_indices[None],
                                        im.masked[None], rm.masked[None])
            bces.append(l_reg.item())

        if model.pixel_decoder is not None:
            im = nested_mask(n, cfg.mask_ratio_img, perm)
            penc = model.pixel_encoder(np.asarray(img, np.float32)[None], im.visible_indices[None])
            pred = model.pixel_decoder(model.pixel_decoder.fill(penc, im.visible_indices[None]))
            tgt = normalized_patch_targets(img[None], cfg.patch)
            err = (pred.data - tgt)[0][im.masked]
            mses.append(float((err**2).mean()))

    out = {"iou": {b: ious[b] for b in betas}}
    out["mean_iou"] = {b: float(np.mean(v)) if v else float("nan") for b, v in ious.items()}
    out["region_bce"] = float(np.mean(bces)) if bces else float("nan")
    out["pixel_mse"] = float(np.mean(mses)) if mses else float("nan")
    return out


def _region_patches(rs, p):
    from .masking import patchify_regions
    return patchify_regions(rs.maps, p)


def completion_probs(model: RegionMae, image, target_patches, mask: MaskPattern,
                     image_mask: MaskPattern = None):
    """Decode one region from its visible patches.

    target_patches: [N, p*p] binary. image_mask limits what the pixel encoder
    sees; by default the whole image is visible (the interactive regime).
    Returns sigmoid probabilities [N, p*p].
    """
    cfg = model.cfg
    n = cfg.num_patches
    if image_mask is None:
        img_idx = np.arange(n, dtype=np.int64)[None]
    else:
        img_idx = image_mask.visible_indices[None]
    reg = np.broadcast_to(target_patches[None, None], (1, cfg.k, n, target_patches.shape[-1])).copy()
    logits = model.region_logits(np.asarray(image, np.float32)[None], reg,
                                 img_idx, mask.visible_indices[None])
    return 1.0 / (1.0 + np.exp(-logits.data[0, 0]))


def complete_region_probs(model: RegionMae, image, target_patches, mask: MaskPattern):
    """Fully-visible-image completion, the regime the HTTP service runs in."""
    return completion_probs(model, image, target_patches, mask)


def bootstrap_gap_ci(a, b, n_boot=2000, seed=0, alpha=0.05):
    """Percentile CI for mean(a - b) over paired per-sample values."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diffs = a - b
    gen = np.random.Generator(np.random.PCG64(seed))
    means = np.empty(n_boot)
    for i in range(n_boot):
        idx = gen.integers(0, diffs.size, size=diffs.size)
        means[i] = diffs[idx].mean()
    return float(np.quantile(means, alpha / 2)), float(np.quantile(means, 1 - alpha / 2))

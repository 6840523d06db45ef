"""Joint model: pixel and region branches wired under a cross-feed mode."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Rng, Tensor
from .blocks import Module
from .config import ModelConfig
from .pixel_branch import PixelDecoder, PixelEncoder, pixel_loss
from .region_branch import RegionBranch, region_loss


class RegionMae(Module):
    """Pixel reconstruction and region completion under one equal-weight loss."""

    def __init__(self, cfg: ModelConfig, rng: Rng = None):
        if rng is None:
            rng = Rng(0)
        self.cfg = cfg
        self.pixel_encoder = PixelEncoder(cfg, rng)
        self.pixel_decoder = PixelDecoder(cfg, rng) if cfg.cross_feed != "rae_only" else None
        self.region_branch = RegionBranch(cfg, rng) if cfg.cross_feed != "mae_only" else None

    def forward(self, images, region_patches, img_visible_idx, reg_visible_idx,
                img_masked_bool, reg_masked_bool):
        """Returns (pixel_loss, region_loss, total_loss) as scalar tensors.

        images: [B, H, W, C]; region_patches: [B, k, N, p*p];
        *_visible_idx: [B, Lv] int; *_masked_bool: [B, N] bool.
        """
        cfg = self.cfg
        mode = cfg.cross_feed
        images = np.asarray(images, dtype=np.float32)

        penc = self.pixel_encoder(images, img_visible_idx)

        reg_enc = None
        if mode in ("pix_to_reg", "reg_to_pix", "bidirectional", "rae_only"):
            reg_enc = self.region_branch.encode(region_patches, reg_visible_idx)

        l_pix = Tensor(np.float32(0.0))
        if mode != "rae_only":
            filled = self.pixel_decoder.fill(penc, img_visible_idx)
            if mode in ("reg_to_pix", "bidirectional"):
                filled = ag.add(filled, self.region_branch.pixel_feed(reg_enc, reg_visible_idx))
            pred = self.pixel_decoder(filled)
            l_pix = pixel_loss(pred, images, img_masked_bool, cfg.patch)

        l_reg = Tensor(np.float32(0.0))
        if mode != "mae_only":
            if mode == "reg_to_pix":
                # feed runs regions -> pixels only; the region decoder gets a
                # context built from its own encoder
                ctx = self.region_branch.self_context(reg_enc, reg_visible_idx)
            else:
                ctx = self.region_branch.neck_forward(
                    self.region_branch.fill_pixel_features(penc, img_visible_idx))
            logits = self.region_branch.decode(reg_enc, ctx, reg_visible_idx)
            l_reg = region_loss(logits, region_patches, reg_masked_bool,
                                masked_only=cfg.region_loss_masked_only)

        total = ag.add(l_pix, l_reg)
        return l_pix, l_reg, total

    def region_logits(self, images, region_patches, img_visible_idx, reg_visible_idx):
        """Region completion logits [B, k, N, p*p] without computing losses."""
        if self.region_branch is None:
            raise RuntimeError("model has no region branch")
        images = np.asarray(images, dtype=np.float32)
        penc = self.pixel_encoder(images, img_visible_idx)
        reg_enc = self.region_branch.encode(region_patches, reg_visible_idx)
        if self.cfg.cross_feed == "reg_to_pix":
            ctx = self.region_branch.self_context(reg_enc, reg_visible_idx)
        else:
            ctx = self.region_branch.neck_forward(
                self.region_branch.fill_pixel_features(penc, img_visible_idx))
        return self.region_branch.decode(reg_enc, ctx, reg_visible_idx)

    def attention_dump(self, image, query_patch):
        """Head-averaged last-encoder-block attention row for one query patch,
        computed with every patch visible. Returns [N] weights summing to 1."""
        cfg = self.cfg
        n = cfg.num_patches
        if not 0 <= query_patch < n:
            raise IndexError(f"query patch {query_patch} out of range for N={n}")
        image = np.asarray(image, dtype=np.float32)[None]
        idx = np.arange(n, dtype=np.int64)[None]
        self.pixel_encoder(image, idx, record_attn=True)
        weights = self.pixel_encoder.blocks[-1].attn.last_weights  # [B, L, L]
        row = weights[0, query_patch]
        return row / row.sum()

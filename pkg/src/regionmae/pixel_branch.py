"""Pixel branch: encoder over visible patches only, fixed-size decoder with
mask tokens, per-patch-normalized l2 reconstruction loss."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Rng, Tensor
from .blocks import (LayerNorm, Linear, MaskToken, Module, PatchEmbed,
                     SelfAttnBlock, mask_fill, patchify, sincos_pos_embed_2d)
from .config import ModelConfig

NORM_EPS = 1e-6  # guards constant patches in target normalization


class PixelEncoder(Module):
    def __init__(self, cfg: ModelConfig, rng: Rng):
        self.cfg = cfg
        self.embed = PatchEmbed(cfg.patch, cfg.in_chans, cfg.enc_dim, rng)
        self.pos = sincos_pos_embed_2d(cfg.grid, cfg.grid, cfg.enc_dim)
        self.blocks = [SelfAttnBlock(cfg.enc_dim, cfg.enc_heads, rng, cfg.mlp_ratio)
                       for _ in range(cfg.enc_depth)]
        self.norm = LayerNorm(cfg.enc_dim)

    def __call__(self, images, visible_indices, record_attn=False):
        """images: [B, H, W, C]; visible_indices: [B, Lv] -> [B, Lv, enc_dim]."""
        tokens = ag.add(self.embed(images), Tensor(self.pos))
        x = ag.gather_rows(tokens, visible_indices)
        for i, block in enumerate(self.blocks):
            x = block(x, record=record_attn and i == len(self.blocks) - 1)
        return self.norm(x)


class PixelDecoder(Module):
    def __init__(self, cfg: ModelConfig, rng: Rng):
        self.cfg = cfg
        self.proj = Linear(cfg.enc_dim, cfg.dec_dim, rng)
        self.mask_token = MaskToken(cfg.dec_dim, rng)
        self.pos = sincos_pos_embed_2d(cfg.grid, cfg.grid, cfg.dec_dim)
        self.blocks = [SelfAttnBlock(cfg.dec_dim, cfg.dec_heads, rng, cfg.mlp_ratio)
                       for _ in range(cfg.dec_depth)]
        self.norm = LayerNorm(cfg.dec_dim)
        self.head = Linear(cfg.dec_dim, cfg.patch**2 * cfg.in_chans, rng)

    def fill(self, visible_features, visible_indices):
        """Project to decoder width and scatter into the full token grid."""
        x = self.proj(visible_features)
        return mask_fill(x, visible_indices, self.mask_token, self.pos)

    def __call__(self, filled):
        x = filled
        for block in self.blocks:
            x = block(x)
        return self.head(self.norm(x))


def normalized_patch_targets(images, p):
    """Per-patch mean/std normalized pixel targets, [B, N, p*p*C]."""
    t = patchify(np.asarray(images, dtype=np.float32), p)
    mu = t.mean(axis=-1, keepdims=True)
    sd = t.std(axis=-1, keepdims=True)
    return (t - mu) / (sd + NORM_EPS)


def pixel_loss(pred, images, masked_bool, p):
    """MSE over masked patches only. masked_bool: [B, N]."""
    target = normalized_patch_targets(images, p)
    diff = ag.sub(pred, Tensor(target))
    sq = ag.mul(diff, diff)
    weights = np.asarray(masked_bool, dtype=np.float32)[..., None]
    weighted = ag.mul(sq, Tensor(np.broadcast_to(weights, sq.shape).copy()))
    denom = float(weights.sum()) * target.shape[-1]
    return ag.smul(ag.sum_(weighted), 1.0 / max(denom, 1.0))

"""Region branch: masked region autoencoding in its three layouts.

channel: the k region maps are stacked as channels of one token sequence --
cheap, but not permutation equivariant. batch: each region runs through the
encoder/decoder independently -- equivariant, cost linear in k. length: each
region is pooled into a single query vector; a modified cross-attention
expands every query onto all context tokens at once.
"""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Rng, ShapeError, Tensor
from .blocks import (Attention, CrossAttnBlock, LayerNorm, Linear, MaskToken,
                     MlpHead, Module, SelfAttnBlock, mask_fill,
                     sincos_pos_embed_2d)
from .config import ModelConfig


class ExpansionBlock(Module):
    """Final decoder block of the length variant: self-attention over the k
    queries, then query expansion onto the context; the per-block feed-forward
    is dropped in favor of the MLP predictor that follows."""

    def __init__(self, dim, heads, rng):
        self.norm1 = LayerNorm(dim)
        self.self_attn = Attention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.expand_weight = Tensor(rng.normal((dim, dim), std=0.02), requires_grad=True)

    def __call__(self, q, ctx):
        q = ag.add(q, self.self_attn(self.norm1(q)))
        qn = self.norm2(q)
        proj = ag.matmul(ctx, self.expand_weight)  # [..., N, D]
        *lead, k, d = qn.shape
        n = proj.shape[-2]
        proj_b = ag.broadcast_to(ag.reshape(proj, (*lead, 1, n, d)), (*lead, k, n, d))
        q_b = ag.broadcast_to(ag.reshape(qn, (*lead, k, 1, d)), (*lead, k, n, d))
        return ag.add(proj_b, q_b)


class RegionBranch(Module):
    def __init__(self, cfg: ModelConfig, rng: Rng):
        self.cfg = cfg
        p2 = cfg.patch**2
        in_width = cfg.k * p2 if cfg.variant == "channel" else p2
        self.embed = Linear(in_width, cfg.region_enc_dim, rng)
        self.pos_enc = sincos_pos_embed_2d(cfg.grid, cfg.grid, cfg.region_enc_dim)
        self.enc_blocks = [SelfAttnBlock(cfg.region_enc_dim, cfg.region_heads, rng, cfg.mlp_ratio)
                           for _ in range(cfg.region_depth)]
        self.enc_norm = LayerNorm(cfg.region_enc_dim)
        self.f = Linear(cfg.region_enc_dim, cfg.region_dec_dim, rng)

        # neck: mask-filled pixel features -> context at decoder width
        self.pixel_fill_token = MaskToken(cfg.enc_dim, rng)
        self.pos_pixel = sincos_pos_embed_2d(cfg.grid, cfg.grid, cfg.enc_dim)
        self.neck_proj = Linear(cfg.enc_dim, cfg.region_dec_dim, rng)
        self.neck_block = SelfAttnBlock(cfg.region_dec_dim, cfg.region_heads, rng, cfg.mlp_ratio)

        self.pos_dec = sincos_pos_embed_2d(cfg.grid, cfg.grid, cfg.region_dec_dim)
        h1, h2 = cfg.head_hidden
        if cfg.variant == "length":
            self.dec_blocks = [CrossAttnBlock(cfg.region_dec_dim, cfg.region_heads, rng, cfg.mlp_ratio)
                               for _ in range(cfg.region_depth - 1)]
            self.expansion = ExpansionBlock(cfg.region_dec_dim, cfg.region_heads, rng)
            self.head = MlpHead([cfg.region_dec_dim, h1, h2, p2], rng)
        else:
            self.region_fill_token = MaskToken(cfg.region_dec_dim, rng)
            self.dec_block = SelfAttnBlock(cfg.region_dec_dim, cfg.region_heads, rng, cfg.mlp_ratio)
            out = cfg.k * p2 if cfg.variant == "channel" else p2
            self.head = MlpHead([cfg.region_dec_dim, h1, h2, out], rng)

        # reg_to_pix feeding: region embeddings projected to pixel-decoder width
        self.h = Linear(cfg.region_enc_dim, cfg.dec_dim, rng)
        self.feed_fill_token = MaskToken(cfg.dec_dim, rng)
        # decoder context built from the region encoder itself, for modes where
        # pixel features must not reach the region branch
        self.ctx_fill_token = MaskToken(cfg.region_dec_dim, rng)

    def set_head_prior(self, prior):
        """Initialize the predictor's final bias to the foreground-prior logit."""
        prior = min(max(float(prior), 1e-4), 1 - 1e-4)
        self.head.layers[-1].bias.data[:] = math.log(prior / (1.0 - prior))

    # ------------------------------------------------------------------
    # encoder

    def encode(self, region_patches, visible_indices):
        """region_patches: [B, k, N, p*p]; visible_indices: [B, Lv].

        Returns the variant-specific encoder output:
          channel -> [B, Lv, p_E]; batch -> [B, k, Lv, p_E];
          length -> (queries [B, k, p_E], prepool [B, k, Lv, p_E]).
        """
        B, k, N, p2 = region_patches.shape
        if k != self.cfg.k:
            raise ShapeError(f"model built for k={self.cfg.k}, got {k} regions")
        idx = np.asarray(visible_indices)
        if self.cfg.variant == "channel":
            tokens = np.transpose(region_patches, (0, 2, 1, 3)).reshape(B, N, k * p2)
            x = ag.add(self.embed(Tensor(tokens)), Tensor(self.pos_enc))
            x = ag.gather_rows(x, idx)
        else:
            x = ag.add(self.embed(Tensor(region_patches)), Tensor(self.pos_enc))
            x = ag.gather_rows(x, np.broadcast_to(idx[:, None, :], (B, k, idx.shape[-1])))
        for block in self.enc_blocks:
            x = block(x)
        x = self.enc_norm(x)
        if self.cfg.variant == "length":
            return ag.mean(x, axis=-2), x
        return x

    # ------------------------------------------------------------------
    # neck

    def fill_pixel_features(self, pixel_features, visible_indices):
        """Scatter visible pixel-encoder features into the full grid with this
        branch's own fill token and position table."""
        return mask_fill(pixel_features, visible_indices, self.pixel_fill_token, self.pos_pixel)

    def neck_forward(self, filled_pixel_features):
        """[B, N, enc_dim] (already mask-filled) -> context [B, N, p_D]."""
        return self.neck_block(self.neck_proj(filled_pixel_features))

    def self_context(self, enc_out, visible_indices):
        """Decoder context [B, N, p_D] from the region encoder's own output,
        mask-filled and run through the neck block; carries no pixel
        information (used when the pixel branch must not feed this one)."""
        cfg = self.cfg
        idx = np.asarray(visible_indices)
        if cfg.variant == "channel":
            v = self.f(enc_out)  # [B, Lv, p_D]
            filled = mask_fill(v, idx, self.ctx_fill_token, self.pos_dec)
        else:
            prepool = enc_out[1] if isinstance(enc_out, tuple) else enc_out
            v = self.f(prepool)  # [B, k, Lv, p_D]
            B = idx.shape[0]
            bidx = np.broadcast_to(idx[:, None, :], (B, cfg.k, idx.shape[-1]))
            filled = ag.mean(mask_fill(v, bidx, self.ctx_fill_token, self.pos_dec), axis=1)
        return self.neck_block(filled)

    # ------------------------------------------------------------------
    # decoder

    def decode(self, enc_out, context, visible_indices):
        """-> logits [B, k, N, p*p]."""
        cfg = self.cfg
        p2 = cfg.patch**2
        idx = np.asarray(visible_indices)
        B = idx.shape[0]
        N = cfg.num_patches
        if cfg.variant == "channel":
            v = self.f(enc_out)  # [B, Lv, p_D]
            filled = mask_fill(v, idx, self.region_fill_token, self.pos_dec)
            x = self.dec_block(ag.add(filled, context))
            logits = self.head(x)  # [B, N, k*p*p]
            logits = ag.reshape(logits, (B, N, cfg.k, p2))
            return ag.transpose(logits, 1, 2)
        if cfg.variant == "batch":
            v = self.f(enc_out)  # [B, k, Lv, p_D]
            bidx = np.broadcast_to(idx[:, None, :], (B, cfg.k, idx.shape[-1]))
            filled = mask_fill(v, bidx, self.region_fill_token, self.pos_dec)
            ctx = ag.broadcast_to(ag.reshape(context, (B, 1, N, cfg.region_dec_dim)),
                                  (B, cfg.k, N, cfg.region_dec_dim))
            x = self.dec_block(ag.add(filled, ctx))
            return self.head(x)
        # length
        queries, _ = enc_out if isinstance(enc_out, tuple) else (enc_out, None)
        q = self.f(queries)  # [B, k, p_D]
        for block in self.dec_blocks:
            q = block(q, context)
        expanded = self.expansion(q, context)  # [B, k, N, p_D]
        return self.head(expanded)

    def __call__(self, region_patches, visible_indices, context):
        enc = self.encode(region_patches, visible_indices)
        return self.decode(enc, context, visible_indices)

    # ------------------------------------------------------------------
    # reg_to_pix feeding

    def pixel_feed(self, enc_out, visible_indices):
        """Region features for the pixel decoder: project to its width, fill
        masked rows, and mean over the region axis. -> [B, N, dec_dim]."""
        cfg = self.cfg
        idx = np.asarray(visible_indices)
        if cfg.variant == "channel":
            v = self.h(enc_out)  # [B, Lv, dec_dim]
            return mask_fill(v, idx, self.feed_fill_token, n=cfg.num_patches)
        prepool = enc_out[1] if isinstance(enc_out, tuple) else enc_out
        v = self.h(prepool)  # [B, k, Lv, dec_dim]
        B = idx.shape[0]
        bidx = np.broadcast_to(idx[:, None, :], (B, cfg.k, idx.shape[-1]))
        filled = mask_fill(v, bidx, self.feed_fill_token, n=cfg.num_patches)
        return ag.mean(filled, axis=1)


def region_loss(logits, region_patches, masked_bool, masked_only=True):
    """Binary cross-entropy with logits over region patches.

    logits: [B, k, N, p*p] tensor; region_patches: same-shape binary targets;
    masked_bool: [B, N]. Averaged over masked patches only by default.
    """
    bce = ag.binary_cross_entropy_with_logits(logits, Tensor(np.asarray(region_patches, dtype=np.float32)))
    if masked_only:
        w = np.asarray(masked_bool, dtype=np.float32)[:, None, :, None]
    else:
        w = np.ones(np.asarray(masked_bool).shape, dtype=np.float32)[:, None, :, None]
    w_full = np.broadcast_to(w, bce.shape).copy()
    denom = float(w_full.sum())
    return ag.smul(ag.sum_(ag.mul(bce, Tensor(w_full))), 1.0 / max(denom, 1.0))

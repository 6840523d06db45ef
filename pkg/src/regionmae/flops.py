"""Analytic compute model: closed-form multiply-accumulate counts.

Counts cover linear layers and the attention matmuls (QKV, logit matrix,
weighted sum, output projection) at the actual visible-token counts; norms,
gelu and softmax are excluded. Totals are reported directly as FLOPs, the
convention under which a masked ViT-B pixel autoencoder comes out at 9.7e9.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .config import ModelConfig
from .masking import round_half_up


def _self_block(L, d, ratio):
    # qkv + out proj: 4Ld^2; logits + weighted sum: 2L^2 d; mlp: 2*ratio*Ld^2
    return (4 + 2 * ratio) * L * d * d + 2 * L * L * d


def _cross_block(Lq, Lc, d, ratio):
    self_part = 4 * Lq * d * d + 2 * Lq * Lq * d
    cross = (Lq + 2 * Lc) * d * d + 2 * Lq * Lc * d + Lq * d * d
    mlp = 2 * ratio * Lq * d * d
    return self_part + cross + mlp


@dataclass
class FlopsReport:
    components: dict = field(default_factory=dict)

    @property
    def total(self):
        return sum(self.components.values())

    @property
    def region_branch_total(self):
        pixel = {"pixel_encoder", "pixel_decoder"}
        return sum(v for k, v in self.components.items() if k not in pixel)

    def to_json(self):
        return json.dumps({"components": self.components, "total": self.total,
                           "region_branch_total": self.region_branch_total,
                           "total_e9": self.total / 1e9}, indent=2)

    def to_table(self):
        width = max(len(k) for k in list(self.components) + ["total"])
        lines = [f"{name.ljust(width)}  {count:>16,d}  {count / 1e9:8.3f}e9"
                 for name, count in self.components.items()]
        lines.append("-" * (width + 30))
        lines.append(f"{'total'.ljust(width)}  {self.total:>16,d}  {self.total / 1e9:8.3f}e9")
        return "\n".join(lines)


def flops_estimate(cfg: ModelConfig) -> FlopsReport:
    N = cfg.num_patches
    p2 = cfg.patch**2
    Lv = N - round_half_up(N * cfg.mask_ratio_img)
    Lv_r = N - round_half_up(N * cfg.mask_ratio_reg)
    r = cfg.mlp_ratio
    comp = {}

    # pixel encoder: patch embedding runs over the full grid, blocks over Lv
    comp["pixel_encoder"] = (N * p2 * cfg.in_chans * cfg.enc_dim
                             + cfg.enc_depth * _self_block(Lv, cfg.enc_dim, r))

    if cfg.cross_feed != "rae_only":
        comp["pixel_decoder"] = (Lv * cfg.enc_dim * cfg.dec_dim
                                 + cfg.dec_depth * _self_block(N, cfg.dec_dim, r)
                                 + N * cfg.dec_dim * p2 * cfg.in_chans)

    if cfg.cross_feed == "mae_only" or cfg.k == 0:
        if cfg.cross_feed != "mae_only" and cfg.k == 0:
            for name in ("region_encoder", "neck", "region_decoder", "region_head"):
                comp[name] = 0
        return FlopsReport(components=comp)

    k = cfg.k
    pe, pd = cfg.region_enc_dim, cfg.region_dec_dim
    n_seq = 1 if cfg.variant == "channel" else k
    embed_width = k * p2 if cfg.variant == "channel" else p2
    comp["region_encoder"] = n_seq * (Lv_r * embed_width * pe
                                      + cfg.region_depth * _self_block(Lv_r, pe, r))

    comp["neck"] = N * cfg.enc_dim * pd + _self_block(N, pd, r)

    h1, h2 = cfg.head_hidden
    if cfg.variant == "channel":
        dec = Lv_r * pe * pd + _self_block(N, pd, r)
        head = N * (pd * h1 + h1 * h2 + h2 * k * p2)
    elif cfg.variant == "batch":
        dec = k * Lv_r * pe * pd + k * _self_block(N, pd, r)
        head = k * N * (pd * h1 + h1 * h2 + h2 * p2)
    else:  # length
        dec = k * pe * pd  # f on the k pooled queries
        for _ in range(cfg.region_depth - 1):
            dec += _cross_block(k, N, pd, r)
        dec += 4 * k * pd * pd + 2 * k * k * pd  # expansion block self-attention
        dec += N * pd * pd  # expansion weight on the context
        head = k * N * (pd * h1 + h1 * h2 + h2 * p2)
    comp["region_decoder"] = dec
    comp["region_head"] = head

    if cfg.cross_feed in ("reg_to_pix", "bidirectional"):
        comp["region_pixel_feed"] = n_seq * Lv_r * pe * cfg.dec_dim
    return FlopsReport(components=comp)

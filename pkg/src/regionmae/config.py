"""Dataclass configuration records and named presets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace


VARIANTS = ("channel", "batch", "length")
CROSS_FEED_MODES = ("pix_to_reg", "reg_to_pix", "bidirectional", "rae_only", "mae_only")


@dataclass
class ModelConfig:
    image_size: int = 32
    patch: int = 4
    in_chans: int = 3
    # pixel branch
    enc_dim: int = 64
    enc_depth: int = 2
    enc_heads: int = 4
    dec_dim: int = 32
    dec_depth: int = 2
    dec_heads: int = 4
    mask_ratio_img: float = 0.75
    # region branch
    variant: str = "length"
    region_enc_dim: int = 32
    region_dec_dim: int = 32
    region_depth: int = 1
    region_heads: int = 4
    mask_ratio_reg: float = 0.75
    k: int = 8
    head_hidden: tuple = None  # 3-layer predictor hidden widths; default dim/4
    cross_feed: str = "pix_to_reg"
    mlp_ratio: int = 4
    region_loss_masked_only: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.cross_feed not in CROSS_FEED_MODES:
            raise ValueError(f"unknown cross-feed mode {self.cross_feed!r}")
        for dim, heads in ((self.enc_dim, self.enc_heads), (self.dec_dim, self.dec_heads),
                           (self.region_enc_dim, self.region_heads),
                           (self.region_dec_dim, self.region_heads)):
            if dim % heads != 0:
                raise ValueError(f"dim {dim} not divisible by heads {heads}")
        if self.head_hidden is None:
            h = max(16, self.region_dec_dim // 4)
            self.head_hidden = (h, h)
        else:
            self.head_hidden = tuple(self.head_hidden)

    @property
    def grid(self):
        return self.image_size // self.patch

    @property
    def num_patches(self):
        return self.grid * self.grid

    def with_(self, **kwargs):
        return replace(self, **kwargs)

    def to_dict(self):
        d = asdict(self)
        d["head_hidden"] = list(self.head_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "head_hidden" in d and d["head_hidden"] is not None:
            d["head_hidden"] = tuple(d["head_hidden"])
        return cls(**d)


@dataclass
class TrainConfig:
    base_lr: float = 1e-4
    batch_size: int = 8
    total_steps: int = 200
    warmup_frac: float = 0.05
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.95
    grad_clip: float = 1.0
    seed: int = 0
    log_every: int = 10
    checkpoint_every: int = 200
    freeze_pixel_encoder: bool = False
    region_source: str = "ground_truth"  # "ground_truth" | "fh"
    fh_scales: tuple = (8.0, 32.0, 128.0)

    @property
    def warmup_steps(self):
        return max(1, int(self.total_steps * self.warmup_frac))

    @property
    def peak_lr(self):
        return self.base_lr * self.batch_size / 256.0

    def to_dict(self):
        d = asdict(self)
        d["fh_scales"] = list(self.fh_scales)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "fh_scales" in d:
            d["fh_scales"] = tuple(d["fh_scales"])
        return cls(**d)


@dataclass
class SynthSpec:
    image_size: int = 32
    min_shapes: int = 1
    max_shapes: int = 4
    noise_std: float = 0.02
    count: int = 256

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def preset(name) -> ModelConfig:
    """Named configurations; the ViT-B ones exist for the cost model."""
    presets = {
        "desk": ModelConfig(),
        "vit-b-mae": ModelConfig(
            image_size=224, patch=16,
            enc_dim=768, enc_depth=12, enc_heads=12,
            dec_dim=512, dec_depth=8, dec_heads=16,
            cross_feed="mae_only",
            region_enc_dim=128, region_dec_dim=128, region_heads=8,
        ),
        "vit-b-rmae": ModelConfig(
            image_size=224, patch=16,
            enc_dim=768, enc_depth=12, enc_heads=12,
            dec_dim=512, dec_depth=8, dec_heads=16,
            cross_feed="pix_to_reg", variant="length", k=8,
            region_enc_dim=128, region_dec_dim=128, region_heads=8,
        ),
        "vit-b-rae": ModelConfig(
            image_size=224, patch=16,
            enc_dim=768, enc_depth=12, enc_heads=12,
            dec_dim=512, dec_depth=8, dec_heads=16,
            cross_feed="rae_only", variant="length", k=8,
            region_enc_dim=128, region_dec_dim=128, region_heads=8,
        ),
    }
    if name not in presets:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(presets)}")
    return presets[name]

"""Shared fixtures: toy configs, float64 promotion, and trained models."""

import numpy as np
import pytest

from regionmae.autograd import Rng
from regionmae.config import ModelConfig, SynthSpec, TrainConfig

# Training recipe used by every test that needs a converged desk-scale model.
# The schedule runs 600 steps; the loss-halving property is read at step 200.
RECIPE = dict(base_lr=0.08, batch_size=16, total_steps=600)


def toy_config(**kw):
    """8x8 image, 4 patches; smallest config that exercises every code path."""
    base = dict(image_size=8, patch=4, enc_dim=16, enc_heads=2, enc_depth=1,
                dec_dim=16, dec_heads=2, dec_depth=1,
                region_enc_dim=16, region_dec_dim=16, region_heads=2,
                region_depth=1, k=2, head_hidden=(16, 16))
    base.update(kw)
    return ModelConfig(**base)


def promote_f64(module):
    """Cast every parameter of a Module to float64 in place."""
    for _, p in module.named_parameters():
        p.data = p.data.astype(np.float64)
    return module


def toy_batch(cfg, seed=0, batch=1):
    """Random (images, region_patches, img_vis, reg_vis, img_masked, reg_masked)."""
    rng = Rng(seed)
    n = cfg.num_patches
    imgs = rng.uniform((batch, cfg.image_size, cfg.image_size, 3)).astype(np.float32)
    regs = (rng.uniform((batch, cfg.k, n, cfg.patch**2)) > 0.5).astype(np.float32)
    n_vis_i = n - int(np.floor(n * cfg.mask_ratio_img + 0.5))
    n_vis_r = n - int(np.floor(n * cfg.mask_ratio_reg + 0.5))
    img_vis = np.stack([rng.permutation(n)[:n_vis_i] for _ in range(batch)])
    reg_vis = np.stack([rng.permutation(n)[:n_vis_r] for _ in range(batch)])
    img_masked = np.ones((batch, n), dtype=bool)
    reg_masked = np.ones((batch, n), dtype=bool)
    for b in range(batch):
        img_masked[b, img_vis[b]] = False
        reg_masked[b, reg_vis[b]] = False
    return imgs, regs, img_vis.astype(np.int64), reg_vis.astype(np.int64), img_masked, reg_masked


@pytest.fixture(scope="session")
def recipe_models():
    """Five seeds of the default model trained with the standard recipe."""
    from regionmae.trainer import train

    out = []
    for seed in range(5):
        tc = TrainConfig(seed=seed, **RECIPE)
        model, hist = train(ModelConfig(), tc, spec=SynthSpec(), log=None)
        out.append((model, hist))
    return out


@pytest.fixture(scope="session")
def model_2k():
    """Single longer run; attention structure needs more steps to emerge."""
    from regionmae.trainer import train

    tc = TrainConfig(seed=0, base_lr=0.08, batch_size=16, total_steps=2000)
    model, _ = train(ModelConfig(), tc, spec=SynthSpec(), log=None)
    return model


@pytest.fixture(scope="session")
def held_out():
    from regionmae.trainer import build_dataset

    return build_dataset(SynthSpec(count=64), 10_000)

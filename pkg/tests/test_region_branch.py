"""Region branch: variant shapes, permutation behavior, loss oracle, priors."""

import math

import numpy as np
import pytest

from regionmae import autograd as ag
from regionmae.autograd import Rng, ShapeError, Tensor
from regionmae.region_branch import RegionBranch, region_loss

from conftest import toy_batch, toy_config


def variant_branch(variant, k=2, seed=0):
    cfg = toy_config(k=k, variant=variant)
    return cfg, RegionBranch(cfg, Rng(seed))


def run_logits(cfg, branch, regs, reg_vis, seed=0):
    ctx = Rng(seed).normal((regs.shape[0], cfg.num_patches, cfg.region_dec_dim))
    return branch(regs, reg_vis, Tensor(ctx)).data


# ---------------------------------------------------------------------------
# shapes


@pytest.mark.parametrize("variant", ["channel", "batch", "length"])
def test_decode_shapes(variant):
    cfg, branch = variant_branch(variant, k=3)
    _, regs, _, reg_vis, _, _ = toy_batch(cfg, seed=1, batch=2)
    out = run_logits(cfg, branch, regs, reg_vis)
    assert out.shape == (2, 3, cfg.num_patches, cfg.patch**2)


def test_encode_rejects_wrong_k():
    cfg, branch = variant_branch("batch", k=2)
    _, regs, _, reg_vis, _, _ = toy_batch(cfg, seed=0)
    with pytest.raises(ShapeError):
        branch.encode(regs[:, :1], reg_vis)


# ---------------------------------------------------------------------------
# permutation behavior across the region axis


def nonidentity_perm(k, rng):
    while True:
        perm = rng.permutation(k)
        if not np.array_equal(perm, np.arange(k)):
            return perm


@pytest.mark.parametrize("variant", ["batch", "length"])
def test_equivariant_variants_deviation_below_1e5(variant):
    cfg, branch = variant_branch(variant, k=4)
    rng = Rng(123)
    worst = 0.0
    for trial in range(100):
        _, regs, _, reg_vis, _, _ = toy_batch(cfg, seed=trial)
        perm = nonidentity_perm(4, rng)
        base = run_logits(cfg, branch, regs, reg_vis, seed=trial)
        permuted = run_logits(cfg, branch, regs[:, perm], reg_vis, seed=trial)
        worst = max(worst, float(np.abs(base[:, perm] - permuted).max()))
    assert worst < 1e-5


def test_channel_variant_breaks_equivariance():
    cfg, branch = variant_branch("channel", k=4)
    rng = Rng(321)
    broken = 0
    for trial in range(100):
        _, regs, _, reg_vis, _, _ = toy_batch(cfg, seed=trial)
        perm = nonidentity_perm(4, rng)
        base = run_logits(cfg, branch, regs, reg_vis, seed=trial)
        permuted = run_logits(cfg, branch, regs[:, perm], reg_vis, seed=trial)
        if np.abs(base[:, perm] - permuted).max() > 1e-3:
            broken += 1
    assert broken >= 95


# ---------------------------------------------------------------------------
# loss oracle


def naive_bce(logit, target):
    p = 1.0 / (1.0 + math.exp(-logit))
    p = min(max(p, 1e-12), 1 - 1e-12)
    return -(target * math.log(p) + (1 - target) * math.log(1 - p))


def test_region_loss_matches_naive_bce():
    rng = Rng(0)
    logits = rng.normal((1, 2, 4, 4), dtype=np.float64)
    targets = (rng.uniform((1, 2, 4, 4)) > 0.5).astype(np.float32)
    masked = np.array([[True, False, True, True]])
    got = region_loss(Tensor(logits), targets, masked).data
    vals = [naive_bce(float(logits[0, c, i, j]), float(targets[0, c, i, j]))
            for c in range(2) for i in (0, 2, 3) for j in range(4)]
    assert abs(got - np.mean(vals)) < 1e-6


def test_region_loss_masked_only_ignores_visible():
    rng = Rng(1)
    logits = rng.normal((1, 1, 4, 4))
    targets = (rng.uniform((1, 1, 4, 4)) > 0.5).astype(np.float32)
    masked = np.array([[True, False, True, True]])
    base = region_loss(Tensor(logits), targets, masked).data
    bumped = logits.copy()
    bumped[0, 0, 1] += 10.0  # visible patch
    assert abs(region_loss(Tensor(bumped), targets, masked).data - base) < 1e-7
    full = region_loss(Tensor(bumped), targets, masked, masked_only=False).data
    assert abs(full - base) > 1e-3


# ---------------------------------------------------------------------------
# head prior


@pytest.mark.parametrize("variant", ["channel", "batch", "length"])
def test_head_prior_puts_initial_bce_below_ln2(variant):
    cfg, branch = variant_branch(variant, k=2, seed=5)
    prior = 0.25
    branch.set_head_prior(prior)
    _, regs, _, reg_vis, _, reg_masked = toy_batch(cfg, seed=6, batch=4)
    # targets drawn at the prior rate
    regs = (Rng(7).uniform(regs.shape) < prior).astype(np.float32)
    logits = branch(regs, reg_vis, Tensor(np.zeros((4, cfg.num_patches, cfg.region_dec_dim),
                                                   dtype=np.float32)))
    loss = region_loss(logits, regs, reg_masked).data
    assert loss < math.log(2.0)


def test_head_prior_clamps_degenerate_values():
    _, branch = variant_branch("batch")
    branch.set_head_prior(0.0)
    assert np.all(np.isfinite(branch.head.layers[-1].bias.data))


# ---------------------------------------------------------------------------
# decoder context paths


@pytest.mark.parametrize("variant", ["channel", "batch", "length"])
def test_self_context_shape_and_no_pixel_inputs(variant):
    cfg, branch = variant_branch(variant, k=2)
    _, regs, _, reg_vis, _, _ = toy_batch(cfg, seed=8, batch=2)
    enc = branch.encode(regs, reg_vis)
    ctx = branch.self_context(enc, reg_vis)
    assert ctx.shape == (2, cfg.num_patches, cfg.region_dec_dim)
    # context is a deterministic function of region inputs alone
    ctx2 = branch.self_context(branch.encode(regs, reg_vis), reg_vis)
    assert np.array_equal(ctx.data, ctx2.data)


@pytest.mark.parametrize("variant", ["channel", "batch", "length"])
def test_pixel_feed_shape(variant):
    cfg, branch = variant_branch(variant, k=2)
    _, regs, _, reg_vis, _, _ = toy_batch(cfg, seed=9, batch=2)
    enc = branch.encode(regs, reg_vis)
    feed = branch.pixel_feed(enc, reg_vis)
    assert feed.shape == (2, cfg.num_patches, cfg.dec_dim)


def test_neck_consumes_filled_pixel_features():
    cfg, branch = variant_branch("length", k=2)
    rng = Rng(10)
    Lv = 3
    vis = np.array([[0, 2, 3]])
    feats = Tensor(rng.normal((1, Lv, cfg.enc_dim)))
    filled = branch.fill_pixel_features(feats, vis)
    assert filled.shape == (1, cfg.num_patches, cfg.enc_dim)
    ctx = branch.neck_forward(filled)
    assert ctx.shape == (1, cfg.num_patches, cfg.region_dec_dim)

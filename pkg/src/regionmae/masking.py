"""Patch-level mask sampling and region sampling under the visibility rule.

The image mask is always drawn first; regions are then filtered so that every
sampled region exposes at least one visible foreground patch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Rng
from .blocks import patchify


def round_half_up(x):
    return int(np.floor(x + 0.5))


@dataclass
class MaskPattern:
    masked: np.ndarray  # [n] bool
    ratio: float

    @property
    def n(self):
        return self.masked.shape[0]

    @property
    def visible(self):
        return ~self.masked

    @property
    def visible_indices(self):
        return np.flatnonzero(~self.masked)

    @property
    def masked_indices(self):
        return np.flatnonzero(self.masked)


@dataclass
class RegionBatch:
    patches: np.ndarray  # [k, N, p*p] float32 binary
    region_indices: np.ndarray  # [k] indices into the source RegionSet


def sample_mask(n, beta, rng: Rng) -> MaskPattern:
    if not 0 <= beta < 1:
        raise ValueError(f"mask ratio must be in [0, 1), got {beta}")
    n_masked = round_half_up(n * beta)
    if n_masked >= n and n > 0:
        raise ValueError(f"ratio {beta} leaves no visible patch for n={n}")
    masked = np.zeros(n, dtype=bool)
    perm = rng.permutation(n)
    masked[perm[:n_masked]] = True
    return MaskPattern(masked=masked, ratio=beta)


def nested_mask(n, beta, perm) -> MaskPattern:
    """Mask from a fixed patch permutation: the first round(n*(1-beta)) entries
    are visible. Masks built from one permutation are nested across ratios."""
    n_masked = round_half_up(n * beta)
    if n_masked >= n and n > 0:
        raise ValueError(f"ratio {beta} leaves no visible patch for n={n}")
    masked = np.ones(n, dtype=bool)
    masked[perm[: n - n_masked]] = False
    return MaskPattern(masked=masked, ratio=beta)


def shared_mask(image_mask: MaskPattern) -> MaskPattern:
    """Region-branch mask for the shared case: identical visible set."""
    return MaskPattern(masked=image_mask.masked.copy(), ratio=image_mask.ratio)


def patchify_regions(rs_maps, p):
    """Stack binary region maps into [num_regions, N, p*p] float32 patches."""
    stacked = np.stack([np.asarray(m, dtype=np.float32) for m in rs_maps], axis=0)
    return patchify(stacked[..., None], p)[..., :]


def candidate_pool(region_patches, mask: MaskPattern):
    """Regions with at least one visible foreground patch under the mask."""
    fg_patch = region_patches.max(axis=2) > 0  # [k, N]
    visible_fg = fg_patch[:, mask.visible].any(axis=1)
    return np.flatnonzero(visible_fg)


class EmptyPoolError(RuntimeError):
    """No region has a visible foreground patch; caller should resample."""


def sample_regions(rs, mask: MaskPattern, k, p, rng: Rng) -> RegionBatch:
    """Draw k regions uniformly with replacement from the visible-foreground pool."""
    maps = rs.maps if hasattr(rs, "maps") else list(rs)
    if not maps:
        raise ValueError("empty region set")
    patches = patchify_regions(maps, p)
    pool = candidate_pool(patches, mask)
    if pool.size == 0:
        raise EmptyPoolError("all regions fully hidden under the current mask")
    picks = pool[rng.choice(pool.size, size=k, replace=True)]
    return RegionBatch(patches=patches[picks], region_indices=picks)


def sample_shared_masks_and_regions(rs, n, beta_img, beta_reg, k, p, rng: Rng,
                                    max_resample=8):
    """Full per-sample masking protocol: image mask first, shared region mask
    when ratios match, then region sampling. On an empty candidate pool the
    image mask is redrawn up to `max_resample` times before falling back to
    the full region list."""
    for _ in range(max_resample):
        img_mask = sample_mask(n, beta_img, rng)
        reg_mask = shared_mask(img_mask) if beta_reg == beta_img else sample_mask(n, beta_reg, rng)
        try:
            batch = sample_regions(rs, reg_mask, k, p, rng)
            return img_mask, reg_mask, batch
        except EmptyPoolError:
            continue
    img_mask = sample_mask(n, beta_img, rng)
    reg_mask = shared_mask(img_mask) if beta_reg == beta_img else sample_mask(n, beta_reg, rng)
    maps = rs.maps if hasattr(rs, "maps") else list(rs)
    patches = patchify_regions(maps, p)
    picks = rng.choice(len(maps), size=k, replace=True)
    return img_mask, reg_mask, RegionBatch(patches=patches[picks], region_indices=picks)

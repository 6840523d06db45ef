"""Synthetic shape images with exact ground-truth regions.

Each image is a textured background with 1-4 random rectangles/ellipses in
uniform random colors plus light gaussian noise; the later-drawn shape
occludes earlier ones, and every shape contributes one binary region.
"""

from __future__ import annotations

import numpy as np

from .autograd import Rng
from .config import SynthSpec
from .regions import RegionSet


def _background(size, rng: Rng):
    base = rng.uniform((3,)).astype(np.float32) * 0.5 + 0.25
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    phase = rng.uniform((2,)) * 2 * np.pi
    freq = 0.1 + rng.uniform((2,)) * 0.2
    texture = 0.05 * np.sin(freq[0] * yy + phase[0]) * np.cos(freq[1] * xx + phase[1])
    return np.clip(base[None, None, :] + texture[..., None], 0, 1).astype(np.float32)


def _shape_mask(size, rng: Rng):
    kind = rng.integers(0, 2)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    cy, cx = rng.integers(size // 4, 3 * size // 4, size=2)
    hy = int(rng.integers(size // 5, size // 2))
    hx = int(rng.integers(size // 5, size // 2))
    if kind == 0:
        mask = (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)
    else:
        mask = ((yy - cy) / max(hy, 1)) ** 2 + ((xx - cx) / max(hx, 1)) ** 2 <= 1.0
    return mask


def synth_sample(spec: SynthSpec, rng: Rng):
    """Returns (image [S, S, 3] float32 in [0,1], RegionSet of shape masks)."""
    size = spec.image_size
    img = _background(size, rng)
    n_shapes = int(rng.integers(spec.min_shapes, spec.max_shapes + 1))
    masks = []
    for _ in range(n_shapes):
        mask = _shape_mask(size, rng)
        if not mask.any():
            continue
        color = rng.uniform((3,)).astype(np.float32)
        img[mask] = color
        # earlier shapes lose occluded pixels
        masks = [np.where(mask, 0, m).astype(np.uint8) for m in masks]
        masks.append(mask.astype(np.uint8))
    masks = [m for m in masks if m.any()]
    if not masks:  # degenerate draw; use the full frame as one region
        masks = [np.ones((size, size), dtype=np.uint8)]
    if spec.noise_std > 0:
        img = np.clip(img + rng.normal(img.shape, std=spec.noise_std), 0, 1)
    return img.astype(np.float32), RegionSet(maps=masks, source="external")


def synth_dataset(spec: SynthSpec, seed):
    """Deterministic list of (image, RegionSet) pairs."""
    rng = Rng(seed)
    return [synth_sample(spec, rng) for _ in range(spec.count)]


def foreground_prior(samples, patch):
    """Mean foreground fraction of region patch targets across a dataset."""
    total, count = 0.0, 0
    for _, rs in samples:
        for m in rs.maps:
            total += float(np.asarray(m, dtype=np.float64).mean())
            count += 1
    return total / max(count, 1)

"""Interactive region completion from user prompts.

A prompt marks one patch as certain foreground (content all ones) or certain
background (all zeros); every unprompted patch is masked. This mirrors the
pre-training distribution of visible binary region patches, so clicks act as
visible patches of the region being completed.
"""

from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .masking import MaskPattern
from .model import RegionMae


class PromptError(ValueError):
    pass


def normalize_prompts(prompts, n):
    """Validate and dedupe (patch, label) pairs; last write wins."""
    by_patch = {}
    for item in prompts:
        patch = int(item["patch"]) if isinstance(item, dict) else int(item[0])
        label = item["label"] if isinstance(item, dict) else item[1]
        if not 0 <= patch < n:
            raise PromptError(f"patch index {patch} out of range [0, {n})")
        if label not in ("fg", "bg"):
            raise PromptError(f"label must be 'fg' or 'bg', got {label!r}")
        by_patch[patch] = label
    if not by_patch:
        raise PromptError("at least one prompt is required")
    return sorted(by_patch.items())


def prompts_to_region_inputs(prompts, cfg: ModelConfig):
    """-> (region patch contents [N, p*p], region MaskPattern)."""
    n = cfg.num_patches
    pairs = normalize_prompts(prompts, n)
    patches = np.zeros((n, cfg.patch**2), dtype=np.float32)
    masked = np.ones(n, dtype=bool)
    for patch, label in pairs:
        masked[patch] = False
        if label == "fg":
            patches[patch] = 1.0
    return patches, MaskPattern(masked=masked, ratio=1.0 - len(pairs) / n)


def complete_from_prompts(model: RegionMae, image, prompts, threshold=0.5):
    """-> dict with 'probs' and 'binary' grids of shape [N, p*p]."""
    from .trainer import complete_region_probs

    patches, mask = prompts_to_region_inputs(prompts, model.cfg)
    probs = complete_region_probs(model, image, patches, mask)
    return {
        "probs": probs.astype(np.float64),
        "binary": (probs >= threshold).astype(np.int64),
        "threshold": threshold,
    }

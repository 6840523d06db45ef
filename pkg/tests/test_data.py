"""Synthetic dataset: determinism, value ranges, region/occlusion geometry."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regionmae.autograd import Rng
from regionmae.config import SynthSpec
from regionmae.data import foreground_prior, synth_dataset, synth_sample


def test_dataset_deterministic_and_sized():
    spec = SynthSpec(count=8)
    a = synth_dataset(spec, seed=5)
    b = synth_dataset(spec, seed=5)
    assert len(a) == 8
    for (ia, ra), (ib, rb) in zip(a, b):
        assert np.array_equal(ia, ib)
        assert len(ra.maps) == len(rb.maps)
        for ma, mb in zip(ra.maps, rb.maps):
            assert np.array_equal(ma, mb)
    c = synth_dataset(spec, seed=6)
    assert not np.array_equal(a[0][0], c[0][0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_sample_invariants(seed):
    spec = SynthSpec()
    img, rs = synth_sample(spec, Rng(seed))
    assert img.shape == (32, 32, 3) and img.dtype == np.float32
    assert img.min() >= 0.0 and img.max() <= 1.0
    assert 1 <= len(rs.maps) <= spec.max_shapes
    cover = sum(np.asarray(m, dtype=np.int64) for m in rs.maps)
    # occlusion resolves overlaps: region maps are pairwise disjoint
    assert cover.max() <= 1
    for m in rs.maps:
        assert m.any()


def test_shape_count_respects_spec_bounds():
    spec = SynthSpec(min_shapes=2, max_shapes=2)
    rng = Rng(0)
    for _ in range(20):
        _, rs = synth_sample(spec, rng)
        assert len(rs.maps) <= 2


def test_noise_disabled_gives_piecewise_flat_shapes():
    spec = SynthSpec(noise_std=0.0)
    rng = Rng(3)
    img, rs = synth_sample(spec, rng)
    top = rs.maps[-1].astype(bool)  # last shape is never occluded
    vals = img[top]
    assert np.allclose(vals, vals[0], atol=1e-6)


def test_noise_increases_within_shape_variance():
    img_q, rs = synth_sample(SynthSpec(noise_std=0.0), Rng(7))
    img_n, _ = synth_sample(SynthSpec(noise_std=0.05), Rng(7))
    top = rs.maps[-1].astype(bool)
    # per-channel spread: a flat shape has none, a noisy one does
    assert img_n[top][:, 0].std() > img_q[top][:, 0].std() + 0.005


def test_foreground_prior_in_plausible_range():
    samples = synth_dataset(SynthSpec(count=64), seed=0)
    prior = foreground_prior(samples, patch=4)
    assert 0.05 < prior < 0.6


def test_foreground_prior_oracle_small_case():
    m1 = np.zeros((4, 4), dtype=np.uint8)
    m1[:2] = 1  # mean 0.5
    m2 = np.zeros((4, 4), dtype=np.uint8)
    m2[0, 0] = 1  # mean 1/16
    from regionmae.regions import RegionSet
    samples = [(None, RegionSet(maps=[m1, m2]))]
    assert abs(foreground_prior(samples, 2) - (0.5 + 1 / 16) / 2) < 1e-12

"""Desk-scale masked region autoencoding with an interactive completion service."""

from .autograd import Rng, Tensor, grad_check
from .config import ModelConfig, SynthSpec, TrainConfig, preset
from .flops import FlopsReport, flops_estimate
from .model import RegionMae

__all__ = [
    "Rng", "Tensor", "grad_check",
    "ModelConfig", "SynthSpec", "TrainConfig", "preset",
    "FlopsReport", "flops_estimate",
    "RegionMae",
]

"""AdamW with decoupled weight decay, plus the warmup+cosine schedule."""

from __future__ import annotations

import math

import numpy as np

from .config import TrainConfig


def lr_at(step, cfg: TrainConfig):
    """Linear warmup from 0 to peak_lr, then half-cosine decay to 0."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    peak = cfg.peak_lr
    if step < cfg.warmup_steps:
        return peak * step / cfg.warmup_steps
    frac = (step - cfg.warmup_steps) / max(1, cfg.total_steps - cfg.warmup_steps)
    return peak * 0.5 * (1.0 + math.cos(math.pi * frac))


class AdamW:
    def __init__(self, params, cfg: TrainConfig):
        self.params = list(params)
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def clip_grads(self, max_norm):
        total = 0.0
        for p in self.params:
            if p.grad is not None:
                total += float((p.grad.astype(np.float64) ** 2).sum())
        norm = math.sqrt(total)
        if norm > max_norm > 0:
            scale = max_norm / (norm + 1e-12)
            for p in self.params:
                if p.grad is not None:
                    p.grad = p.grad * scale
        return norm

    def step(self, lr):
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + 1e-8)
            p.data = p.data * (1.0 - lr * cfg.weight_decay) - lr * update

    def state_dict(self):
        return {"t": self.t, "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v]}

    def load_state_dict(self, state):
        self.t = state["t"]
        self.m = [np.asarray(m, dtype=np.float32) for m in state["m"]]
        self.v = [np.asarray(v, dtype=np.float32) for v in state["v"]]

"""Transformer building blocks shared by the pixel and region branches.

All blocks are set operations along the sequence axis: permuting input rows
permutes output rows identically. Positional information enters only through
the fixed 2D sin-cos embeddings added outside the blocks.
"""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Rng, ShapeError, Tensor


class Module:
    """Parameter container; children are discovered by attribute walking."""

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(prefix=path + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{path}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{path}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


class Linear(Module):
    def __init__(self, d_in, d_out, rng: Rng, bias=True, std=None):
        if std is None:
            # xavier scale keeps activation variance stable through depth
            std = math.sqrt(2.0 / (d_in + d_out))
        self.weight = Tensor(rng.normal((d_in, d_out), std=std), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out, dtype=np.float32), requires_grad=True) if bias else None

    def __call__(self, x):
        out = ag.matmul(x, self.weight)
        if self.bias is not None:
            out = ag.add(out, self.bias)
        return out


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-6):
        self.gain = Tensor(np.ones(dim, dtype=np.float32), requires_grad=True)
        self.shift = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        return ag.layernorm(x, self.gain, self.shift, eps=self.eps)


class Mlp(Module):
    """Feed-forward: linear -> gelu -> linear."""

    def __init__(self, dim, hidden, rng):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def __call__(self, x):
        return self.fc2(ag.gelu(self.fc1(x)))


class MlpHead(Module):
    """Position-wise MLP applied over the last axis: gelu between hidden layers."""

    def __init__(self, dims, rng):
        if len(dims) < 2:
            raise ValueError("MlpHead needs at least input and output dims")
        self.layers = [Linear(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]

    def __call__(self, x):
        for layer in self.layers[:-1]:
            x = ag.gelu(layer(x))
        return self.layers[-1](x)


def _split_heads(x, heads):
    # [..., L, D] -> [..., H, L, D/H]
    *lead, L, D = x.shape
    x = ag.reshape(x, (*lead, L, heads, D // heads))
    return ag.transpose(x, -3, -2)


def _merge_heads(x):
    # [..., H, L, dh] -> [..., L, H*dh]
    x = ag.transpose(x, -3, -2)
    *lead, L, H, dh = x.shape
    return ag.reshape(x, (*lead, L, H * dh))


class Attention(Module):
    """Scaled dot-product attention; self- or cross- depending on context arg."""

    def __init__(self, dim, heads, rng):
        if dim % heads != 0:
            raise ShapeError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.scale = 1.0 / math.sqrt(dim // heads)
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.last_weights = None  # head-averaged softmax rows, for inspection

    def __call__(self, x, context=None, record=False):
        ctx = x if context is None else context
        if ctx.shape[-1] != x.shape[-1]:
            raise ShapeError(f"attention dim mismatch: {x.shape} vs {ctx.shape}")
        q = _split_heads(self.q(x), self.heads)
        k = _split_heads(self.k(ctx), self.heads)
        v = _split_heads(self.v(ctx), self.heads)
        logits = ag.smul(ag.matmul(q, ag.transpose(k, -1, -2)), self.scale)
        weights = ag.softmax(logits)
        if record:
            self.last_weights = weights.data.mean(axis=-3)  # average over heads
        out = _merge_heads(ag.matmul(weights, v))
        return self.proj(out)


class SelfAttnBlock(Module):
    """Pre-norm ViT block: x + Attn(LN(x)), then + MLP(LN(.))."""

    def __init__(self, dim, heads, rng, mlp_ratio=4):
        self.norm1 = LayerNorm(dim)
        self.attn = Attention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, dim * mlp_ratio, rng)

    def __call__(self, x, record=False):
        x = ag.add(x, self.attn(self.norm1(x), record=record))
        return ag.add(x, self.mlp(self.norm2(x)))


class CrossAttnBlock(Module):
    """Three sub-layers: self-attention, cross-attention, feed-forward."""

    def __init__(self, dim, heads, rng, mlp_ratio=4):
        self.norm1 = LayerNorm(dim)
        self.self_attn = Attention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.norm_ctx = LayerNorm(dim)
        self.cross_attn = Attention(dim, heads, rng)
        self.norm3 = LayerNorm(dim)
        self.mlp = Mlp(dim, dim * mlp_ratio, rng)

    def __call__(self, q, ctx):
        q = ag.add(q, self.self_attn(self.norm1(q)))
        q = ag.add(q, self.cross_attn(self.norm2(q), context=self.norm_ctx(ctx)))
        return ag.add(q, self.mlp(self.norm3(q)))


class ExpandingCrossAttn(Module):
    """Query expansion: each query row is summed onto every transformed context row.

    out[i, n, :] = ctx[n, :] @ W + q[i, :], giving a [k, N, dim] map from k
    queries and N context tokens. Affine in q by construction.
    """

    def __init__(self, dim, rng):
        self.weight = Tensor(rng.normal((dim, dim), std=0.02), requires_grad=True)

    def __call__(self, q, ctx):
        proj = ag.matmul(ctx, self.weight)  # [..., N, D]
        *lead, k, d = q.shape
        n = proj.shape[-2]
        proj_b = ag.broadcast_to(ag.reshape(proj, (*lead, 1, n, d)), (*lead, k, n, d))
        q_b = ag.broadcast_to(ag.reshape(q, (*lead, k, 1, d)), (*lead, k, n, d))
        return ag.add(proj_b, q_b)


# ---------------------------------------------------------------------------
# tokenization and positions


def patchify(image, p):
    """[H, W, C] (or [B, H, W, C]) -> [N, p*p*C] rows in row-major patch order."""
    img = np.asarray(image)
    batched = img.ndim == 4
    if not batched:
        img = img[None]
    B, H, W, C = img.shape
    if H % p or W % p:
        raise ShapeError(f"image {H}x{W} not divisible by patch size {p}")
    gh, gw = H // p, W // p
    x = img.reshape(B, gh, p, gw, p, C).transpose(0, 1, 3, 2, 4, 5).reshape(B, gh * gw, p * p * C)
    return x if batched else x[0]


def unpatchify(tokens, p, H, W, C):
    t = np.asarray(tokens)
    batched = t.ndim == 3
    if not batched:
        t = t[None]
    B = t.shape[0]
    gh, gw = H // p, W // p
    img = t.reshape(B, gh, gw, p, p, C).transpose(0, 1, 3, 2, 4, 5).reshape(B, H, W, C)
    return img if batched else img[0]


class PatchEmbed(Module):
    def __init__(self, p, in_chans, dim, rng):
        self.p = p
        self.in_chans = in_chans
        self.proj = Linear(p * p * in_chans, dim, rng)

    def __call__(self, image):
        tokens = patchify(image, self.p)
        return self.proj(Tensor(tokens))


def sincos_pos_embed_2d(grid_h, grid_w, dim):
    """Fixed 2D sin-cos position table, [grid_h*grid_w, dim]; dim % 4 == 0."""
    if dim % 4 != 0:
        raise ShapeError(f"pos embed dim {dim} must be divisible by 4")
    half = dim // 2

    def axis_embed(positions):
        omega = np.arange(half // 2, dtype=np.float64) / (half / 2.0)
        omega = 1.0 / (10000.0**omega)
        angles = np.outer(positions, omega)
        return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)

    ys, xs = np.meshgrid(np.arange(grid_h), np.arange(grid_w), indexing="ij")
    emb = np.concatenate([axis_embed(ys.reshape(-1)), axis_embed(xs.reshape(-1))], axis=1)
    return emb.astype(np.float32)


class MaskToken(Module):
    """One learnable fill vector per consumer."""

    def __init__(self, dim, rng):
        self.vector = Tensor(rng.normal((dim,), std=0.02), requires_grad=True)


def mask_fill(visible, visible_indices, token: MaskToken, pos=None, n=None):
    """Scatter visible rows back to their positions, fill the rest with the
    mask token, then add the position table (when given) to all rows."""
    if pos is None and n is None:
        raise ValueError("mask_fill needs a position table or an explicit row count")
    n = pos.shape[0] if pos is not None else n
    idx = np.asarray(visible_indices)
    if idx.shape != visible.shape[:-1]:
        raise ShapeError(f"mask_fill: {idx.shape} indices vs visible rows {visible.shape[:-1]}")
    filled = ag.scatter_rows(visible, idx, token.vector, n)
    if pos is not None:
        filled = ag.add(filled, Tensor(pos))
    return filled

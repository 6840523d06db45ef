"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap flat numpy buffers (f32 by default, f64 available for tight
gradient checks). Every op appends a backward closure; `backward()` walks the
graph in reverse topological order and accumulates gradients by sum.

Broadcasting is restricted to leading-axis expansion: two shapes are
compatible iff the shorter one equals a suffix of the longer one. This rules
out silent size-1 stretching inside attention code.
"""

from __future__ import annotations

import json
import math

import numpy as np
from scipy.special import erf, expit

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    pass


def _check_suffix_broadcast(sa, sb):
    """Allow only equal shapes or one shape being a suffix of the other."""
    short, long_ = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if tuple(long_[len(long_) - len(short):]) != tuple(short):
        raise ShapeError(f"shapes {sa} and {sb} not compatible under leading-axis broadcasting")


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (leading axes were expanded)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


class Tensor:
    """N-dimensional array node on the differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, dtype=np.float32, name=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numel(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(())[()])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def backward(self):
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar loss, got shape {self.shape}")
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    # convenience operators, all routed through the op functions below
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return smul(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return smul(self, -1.0)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward, requires_grad=None):
    out = Tensor(data)
    if requires_grad is None:
        requires_grad = any(p.requires_grad for p in parents)
    out.requires_grad = requires_grad
    if requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# elementwise / arithmetic


def add(a, b):
    _check_suffix_broadcast(a.shape, b.shape)
    data = a.data + b.data

    def bwd(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(g, b.shape))

    return _make(data, (a, b), bwd)


def sub(a, b):
    _check_suffix_broadcast(a.shape, b.shape)
    data = a.data - b.data

    def bwd(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(-_unbroadcast(g, b.shape))

    return _make(data, (a, b), bwd)


def mul(a, b):
    _check_suffix_broadcast(a.shape, b.shape)
    data = a.data * b.data

    def bwd(g):
        a._accum(_unbroadcast(g * b.data, a.shape))
        b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), bwd)


def smul(a, s):
    s = float(s)
    data = a.data * s

    def bwd(g):
        a._accum(g * s)

    return _make(data, (a,), bwd)


def gelu(x):
    """Exact gelu: x * Phi(x)."""
    xd = x.data
    phi_cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    data = xd * phi_cdf

    def bwd(g):
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT2PI
        x._accum(g * (phi_cdf + xd * pdf))

    return _make(data, (x,), bwd)


def sigmoid(x):
    data = 1.0 / (1.0 + np.exp(-x.data))

    def bwd(g):
        x._accum(g * data * (1.0 - data))

    return _make(data, (x,), bwd)


def softmax(x):
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        x._accum(data * (g - dot))

    return _make(data, (x,), bwd)


def layernorm(x, gain, bias, eps=1e-6):
    """Layer norm over the last axis with learnable scale/shift."""
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError(f"layernorm params {gain.shape}/{bias.shape} vs input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = gain.data * xhat + bias.data

    def bwd(g):
        n = x.shape[-1]
        gg = g * gain.data
        gain._accum(_unbroadcast(g * xhat, gain.shape))
        bias._accum(_unbroadcast(g, bias.shape))
        m1 = gg.mean(axis=-1, keepdims=True)
        m2 = (gg * xhat).mean(axis=-1, keepdims=True)
        x._accum((gg - m1 - xhat * m2) * inv)

    return _make(data, (x, gain, bias), bwd)


def binary_cross_entropy_with_logits(logits, targets):
    """Stable elementwise BCE; `targets` is treated as a constant."""
    z = logits.data
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=z.dtype)
    if t.shape != z.shape:
        raise ShapeError(f"bce shapes {z.shape} vs {t.shape}")
    data = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))

    def bwd(g):
        logits._accum(g * (expit(z) - t))

    return _make(data, (logits,), bwd)


# ---------------------------------------------------------------------------
# matmul


def matmul(a, b):
    if a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def bwd(g):
        bt = np.swapaxes(b.data, -1, -2)
        at = np.swapaxes(a.data, -1, -2)
        ga = np.matmul(g, bt)
        gb = np.matmul(at, g)
        a._accum(_unbroadcast(ga, a.shape))
        b._accum(_unbroadcast(gb, b.shape))

    return _make(data, (a, b), bwd)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x, shape):
    shape = tuple(shape)
    data = x.data.reshape(shape)
    old = x.shape

    def bwd(g):
        x._accum(g.reshape(old))

    return _make(data, (x,), bwd)


def transpose(x, ax0, ax1):
    data = np.swapaxes(x.data, ax0, ax1)

    def bwd(g):
        x._accum(np.swapaxes(g, ax0, ax1))

    return _make(data, (x,), bwd)


def broadcast_to(x, shape):
    shape = tuple(shape)
    data = np.broadcast_to(x.data, shape).copy()
    # record which axes were expanded so backward can reduce them
    pad = len(shape) - x.data.ndim
    reduce_axes = tuple(range(pad)) + tuple(
        pad + i for i, d in enumerate(x.data.shape) if d == 1 and shape[pad + i] != 1
    )
    old = x.shape

    def bwd(g):
        x._accum(g.sum(axis=reduce_axes).reshape(old) if reduce_axes else g)

    return _make(data, (x,), bwd)


def concat(tensors, axis):
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def bwd(g):
        offset = 0
        for t, sz in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + sz)
            t._accum(g[tuple(idx)])
            offset += sz

    return _make(data, tuple(tensors), bwd)


def narrow(x, axis, start, length):
    if start < 0 or start + length > x.shape[axis]:
        raise ShapeError(f"narrow [{start}:{start + length}] out of range for axis {axis} of {x.shape}")
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = x.data[idx].copy()

    def bwd(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        x._accum(full)

    return _make(data, (x,), bwd)


def gather_rows(x, indices):
    """Select rows along axis -2 by per-batch index.

    x: [..., N, D], indices: int array broadcastable to x's leading dims with a
    trailing row-count axis, e.g. x [B, N, D] and indices [B, L] -> [B, L, D].
    """
    idx = np.asarray(indices)
    data = np.take_along_axis(x.data, idx[..., None], axis=-2)

    def bwd(g):
        full = np.zeros_like(x.data)
        bidx = np.broadcast_to(idx[..., None], g.shape)
        np.add.at(full, _along_axis_index(full.shape, bidx), g)
        x._accum(full)

    return _make(data, (x,), bwd)


def _along_axis_index(shape, idx):
    """Build a fancy index equivalent to put_along_axis(axis=-2) with add."""
    grids = list(np.meshgrid(*[np.arange(s) for s in idx.shape], indexing="ij"))
    grids[-2] = idx
    return tuple(grids)


def scatter_rows(visible, indices, fill, n_rows):
    """Inverse of gather_rows: place rows back at `indices`, fill the rest.

    visible: [..., L, D]; indices: [..., L]; fill: [D] vector used for every
    row not listed in indices. Output: [..., n_rows, D].
    """
    idx = np.asarray(indices)
    if idx.shape != visible.shape[:-1]:
        raise ShapeError(f"scatter indices {idx.shape} vs visible rows {visible.shape[:-1]}")
    out_shape = visible.shape[:-2] + (n_rows, visible.shape[-1])
    data = np.broadcast_to(fill.data, out_shape).copy()
    np.put_along_axis(data, idx[..., None], visible.data, axis=-2)

    def bwd(g):
        gv = np.take_along_axis(g, idx[..., None], axis=-2)
        visible._accum(gv)
        lead = tuple(range(g.ndim - 1))
        fill._accum(g.sum(axis=lead) - gv.sum(axis=lead))

    return _make(data, (visible, fill), bwd)


# ---------------------------------------------------------------------------
# reductions


def mean(x, axis=None):
    data = x.data.mean(axis=axis, keepdims=False)
    n = x.data.size if axis is None else x.shape[axis]

    def bwd(g):
        if axis is None:
            x._accum(np.full_like(x.data, g / n))
        else:
            x._accum(np.broadcast_to(np.expand_dims(g, axis) / n, x.shape).copy())

    return _make(np.asarray(data), (x,), bwd)


def sum_(x, axis=None):
    data = x.data.sum(axis=axis, keepdims=False)

    def bwd(g):
        if axis is None:
            x._accum(np.full_like(x.data, g))
        else:
            x._accum(np.broadcast_to(np.expand_dims(g, axis), x.shape).copy())

    return _make(np.asarray(data), (x,), bwd)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, x, h=1e-3, floor=1e-8, sample=None, seed=0):
    """Max relative error between analytic and central-difference gradients.

    f must be a deterministic scalar function of a single tensor. The relative
    error per coordinate is |analytic - numeric| / max(floor, |analytic| + |numeric|).
    The default floor of 1e-8 is meaningful only when the loss magnitude is
    well below 1; for unit-scale losses pass a floor above the central
    difference noise eps*|f|/h so exact-zero gradients do not dominate.
    `sample` restricts the check to that many randomly chosen coordinates.
    """
    x.data = np.ascontiguousarray(x.data)
    x.zero_grad()
    out = f(x)
    out.backward()
    analytic = x.grad.reshape(-1).copy() if x.grad is not None else np.zeros(x.data.size)

    flat = x.data.reshape(-1)
    if sample is not None and sample < flat.size:
        coords = np.random.Generator(np.random.PCG64(seed)).choice(flat.size, size=sample,
                                                                   replace=False)
    else:
        coords = np.arange(flat.size)
    numeric = np.zeros(coords.size, dtype=np.float64)
    for j, i in enumerate(coords):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x).item()
        flat[i] = orig - h
        fm = f(x).item()
        flat[i] = orig
        numeric[j] = (fp - fm) / (2.0 * h)

    analytic = analytic[coords]
    denom = np.maximum(floor, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


# ---------------------------------------------------------------------------
# seeded randomness


class Rng:
    """Seedable PRNG; identical seed gives identical draws on every platform."""

    def __init__(self, seed):
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def normal(self, shape, std=1.0, dtype=np.float32):
        return self._gen.standard_normal(size=shape).astype(dtype) * dtype(std)

    def uniform(self, shape=None, dtype=np.float32):
        out = self._gen.random(size=shape)
        return out.astype(dtype) if shape is not None else float(out)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size, replace=True):
        return self._gen.choice(n, size=size, replace=replace)

    def spawn(self):
        """Derive an independent child stream deterministically."""
        return Rng(int(self._gen.integers(0, 2**63 - 1)))

    def state(self):
        return self._gen.bit_generator.state

    def set_state(self, state):
        self._gen.bit_generator.state = state


# ---------------------------------------------------------------------------
# serialization: JSON header line + little-endian f32 blob


def write_tensor_blob(fh, name, array):
    arr = np.asarray(array, dtype="<f4")
    header = json.dumps({"shape": list(arr.shape), "name": name})
    fh.write(header.encode("utf-8") + b"\n")
    fh.write(arr.tobytes(order="C"))


def read_tensor_blob(fh):
    """Read one (name, array) record; returns None at EOF."""
    line = fh.readline()
    if not line:
        return None
    header = json.loads(line.decode("utf-8"))
    shape = tuple(header["shape"])
    count = int(np.prod(shape)) if shape else 1
    raw = fh.read(count * 4)
    if len(raw) != count * 4:
        raise IOError(f"truncated tensor blob for {header.get('name')!r} at offset {fh.tell()}")
    arr = np.frombuffer(raw, dtype="<f4", count=count).reshape(shape)
    return header["name"], arr.astype(np.float32)

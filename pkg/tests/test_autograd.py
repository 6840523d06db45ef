"""Engine-level tests: ops against finite differences and numpy oracles."""

import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regionmae import autograd as ag
from regionmae.autograd import (Rng, ShapeError, Tensor, grad_check,
                                read_tensor_blob, write_tensor_blob)


def t64(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


def rand64(rng, shape):
    return t64(rng.normal(shape, dtype=np.float64))


# ---------------------------------------------------------------------------
# forward values against numpy


def test_add_mul_forward():
    a = Tensor([1.0, 2.0])
    b = Tensor([3.0, 4.0])
    assert np.allclose(ag.add(a, b).data, [4, 6])
    assert np.allclose(ag.mul(a, b).data, [3, 8])
    assert np.allclose(ag.smul(a, 2.5).data, [2.5, 5])


def test_suffix_broadcast_rules():
    a = Tensor(np.zeros((2, 3, 4)))
    b = Tensor(np.zeros((3, 4)))
    assert ag.add(a, b).shape == (2, 3, 4)
    with pytest.raises(ShapeError):
        ag.add(Tensor(np.zeros((2, 3, 4))), Tensor(np.zeros((2, 4))))
    with pytest.raises(ShapeError):
        ag.add(Tensor(np.zeros((4, 3))), Tensor(np.zeros((4, 1))))


def test_softmax_matches_numpy():
    x = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]])
    got = ag.softmax(Tensor(x)).data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    assert np.allclose(got, e / e.sum(axis=-1, keepdims=True))
    assert np.allclose(got.sum(axis=-1), 1.0)


def test_softmax_extreme_logits_stable():
    x = Tensor(np.array([1e4, 0.0, -1e4]))
    out = ag.softmax(x).data
    assert np.all(np.isfinite(out))
    assert abs(out.sum() - 1.0) < 1e-6


def test_gelu_reference_points():
    # gelu(0) = 0, gelu(x) -> x for large x, -> 0 for very negative x
    x = Tensor(np.array([0.0, 10.0, -10.0, 1.0]))
    out = ag.gelu(x).data
    assert out[0] == 0.0
    assert abs(out[1] - 10.0) < 1e-6
    assert abs(out[2]) < 1e-6
    phi = 0.5 * (1 + math.erf(1 / math.sqrt(2)))
    assert abs(out[3] - phi) < 1e-6


def test_layernorm_stats():
    rng = Rng(0)
    x = rand64(rng, (4, 6))
    gain = t64(np.ones(6))
    bias = t64(np.zeros(6))
    out = ag.layernorm(x, gain, bias).data
    assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-9)
    assert np.allclose(out.var(axis=-1), 1.0, atol=1e-4)


def test_bce_matches_naive_formula():
    z = np.array([-3.0, -0.5, 0.0, 0.5, 3.0])
    t = np.array([0.0, 1.0, 0.5, 0.0, 1.0])
    got = ag.binary_cross_entropy_with_logits(Tensor(z), Tensor(t)).data
    p = 1 / (1 + np.exp(-z))
    naive = -(t * np.log(p) + (1 - t) * np.log(1 - p))
    assert np.allclose(got, naive, atol=1e-9)


def test_bce_extreme_logits_finite():
    z = Tensor(np.array([1e3, -1e3]), requires_grad=True)
    out = ag.binary_cross_entropy_with_logits(z, Tensor(np.array([0.0, 1.0])))
    assert np.all(np.isfinite(out.data))
    ag.sum_(out).backward()
    assert np.all(np.isfinite(z.grad))


def test_matmul_shapes_and_mismatch():
    a = Tensor(np.zeros((2, 3, 4)))
    b = Tensor(np.zeros((4, 5)))
    assert ag.matmul(a, b).shape == (2, 3, 5)
    with pytest.raises(ShapeError):
        ag.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_gather_scatter_roundtrip():
    rng = Rng(1)
    x = rand64(rng, (2, 5, 3))
    idx = np.array([[0, 2, 4], [1, 3, 4]])
    g = ag.gather_rows(x, idx)
    assert g.shape == (2, 3, 3)
    assert np.allclose(g.data[0, 1], x.data[0, 2])
    fill = t64(np.zeros(3))
    back = ag.scatter_rows(g, idx, fill, 5)
    for b in range(2):
        for j, i in enumerate(idx[b]):
            assert np.allclose(back.data[b, i], x.data[b, idx[b][j]])


def test_scatter_fill_rows_get_fill_vector():
    x = t64(np.ones((1, 2, 3)))
    fill = t64(np.array([7.0, 8.0, 9.0]))
    out = ag.scatter_rows(x, np.array([[0, 2]]), fill, 4)
    assert np.allclose(out.data[0, 1], [7, 8, 9])
    assert np.allclose(out.data[0, 3], [7, 8, 9])


def test_narrow_out_of_range():
    x = Tensor(np.zeros((3, 4)))
    with pytest.raises(ShapeError):
        ag.narrow(x, 1, 2, 3)


def test_backward_requires_scalar():
    x = Tensor(np.zeros((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        x.backward()


def test_grad_accumulation_over_reuse():
    # f = x*x + x -> df/dx = 2x + 1; the same node is a parent twice
    x = t64(np.array([3.0]))
    y = ag.add(ag.mul(x, x), x)
    y.backward()
    assert np.allclose(x.grad, [7.0])


def test_detach_blocks_gradient():
    x = t64(np.array([2.0]))
    y = ag.mul(x.detach(), x)
    y.backward()
    assert np.allclose(x.grad, [2.0])  # only the non-detached path contributes


# ---------------------------------------------------------------------------
# gradients against central differences (f64, fixed closures)

OPS = {
    "add": lambda x, w: ag.sum_(ag.mul(ag.add(x, w), ag.add(x, w))),
    "sub": lambda x, w: ag.sum_(ag.mul(ag.sub(x, w), ag.sub(x, w))),
    "mul": lambda x, w: ag.sum_(ag.mul(x, w)),
    "gelu": lambda x, w: ag.sum_(ag.mul(ag.gelu(x), w)),
    "sigmoid": lambda x, w: ag.sum_(ag.mul(ag.sigmoid(x), w)),
    "softmax": lambda x, w: ag.sum_(ag.mul(ag.softmax(x), w)),
    "matmul": lambda x, w: ag.sum_(ag.matmul(x, w)),
    "mean": lambda x, w: ag.mul(ag.mean(x), ag.mean(w)),
    "reshape": lambda x, w: ag.sum_(ag.mul(ag.reshape(x, (6,)), ag.reshape(w, (6,)))),
    "transpose": lambda x, w: ag.sum_(ag.mul(ag.transpose(x, 0, 1), ag.transpose(w, 0, 1))),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    rng = Rng(hash(name) % 2**31)
    x = rand64(rng, (2, 3))
    w = rand64(rng, (3, 3) if name == "matmul" else (2, 3), )
    w.requires_grad = False
    f = OPS[name]
    err = grad_check(lambda t: f(t, w), x, h=1e-6)
    assert err < 1e-4, f"{name}: {err}"


def test_sum_of_squares_grad_error_small():
    rng = Rng(7)
    x = rand64(rng, (4, 3))
    err = grad_check(lambda t: ag.sum_(ag.mul(t, t)), x, h=1e-6)
    assert err < 1e-4


def test_layernorm_gradients():
    rng = Rng(3)
    x = rand64(rng, (2, 5))
    gain = t64(rng.normal((5,), dtype=np.float64))
    bias = t64(rng.normal((5,), dtype=np.float64))
    w = rng.normal((2, 5), dtype=np.float64)
    for target in (x, gain, bias):
        err = grad_check(
            lambda t: ag.sum_(ag.mul(ag.layernorm(x, gain, bias), Tensor(w))), target, h=1e-6)
        assert err < 1e-4


def test_bce_gradients():
    rng = Rng(4)
    z = rand64(rng, (3, 4))
    t = (rng.uniform((3, 4)) > 0.5).astype(np.float64)
    err = grad_check(
        lambda q: ag.sum_(ag.binary_cross_entropy_with_logits(q, Tensor(t))), z, h=1e-6)
    assert err < 1e-4


def test_gather_scatter_broadcast_gradients():
    rng = Rng(5)
    idx = np.array([[0, 2], [1, 3]])
    x = rand64(rng, (2, 4, 3))
    w = rng.normal((2, 2, 3), dtype=np.float64)
    err = grad_check(lambda t: ag.sum_(ag.mul(ag.gather_rows(t, idx), Tensor(w))), x, h=1e-6)
    assert err < 1e-4
    v = rand64(rng, (2, 2, 3))
    fill = t64(rng.normal((3,), dtype=np.float64))
    w2 = rng.normal((2, 4, 3), dtype=np.float64)
    for target in (v, fill):
        err = grad_check(
            lambda t: ag.sum_(ag.mul(ag.scatter_rows(v, idx, fill, 4), Tensor(w2))),
            target, h=1e-6)
        assert err < 1e-4
    b = rand64(rng, (3,))
    w3 = rng.normal((2, 4, 3), dtype=np.float64)
    err = grad_check(
        lambda t: ag.sum_(ag.mul(ag.broadcast_to(t, (2, 4, 3)), Tensor(w3))), b, h=1e-6)
    assert err < 1e-4


def test_random_three_op_graphs():
    for seed in range(10):
        rng = Rng(seed)
        x = rand64(rng, (3, 3))
        w1 = Tensor(rng.normal((3, 3), dtype=np.float64))
        w2 = Tensor(rng.normal((3, 3), dtype=np.float64))

        def f(t):
            h = ag.gelu(ag.matmul(t, w1))
            h = ag.softmax(ag.add(h, w2))
            return ag.sum_(ag.mul(h, h))

        assert grad_check(f, x, h=1e-6) < 1e-3


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_softmax_rows_always_sum_to_one(seed):
    rng = Rng(seed)
    x = Tensor(rng.normal((3, 5), std=5.0))
    assert np.allclose(ag.softmax(x).data.sum(axis=-1), 1.0, atol=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 4), st.integers(1, 6))
def test_mean_sum_consistency(seed, rows, cols):
    rng = Rng(seed)
    x = Tensor(rng.normal((rows, cols)))
    assert abs(ag.mean(x).item() - ag.sum_(x).item() / (rows * cols)) < 1e-5


# ---------------------------------------------------------------------------
# rng


def test_rng_determinism_and_independence():
    a, b = Rng(42), Rng(42)
    assert np.array_equal(a.normal((5,)), b.normal((5,)))
    assert np.array_equal(a.permutation(10), b.permutation(10))
    c = Rng(43)
    assert not np.array_equal(Rng(42).normal((5,)), c.normal((5,)))


def test_rng_state_roundtrip():
    r = Rng(7)
    r.normal((3,))
    state = r.state()
    x = r.uniform((4,))
    r2 = Rng(0)
    r2.set_state(state)
    assert np.array_equal(r2.uniform((4,)), x)


def test_rng_spawn_differs_from_parent():
    r = Rng(9)
    child = r.spawn()
    assert not np.array_equal(r.normal((4,)), child.normal((4,)))


# ---------------------------------------------------------------------------
# serialization


def test_tensor_blob_roundtrip():
    buf = io.BytesIO()
    arrs = {"a": np.arange(6, dtype=np.float32).reshape(2, 3),
            "b": np.array(3.5, dtype=np.float32)}
    for name, arr in arrs.items():
        write_tensor_blob(buf, name, arr)
    buf.seek(0)
    for name, arr in arrs.items():
        got = read_tensor_blob(buf)
        assert got[0] == name
        assert got[1].shape == arr.shape
        assert np.array_equal(got[1], arr)
    assert read_tensor_blob(buf) is None


def test_tensor_blob_little_endian_layout():
    buf = io.BytesIO()
    write_tensor_blob(buf, "x", np.array([1.0], dtype=np.float32))
    raw = buf.getvalue()
    header, blob = raw.split(b"\n", 1)
    assert json.loads(header) == {"shape": [1], "name": "x"}
    assert blob == np.array([1.0], dtype="<f4").tobytes()


def test_tensor_blob_truncation_reports_offset():
    buf = io.BytesIO()
    write_tensor_blob(buf, "x", np.ones((4, 4), dtype=np.float32))
    raw = buf.getvalue()[:-8]
    with pytest.raises(IOError, match="offset"):
        read_tensor_blob(io.BytesIO(raw))

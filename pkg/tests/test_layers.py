"""Kernel correctness against brute-force nested-loop oracles."""

import numpy as np
import pytest

from halp.layers import (
    LayerKind,
    LayerSpec,
    LayerWeights,
    conv2d,
    conv2d_rows,
    depthwise_conv2d,
    depthwise_conv2d_rows,
    fully_connected,
    global_avg_pool,
    maxpool2d,
)
from halp.tensor import Tensor

RTOL = 1e-6


def oracle_conv(x, kernel, bias, stride, pad, relu):
    H, W, C = x.shape
    kh, kw, _, co_n = kernel.shape
    ho = (H + 2 * pad - kh) // stride + 1
    wo = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((ho, wo, co_n))
    for j in range(ho):
        for i in range(wo):
            for co in range(co_n):
                acc = 0.0
                for dy in range(kh):
                    for dx in range(kw):
                        y, z = j * stride - pad + dy, i * stride - pad + dx
                        if 0 <= y < H and 0 <= z < W:
                            for c in range(C):
                                acc += float(x[y, z, c]) * float(kernel[dy, dx, c, co])
                acc += float(bias[co])
                out[j, i, co] = max(acc, 0.0) if relu else acc
    return out


def oracle_depthwise(x, kernel, bias, stride, pad, relu):
    H, W, C = x.shape
    kh, kw, _ = kernel.shape
    ho = (H + 2 * pad - kh) // stride + 1
    wo = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((ho, wo, C))
    for j in range(ho):
        for i in range(wo):
            for c in range(C):
                acc = 0.0
                for dy in range(kh):
                    for dx in range(kw):
                        y, z = j * stride - pad + dy, i * stride - pad + dx
                        if 0 <= y < H and 0 <= z < W:
                            acc += float(x[y, z, c]) * float(kernel[dy, dx, c])
                acc += float(bias[c])
                out[j, i, c] = max(acc, 0.0) if relu else acc
    return out


def oracle_maxpool(x):
    H, W, C = x.shape
    out = np.zeros((H // 2, W // 2, C))
    for j in range(H // 2):
        for i in range(W // 2):
            for c in range(C):
                out[j, i, c] = max(
                    x[2 * j, 2 * i, c], x[2 * j, 2 * i + 1, c],
                    x[2 * j + 1, 2 * i, c], x[2 * j + 1, 2 * i + 1, c],
                )
    return out


def conv_spec(kh, kw, cin, cout, stride=1, pad=1, act=None):
    return LayerSpec(LayerKind.CONV, (kh, kw), stride, pad, cin, cout, act)


def test_conv_zero_input_is_zero():
    spec = conv_spec(3, 3, 1, 1)
    w = LayerWeights(np.ones((3, 3, 1, 1), np.float32), np.zeros(1, np.float32))
    out = conv2d(Tensor.zeros(5, 5, 1), spec, w)
    assert out.shape == (5, 5, 1)
    assert np.all(out.data == 0.0)


def test_conv_identity_kernel():
    rng = np.random.default_rng(0)
    x = Tensor(rng.uniform(-1, 1, (4, 4, 1)).astype(np.float32))
    spec = conv_spec(1, 1, 1, 1, stride=1, pad=0)
    w = LayerWeights(np.ones((1, 1, 1, 1), np.float32), np.zeros(1, np.float32))
    out = conv2d(x, spec, w)
    np.testing.assert_array_equal(out.data, x.data)


def test_conv_matches_oracle_spec_example():
    rng = np.random.default_rng(42)
    x = rng.uniform(-1, 1, (8, 8, 3)).astype(np.float32)
    kernel = rng.uniform(-1, 1, (3, 3, 3, 4)).astype(np.float32)
    bias = rng.uniform(-1, 1, 4).astype(np.float32)
    spec = conv_spec(3, 3, 3, 4)
    got = conv2d(Tensor(x), spec, LayerWeights(kernel, bias))
    want = oracle_conv(x, kernel, bias, 1, 1, relu=False)
    np.testing.assert_allclose(got.data, want, rtol=RTOL, atol=1e-6)


@pytest.mark.parametrize("case", range(100))
def test_conv_random_cases(case):
    rng = np.random.default_rng(1000 + case)
    kh = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    pad = 0 if kh == 1 else int(rng.choice([0, 1]))
    cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    h = int(rng.integers(kh + stride, 8))
    w = int(rng.integers(kh + stride, 8))
    relu = bool(rng.integers(0, 2))
    x = rng.uniform(-1, 1, (h, w, cin)).astype(np.float32)
    kernel = rng.uniform(-1, 1, (kh, kh, cin, cout)).astype(np.float32)
    bias = rng.uniform(-1, 1, cout).astype(np.float32)
    spec = conv_spec(kh, kh, cin, cout, stride, pad, "relu" if relu else None)
    got = conv2d(Tensor(x), spec, LayerWeights(kernel, bias))
    want = oracle_conv(x, kernel, bias, stride, pad, relu)
    assert got.shape == want.shape
    np.testing.assert_allclose(got.data, want, rtol=RTOL, atol=1e-6)


def test_depthwise_zero_input():
    spec = LayerSpec(LayerKind.DEPTHWISE_CONV, (3, 3), 1, 1, 2, 2)
    w = LayerWeights(np.ones((3, 3, 2), np.float32), np.zeros(2, np.float32))
    out = depthwise_conv2d(Tensor.zeros(6, 6, 2), spec, w)
    assert np.all(out.data == 0.0)


def test_depthwise_center_tap_identity():
    rng = np.random.default_rng(1)
    x = Tensor(rng.uniform(-1, 1, (6, 6, 2)).astype(np.float32))
    kernel = np.zeros((3, 3, 2), np.float32)
    kernel[1, 1, :] = 1.0
    spec = LayerSpec(LayerKind.DEPTHWISE_CONV, (3, 3), 1, 1, 2, 2)
    out = depthwise_conv2d(x, spec, LayerWeights(kernel, np.zeros(2, np.float32)))
    np.testing.assert_allclose(out.data, x.data, rtol=RTOL)


def test_depthwise_stride2_matches_oracle():
    rng = np.random.default_rng(7)
    x = rng.uniform(-1, 1, (7, 7, 4)).astype(np.float32)
    kernel = rng.uniform(-1, 1, (3, 3, 4)).astype(np.float32)
    bias = rng.uniform(-1, 1, 4).astype(np.float32)
    spec = LayerSpec(LayerKind.DEPTHWISE_CONV, (3, 3), 2, 1, 4, 4)
    got = depthwise_conv2d(Tensor(x), spec, LayerWeights(kernel, bias))
    want = oracle_depthwise(x, kernel, bias, 2, 1, relu=False)
    np.testing.assert_allclose(got.data, want, rtol=RTOL, atol=1e-6)


@pytest.mark.parametrize("case", range(100))
def test_depthwise_random_cases(case):
    rng = np.random.default_rng(2000 + case)
    stride = int(rng.choice([1, 2]))
    c = int(rng.integers(1, 5))
    h, w = int(rng.integers(4, 9)), int(rng.integers(4, 9))
    relu = bool(rng.integers(0, 2))
    x = rng.uniform(-1, 1, (h, w, c)).astype(np.float32)
    kernel = rng.uniform(-1, 1, (3, 3, c)).astype(np.float32)
    bias = rng.uniform(-1, 1, c).astype(np.float32)
    spec = LayerSpec(LayerKind.DEPTHWISE_CONV, (3, 3), stride, 1, c, c,
                     "relu" if relu else None)
    got = depthwise_conv2d(Tensor(x), spec, LayerWeights(kernel, bias))
    want = oracle_depthwise(x, kernel, bias, stride, 1, relu)
    np.testing.assert_allclose(got.data, want, rtol=RTOL, atol=1e-6)


def test_maxpool_single_window():
    x = Tensor.from_flat([1, 2, 3, 4], 2, 2, 1)
    out = maxpool2d(x)
    assert out.shape == (1, 1, 1)
    assert out.data[0, 0, 0] == 4.0


def test_maxpool_constant_field():
    out = maxpool2d(Tensor(np.full((6, 4, 2), 3.5, np.float32)))
    assert out.shape == (3, 2, 2)
    assert np.all(out.data == 3.5)


def test_maxpool_rejects_odd_height():
    with pytest.raises(ValueError):
        maxpool2d(Tensor.zeros(5, 4, 1))


@pytest.mark.parametrize("case", range(100))
def test_maxpool_random_cases(case):
    rng = np.random.default_rng(3000 + case)
    h, w = 2 * int(rng.integers(1, 5)), 2 * int(rng.integers(1, 5))
    c = int(rng.integers(1, 4))
    x = rng.uniform(-1, 1, (h, w, c)).astype(np.float32)
    got = maxpool2d(Tensor(x))
    np.testing.assert_array_equal(got.data, oracle_maxpool(x).astype(np.float32))


def test_maxpool_oracle_8x8x3():
    rng = np.random.default_rng(9)
    x = rng.uniform(-1, 1, (8, 8, 3)).astype(np.float32)
    np.testing.assert_array_equal(maxpool2d(Tensor(x)).data,
                                  oracle_maxpool(x).astype(np.float32))


def test_fully_connected_zero_input_gives_bias():
    w = LayerWeights(np.ones((3, 4), np.float32), np.array([1, 2, 3], np.float32))
    out = fully_connected(np.zeros(4, np.float32), w)
    np.testing.assert_array_equal(out, [1, 2, 3])


def test_fully_connected_identity():
    w = LayerWeights(np.eye(5, dtype=np.float32), np.zeros(5, np.float32))
    x = np.arange(5, dtype=np.float32)
    np.testing.assert_array_equal(fully_connected(x, w), x)


@pytest.mark.parametrize("case", range(100))
def test_fully_connected_random_cases(case):
    rng = np.random.default_rng(4000 + case)
    n_in, n_out = int(rng.integers(1, 20)), int(rng.integers(1, 12))
    x = rng.uniform(-1, 1, n_in).astype(np.float32)
    w = rng.uniform(-1, 1, (n_out, n_in)).astype(np.float32)
    b = rng.uniform(-1, 1, n_out).astype(np.float32)
    got = fully_connected(x, LayerWeights(w, b))
    want = [sum(float(w[o, i]) * float(x[i]) for i in range(n_in)) + float(b[o])
            for o in range(n_out)]
    np.testing.assert_allclose(got, want, rtol=RTOL, atol=1e-6)


def test_fully_connected_16_to_8_oracle():
    rng = np.random.default_rng(16)
    x = rng.uniform(-1, 1, 16).astype(np.float32)
    w = rng.uniform(-1, 1, (8, 16)).astype(np.float32)
    b = rng.uniform(-1, 1, 8).astype(np.float32)
    got = fully_connected(x, LayerWeights(w, b))
    want = w.astype(np.float64) @ x.astype(np.float64) + b
    np.testing.assert_allclose(got, want, rtol=RTOL)


def test_global_avg_pool():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, (7, 7, 5)).astype(np.float32)
    out = global_avg_pool(Tensor(x))
    assert out.shape == (1, 1, 5)
    np.testing.assert_allclose(out.data[0, 0], x.mean(axis=(0, 1)), rtol=1e-5)


@pytest.mark.parametrize(
    "h,kh,stride,pad,expect",
    [(5, 3, 1, 0, 3), (5, 3, 1, 1, 5), (7, 3, 2, 0, 3), (224, 3, 2, 1, 112),
     (28, 5, 1, 2, 28), (1, 1, 1, 0, 1)],
)
def test_output_shape_rule(h, kh, stride, pad, expect):
    spec = conv_spec(kh, kh, 1, 1, stride, pad)
    assert spec.out_height(h) == expect


@pytest.mark.parametrize("stride", [1, 2])
def test_row_locality(stride):
    """Output row j depends only on input rows j*s-1 .. j*s+1 for a 3x3 pad-1
    kernel; rows outside that window can change freely."""
    rng = np.random.default_rng(17)
    h = 12
    x = rng.uniform(-1, 1, (h, 6, 2)).astype(np.float32)
    kernel = rng.uniform(-1, 1, (3, 3, 2, 3)).astype(np.float32)
    bias = rng.uniform(-1, 1, 3).astype(np.float32)
    spec = conv_spec(3, 3, 2, 3, stride, 1)
    w = LayerWeights(kernel, bias)
    base = conv2d(Tensor(x), spec, w)
    j = 3
    lo, hi = j * stride - 1, j * stride + 2
    perturbed = x.copy()
    perturbed[: max(lo, 0)] += rng.uniform(1, 2, (max(lo, 0), 6, 2)).astype(np.float32)
    perturbed[hi:] += rng.uniform(1, 2, (h - hi, 6, 2)).astype(np.float32)
    out = conv2d(Tensor(perturbed), spec, w)
    np.testing.assert_array_equal(out.data[j], base.data[j])
    assert not np.array_equal(out.data[j + 2], base.data[j + 2])


def test_row_range_compute_matches_full():
    """Computing a row sub-range on a slab equals the same rows of the full map."""
    rng = np.random.default_rng(23)
    x = rng.uniform(-1, 1, (16, 8, 3)).astype(np.float32)
    kernel = rng.uniform(-1, 1, (3, 3, 3, 2)).astype(np.float32)
    bias = rng.uniform(-1, 1, 2).astype(np.float32)
    spec = conv_spec(3, 3, 3, 2, 1, 1, "relu")
    w = LayerWeights(kernel, bias)
    full = conv2d(Tensor(x), spec, w)
    part = conv2d_rows(Tensor(x[4:12]), spec, w, (5, 11), 16, slab_start=4)
    np.testing.assert_array_equal(part.data, full.data[5:11])

    dspec = LayerSpec(LayerKind.DEPTHWISE_CONV, (3, 3), 2, 1, 3, 3)
    dk = rng.uniform(-1, 1, (3, 3, 3)).astype(np.float32)
    dw = LayerWeights(dk, np.zeros(3, np.float32))
    dfull = depthwise_conv2d(Tensor(x), dspec, dw)
    dpart = depthwise_conv2d_rows(Tensor(x[3:13]), dspec, dw, (2, 6), 16, slab_start=3)
    np.testing.assert_array_equal(dpart.data, dfull.data[2:6])


def test_shape_mismatch_raises():
    spec = conv_spec(3, 3, 2, 2)
    w = LayerWeights(np.zeros((3, 3, 3, 2), np.float32), np.zeros(2, np.float32))
    with pytest.raises(ValueError):
        conv2d(Tensor.zeros(5, 5, 2), spec, w)
    with pytest.raises(ValueError):
        fully_connected(np.zeros(5, np.float32),
                        LayerWeights(np.zeros((2, 4), np.float32), np.zeros(2, np.float32)))

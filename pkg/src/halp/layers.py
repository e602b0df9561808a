"""CNN layer kernels shared by the monolithic oracle and the distributed runtime.

Kernels accumulate in float64 and store float32 per layer, so computing a
sub-range of output rows on one node gives the same values (to float32
rounding) as computing the full map on one node. No im2col buffers, no
SIMD tricks: plain windowed reductions.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import Tensor


class LayerKind(Enum):
    CONV = "conv"
    DEPTHWISE_CONV = "depthwise_conv"
    POINTWISE_CONV = "pointwise_conv"
    MAX_POOL = "max_pool"
    GLOBAL_AVG_POOL = "global_avg_pool"
    FULLY_CONNECTED = "fully_connected"


SPATIAL_KINDS = {
    LayerKind.CONV,
    LayerKind.DEPTHWISE_CONV,
    LayerKind.POINTWISE_CONV,
    LayerKind.MAX_POOL,
}


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    kernel: tuple[int, int] = (1, 1)
    stride: int = 1
    padding: int = 0
    in_channels: int = 1
    out_channels: int = 1
    activation: str | None = None  # None or "relu"

    def __post_init__(self):
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")
        if self.kind is LayerKind.POINTWISE_CONV:
            if self.kernel != (1, 1) or self.padding != 0 or self.stride != 1:
                raise ValueError("pointwise conv must be 1x1, stride 1, padding 0")
        if self.kind is LayerKind.DEPTHWISE_CONV and self.out_channels != self.in_channels:
            raise ValueError("depthwise conv must keep channel count")
        if self.activation not in (None, "relu"):
            raise ValueError(f"unsupported activation {self.activation!r}")

    def out_height(self, in_height: int) -> int:
        kh = self.kernel[0]
        if self.kind is LayerKind.MAX_POOL:
            return in_height // 2
        if self.kind is LayerKind.GLOBAL_AVG_POOL:
            return 1
        return (in_height + 2 * self.padding - kh) // self.stride + 1

    def out_width(self, in_width: int) -> int:
        kw = self.kernel[1]
        if self.kind is LayerKind.MAX_POOL:
            return in_width // 2
        if self.kind is LayerKind.GLOBAL_AVG_POOL:
            return 1
        return (in_width + 2 * self.padding - kw) // self.stride + 1


@dataclass(frozen=True)
class LayerWeights:
    """Kernel tensor plus bias; shapes fixed by the owning LayerSpec."""

    kernel: np.ndarray
    bias: np.ndarray

    @staticmethod
    def empty() -> "LayerWeights":
        return LayerWeights(np.zeros(0, np.float32), np.zeros(0, np.float32))


def make_layer_weights(spec: LayerSpec, rng: np.random.Generator) -> LayerWeights:
    """Seeded uniform weights in [-0.5, 0.5]; pooling layers get empty weights."""
    kh, kw = spec.kernel
    if spec.kind in (LayerKind.CONV, LayerKind.POINTWISE_CONV):
        shape = (kh, kw, spec.in_channels, spec.out_channels)
    elif spec.kind is LayerKind.DEPTHWISE_CONV:
        shape = (kh, kw, spec.in_channels)
    elif spec.kind is LayerKind.FULLY_CONNECTED:
        shape = (spec.out_channels, spec.in_channels)
    else:
        return LayerWeights.empty()
    kernel = rng.uniform(-0.5, 0.5, size=shape).astype(np.float32)
    bias = rng.uniform(-0.5, 0.5, size=spec.out_channels).astype(np.float32)
    return LayerWeights(kernel, bias)


def _check_input(x: Tensor, spec: LayerSpec):
    if x.channels != spec.in_channels:
        raise ValueError(
            f"input has {x.channels} channels, layer expects {spec.in_channels}"
        )


def _check_kernel(spec: LayerSpec, weights: LayerWeights, expect_shape: tuple):
    if tuple(weights.kernel.shape) != expect_shape:
        raise ValueError(
            f"kernel shape {weights.kernel.shape} does not match spec {expect_shape}"
        )
    if weights.bias.shape != (spec.out_channels,):
        raise ValueError(
            f"bias shape {weights.bias.shape} does not match out_channels {spec.out_channels}"
        )


def _padded_slab(x: Tensor, row_lo: int, row_hi: int, in_height: int, pad: int):
    """Input rows [row_lo, row_hi) (virtual, may stick out of [0, in_height))
    as a float64 array zero-padded vertically where outside the real map and
    horizontally by `pad`. `x` must hold the clipped range."""
    top = max(0, -row_lo)
    bottom = max(0, row_hi - in_height)
    arr = x.data.astype(np.float64)
    if top or bottom or pad:
        arr = np.pad(arr, ((top, bottom), (pad, pad), (0, 0)))
    return arr


def _windows(arr: np.ndarray, out_rows: int, out_cols: int, kh: int, kw: int, stride: int):
    """Sliding (kh, kw) windows with the given stride, as a strided view."""
    rs, cs, chs = arr.strides
    shape = (out_rows, out_cols, kh, kw, arr.shape[2])
    strides = (rs * stride, cs * stride, rs, cs, chs)
    return as_strided(arr, shape=shape, strides=strides)


def _activate(out: np.ndarray, spec: LayerSpec) -> Tensor:
    if spec.activation == "relu":
        np.maximum(out, 0.0, out=out)
    return Tensor(out.astype(np.float32))


def conv2d_rows(
    x: Tensor,
    spec: LayerSpec,
    weights: LayerWeights,
    out_range: tuple[int, int],
    in_height: int,
    slab_start: int = 0,
) -> Tensor:
    """Standard convolution restricted to output rows [out_range).

    `x` holds input rows [slab_start, slab_start + x.height) of a map whose
    true height is `in_height`; the range must cover the receptive field of
    the requested output rows (clipped to the map).
    """
    _check_input(x, spec)
    kh, kw = spec.kernel
    _check_kernel(spec, weights, (kh, kw, spec.in_channels, spec.out_channels))
    a, b = out_range
    lo = a * spec.stride - spec.padding
    hi = (b - 1) * spec.stride - spec.padding + kh
    need_lo, need_hi = max(0, lo), min(in_height, hi)
    if slab_start > need_lo or slab_start + x.height < need_hi:
        raise ValueError(
            f"slab rows [{slab_start}, {slab_start + x.height}) do not cover "
            f"receptive field [{need_lo}, {need_hi})"
        )
    sub = x.rows(need_lo - slab_start, need_hi - slab_start)
    arr = _padded_slab(sub, lo, hi, in_height, spec.padding)
    out_w = spec.out_width(x.width)
    win = _windows(arr, b - a, out_w, kh, kw, spec.stride)
    out = np.tensordot(win, weights.kernel.astype(np.float64), axes=([2, 3, 4], [0, 1, 2]))
    out += weights.bias.astype(np.float64)
    return _activate(out, spec)


def conv2d(x: Tensor, spec: LayerSpec, weights: LayerWeights) -> Tensor:
    if spec.kind not in (LayerKind.CONV, LayerKind.POINTWISE_CONV):
        raise ValueError(f"conv2d got layer kind {spec.kind}")
    return conv2d_rows(x, spec, weights, (0, spec.out_height(x.height)), x.height)


def depthwise_conv2d_rows(
    x: Tensor,
    spec: LayerSpec,
    weights: LayerWeights,
    out_range: tuple[int, int],
    in_height: int,
    slab_start: int = 0,
) -> Tensor:
    """Per-channel convolution restricted to output rows [out_range)."""
    _check_input(x, spec)
    kh, kw = spec.kernel
    _check_kernel(spec, weights, (kh, kw, spec.in_channels))
    a, b = out_range
    lo = a * spec.stride - spec.padding
    hi = (b - 1) * spec.stride - spec.padding + kh
    need_lo, need_hi = max(0, lo), min(in_height, hi)
    if slab_start > need_lo or slab_start + x.height < need_hi:
        raise ValueError(
            f"slab rows [{slab_start}, {slab_start + x.height}) do not cover "
            f"receptive field [{need_lo}, {need_hi})"
        )
    sub = x.rows(need_lo - slab_start, need_hi - slab_start)
    arr = _padded_slab(sub, lo, hi, in_height, spec.padding)
    out_w = spec.out_width(x.width)
    win = _windows(arr, b - a, out_w, kh, kw, spec.stride)
    out = np.einsum("hwijc,ijc->hwc", win, weights.kernel.astype(np.float64))
    out += weights.bias.astype(np.float64)
    return _activate(out, spec)


def depthwise_conv2d(x: Tensor, spec: LayerSpec, weights: LayerWeights) -> Tensor:
    if spec.kind is not LayerKind.DEPTHWISE_CONV:
        raise ValueError(f"depthwise_conv2d got layer kind {spec.kind}")
    return depthwise_conv2d_rows(x, spec, weights, (0, spec.out_height(x.height)), x.height)


def maxpool2d_rows(x: Tensor, out_range: tuple[int, int], slab_start: int = 0) -> Tensor:
    """2x2 stride-2 max pooling over output rows [out_range)."""
    a, b = out_range
    lo, hi = 2 * a, 2 * b
    if slab_start > lo or slab_start + x.height < hi:
        raise ValueError(
            f"slab rows [{slab_start}, {slab_start + x.height}) do not cover pool input [{lo}, {hi})"
        )
    if x.width % 2:
        raise ValueError(f"pooling needs even width, got {x.width}")
    sub = x.rows(lo - slab_start, hi - slab_start).data
    h, w, c = sub.shape
    out = sub.reshape(h // 2, 2, w // 2, 2, c).max(axis=(1, 3))
    return Tensor(out)


def maxpool2d(x: Tensor) -> Tensor:
    if x.height % 2 or x.width % 2:
        raise ValueError(f"pooling needs even spatial dims, got {x.height}x{x.width}")
    return maxpool2d_rows(x, (0, x.height // 2))


def global_avg_pool(x: Tensor) -> Tensor:
    out = x.data.astype(np.float64).mean(axis=(0, 1), keepdims=True)
    return Tensor(out.astype(np.float32))


def fully_connected(x: np.ndarray, weights: LayerWeights, activation: str | None = None) -> np.ndarray:
    """Affine map: weights.kernel (out, in) @ x + bias."""
    vec = np.asarray(x, dtype=np.float32).reshape(-1)
    w = weights.kernel
    if w.ndim != 2 or w.shape[1] != vec.size:
        raise ValueError(f"weight shape {w.shape} incompatible with input of {vec.size}")
    out = w.astype(np.float64) @ vec.astype(np.float64) + weights.bias.astype(np.float64)
    if activation == "relu":
        np.maximum(out, 0.0, out=out)
    return out.astype(np.float32)


def apply_spatial_rows(
    x: Tensor,
    spec: LayerSpec,
    weights: LayerWeights,
    out_range: tuple[int, int],
    in_height: int,
    slab_start: int = 0,
) -> Tensor:
    """Dispatch a spatial layer restricted to output rows [out_range)."""
    if spec.kind in (LayerKind.CONV, LayerKind.POINTWISE_CONV):
        return conv2d_rows(x, spec, weights, out_range, in_height, slab_start)
    if spec.kind is LayerKind.DEPTHWISE_CONV:
        return depthwise_conv2d_rows(x, spec, weights, out_range, in_height, slab_start)
    if spec.kind is LayerKind.MAX_POOL:
        return maxpool2d_rows(x, out_range, slab_start)
    raise ValueError(f"{spec.kind} is not a spatial layer")

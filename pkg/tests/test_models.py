"""Model zoo structure, MAC counts, and serialization."""

import numpy as np
import pytest

from halp.layers import LayerKind
from halp.models import (
    MOBILENET_ALPHAS,
    MOBILENET_RHOS,
    build_mobilenet_v1,
    build_vgg16,
    mac_count,
    make_input,
    make_weights,
    model_from_json,
    model_to_json,
)
from halp.runtime import monolithic_infer


def test_vgg16_block_structure():
    m = build_vgg16()
    convs = [s for s in m.layers if s.kind is LayerKind.CONV]
    pools = [s for s in m.layers if s.kind is LayerKind.MAX_POOL]
    assert len(convs) == 13 and len(pools) == 5
    assert convs[0].out_channels == 64
    assert [s.out_channels for s in convs] == [64, 64, 128, 128, 256, 256, 256,
                                               512, 512, 512, 512, 512, 512]
    assert all(s.kernel == (3, 3) and s.stride == 1 and s.padding == 1 for s in convs)


def test_vgg16_pool_heights():
    m = build_vgg16()
    heights = []
    h = m.input_shape[0]
    for s in m.layers[: m.n_spatial]:
        h = s.out_height(h)
        if s.kind is LayerKind.MAX_POOL:
            heights.append(h)
    assert heights == [112, 56, 28, 14, 7]


def _independent_macs(model):
    """Closed form per layer from a separate shape propagation."""
    h, w, _ = model.input_shape
    total = 0
    for s in model.layers:
        if s.kind is LayerKind.FULLY_CONNECTED:
            total += s.in_channels * s.out_channels
            continue
        kh, kw = s.kernel
        if s.kind is LayerKind.MAX_POOL:
            oh, ow = h // 2, w // 2
        elif s.kind is LayerKind.GLOBAL_AVG_POOL:
            oh = ow = 1
        else:
            oh = (h + 2 * s.padding - kh) // s.stride + 1
            ow = (w + 2 * s.padding - kw) // s.stride + 1
        if s.kind is LayerKind.CONV or s.kind is LayerKind.POINTWISE_CONV:
            total += kh * kw * s.in_channels * s.out_channels * oh * ow
        elif s.kind is LayerKind.DEPTHWISE_CONV:
            total += kh * kw * s.in_channels * oh * ow
        h, w = oh, ow
    return total


def test_vgg16_total_macs():
    m = build_vgg16()
    got = mac_count(m)
    assert got.total == _independent_macs(m)
    assert got.total == sum(got.per_layer)
    # canonical figure: ~15.47 GMACs for conv + fc
    assert 15.3e9 < got.total < 15.6e9


def test_mobilenet_stage_heights():
    m = build_mobilenet_v1(1.0, 224)
    h = m.input_shape[0]
    seen = []
    for s in m.layers[: m.n_spatial]:
        h = s.out_height(h)
        seen.append(h)
    assert seen[0] == 112 and seen[-1] == 7
    assert sorted(set(seen), reverse=True) == [112, 56, 28, 14, 7]


def test_mobilenet_stride2_positions():
    m = build_mobilenet_v1(1.0, 224)
    dws = [s for s in m.layers if s.kind is LayerKind.DEPTHWISE_CONV]
    assert len(dws) == 13
    assert [s.stride for s in dws] == [1, 2, 1, 2, 1, 2, 1, 1, 1, 1, 1, 2, 1]


def test_mobilenet_alpha_channel_rounding():
    m = build_mobilenet_v1(0.25, 160)
    assert m.layers[0].out_channels == 8  # round(0.25 * 32)
    m75 = build_mobilenet_v1(0.75, 224)
    assert m75.layers[0].out_channels == 24


def test_mobilenet_unsupported_params():
    with pytest.raises(ValueError):
        build_mobilenet_v1(0.9, 224)
    with pytest.raises(ValueError):
        build_mobilenet_v1(1.0, 128)


def test_mobilenet_macs_value():
    got = mac_count(build_mobilenet_v1(1.0, 224)).total
    assert got == _independent_macs(build_mobilenet_v1(1.0, 224))
    assert 0.55e9 < got < 0.60e9  # ~569 MMACs

    m = build_mobilenet_v1(0.5, 192)
    assert mac_count(m).total == _independent_macs(m)


def test_mac_monotone_in_alpha_and_rho():
    for rho in MOBILENET_RHOS:
        totals = [mac_count(build_mobilenet_v1(a, rho)).total for a in MOBILENET_ALPHAS]
        assert totals == sorted(totals, reverse=True)
        assert len(set(totals)) == len(totals)
    for alpha in MOBILENET_ALPHAS:
        totals = [mac_count(build_mobilenet_v1(alpha, r)).total for r in MOBILENET_RHOS]
        assert totals == sorted(totals, reverse=True)


def test_all_variants_run_monolithic():
    for alpha in MOBILENET_ALPHAS:
        for rho in MOBILENET_RHOS:
            m = build_mobilenet_v1(alpha, rho, base_width=8, classes=11)
            out = monolithic_infer(m, make_weights(m, 1), make_input(m, 2))
            assert out.shape == (11,)


def test_model_json_roundtrip():
    m = build_mobilenet_v1(0.75, 192, base_width=16, classes=40)
    back = model_from_json(model_to_json(m))
    assert back == m


def test_weights_deterministic():
    m = build_vgg16(base_width=8, classes=10)
    w1 = make_weights(m, 5)
    w2 = make_weights(m, 5)
    for a, b in zip(w1, w2):
        np.testing.assert_array_equal(a.kernel, b.kernel)
        np.testing.assert_array_equal(a.bias, b.bias)
    w3 = make_weights(m, 6)
    assert not np.array_equal(w1[0].kernel, w3[0].kernel)
    assert np.all(np.abs(w1[0].kernel) <= 0.5)

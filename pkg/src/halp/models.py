"""Layer-by-layer definitions of VGG-16 and the MobileNet-V1 family.

MobileNet variants are parameterized by the width multiplier alpha (channel
scaling) and input resolution rho. Accuracy is never computed here; weights
are seeded random and exist so the distributed and monolithic paths can be
compared value-for-value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .layers import LayerKind, LayerSpec, LayerWeights, SPATIAL_KINDS, make_layer_weights

MOBILENET_ALPHAS = (1.0, 0.75, 0.5, 0.25)
MOBILENET_RHOS = (224, 192, 160)

# out-channel multipliers of the 13 depthwise-separable blocks relative to the
# stem conv, with the strides of their depthwise layers
_MOBILENET_BLOCKS = (
    (2, 1), (4, 2), (4, 1), (8, 2), (8, 1), (16, 2),
    (16, 1), (16, 1), (16, 1), (16, 1), (16, 1), (32, 2), (32, 1),
)

_VGG_BLOCKS = ((2, 1), (2, 2), (3, 4), (3, 8), (3, 8))  # (convs, width multiplier)


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    alpha: float = 1.0
    rho: int = 224
    classes: int = 1000
    base_width: int = 0

    def __post_init__(self):
        ch = self.input_shape[2]
        for i, spec in enumerate(self.layers):
            if spec.kind is LayerKind.FULLY_CONNECTED:
                break
            if spec.in_channels != ch:
                raise ValueError(
                    f"layer {i} expects {spec.in_channels} channels, chain gives {ch}"
                )
            ch = spec.out_channels

    @property
    def n_spatial(self) -> int:
        """Number of leading layers that operate on H x W x C maps."""
        n = 0
        for spec in self.layers:
            if spec.kind not in SPATIAL_KINDS:
                break
            n += 1
        return n

    @property
    def head(self) -> tuple[LayerSpec, ...]:
        return self.layers[self.n_spatial:]

    def spatial_heights(self) -> list[int]:
        """Input height of each spatial layer, plus the final output height."""
        h = self.input_shape[0]
        heights = [h]
        for spec in self.layers[: self.n_spatial]:
            h = spec.out_height(h)
            heights.append(h)
        return heights


@dataclass(frozen=True)
class MacCount:
    per_layer: tuple[int, ...]
    total: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", sum(self.per_layer))


def _round_channels(x: float) -> int:
    """Round-half-up with a floor of one channel."""
    return max(1, int(np.floor(x + 0.5)))


def build_vgg16(base_width: int = 64, classes: int = 1000) -> ModelSpec:
    """13 convs in five blocks (2-2-3-3-3), max-pool after each block, 3 FC layers."""
    layers: list[LayerSpec] = []
    in_ch = 3
    for convs, mult in _VGG_BLOCKS:
        out_ch = base_width * mult
        for _ in range(convs):
            layers.append(
                LayerSpec(LayerKind.CONV, (3, 3), 1, 1, in_ch, out_ch, "relu")
            )
            in_ch = out_ch
        layers.append(LayerSpec(LayerKind.MAX_POOL, (2, 2), 2, 0, in_ch, in_ch))
    fc_width = base_width * 64
    flat = 7 * 7 * in_ch
    layers.append(LayerSpec(LayerKind.FULLY_CONNECTED, in_channels=flat, out_channels=fc_width, activation="relu"))
    layers.append(LayerSpec(LayerKind.FULLY_CONNECTED, in_channels=fc_width, out_channels=fc_width, activation="relu"))
    layers.append(LayerSpec(LayerKind.FULLY_CONNECTED, in_channels=fc_width, out_channels=classes))
    return ModelSpec(
        name="vgg16",
        input_shape=(224, 224, 3),
        layers=tuple(layers),
        classes=classes,
        base_width=base_width,
    )


def mobilenet_name(alpha: float, rho: int) -> str:
    return f"MobileNet_v1_{'1.0' if alpha == 1.0 else f'{alpha:.2f}'}_{rho}"


def build_mobilenet_v1(
    alpha: float, rho: int, base_width: int = 32, classes: int = 1000
) -> ModelSpec:
    """Stem conv (stride 2) + 13 depthwise-separable pairs + global avg pool + FC."""
    if alpha not in MOBILENET_ALPHAS:
        raise ValueError(f"alpha must be one of {MOBILENET_ALPHAS}, got {alpha}")
    if rho not in MOBILENET_RHOS:
        raise ValueError(f"rho must be one of {MOBILENET_RHOS}, got {rho}")
    layers: list[LayerSpec] = []
    stem = _round_channels(alpha * base_width)
    layers.append(LayerSpec(LayerKind.CONV, (3, 3), 2, 1, 3, stem, "relu"))
    in_ch = stem
    for mult, stride in _MOBILENET_BLOCKS:
        out_ch = _round_channels(alpha * base_width * mult)
        layers.append(
            LayerSpec(LayerKind.DEPTHWISE_CONV, (3, 3), stride, 1, in_ch, in_ch, "relu")
        )
        layers.append(
            LayerSpec(LayerKind.POINTWISE_CONV, (1, 1), 1, 0, in_ch, out_ch, "relu")
        )
        in_ch = out_ch
    layers.append(LayerSpec(LayerKind.GLOBAL_AVG_POOL, in_channels=in_ch, out_channels=in_ch))
    layers.append(LayerSpec(LayerKind.FULLY_CONNECTED, in_channels=in_ch, out_channels=classes))
    return ModelSpec(
        name=mobilenet_name(alpha, rho),
        input_shape=(rho, rho, 3),
        layers=tuple(layers),
        alpha=alpha,
        rho=rho,
        classes=classes,
        base_width=base_width,
    )


def layer_macs(spec: LayerSpec, out_h: int, out_w: int) -> int:
    """Multiply-accumulate count of one layer; pooling layers count zero."""
    kh, kw = spec.kernel
    if spec.kind in (LayerKind.CONV, LayerKind.POINTWISE_CONV):
        return kh * kw * spec.in_channels * spec.out_channels * out_h * out_w
    if spec.kind is LayerKind.DEPTHWISE_CONV:
        return kh * kw * spec.in_channels * out_h * out_w
    if spec.kind is LayerKind.FULLY_CONNECTED:
        return spec.in_channels * spec.out_channels
    return 0


def mac_count(model: ModelSpec) -> MacCount:
    h, w, _ = model.input_shape
    counts = []
    for spec in model.layers:
        if spec.kind in SPATIAL_KINDS or spec.kind is LayerKind.GLOBAL_AVG_POOL:
            oh, ow = spec.out_height(h), spec.out_width(w)
            counts.append(layer_macs(spec, oh, ow))
            h, w = oh, ow
        else:
            counts.append(layer_macs(spec, 1, 1))
    return MacCount(tuple(counts))


def make_weights(model: ModelSpec, seed: int) -> list[LayerWeights]:
    """All layer weights from one seed, drawn in layer order."""
    rng = np.random.default_rng(seed)
    return [make_layer_weights(spec, rng) for spec in model.layers]


def make_input(model: ModelSpec, seed: int):
    from .tensor import Tensor

    rng = np.random.default_rng(seed)
    h, w, c = model.input_shape
    return Tensor(rng.uniform(-0.5, 0.5, size=(h, w, c)).astype(np.float32))


def model_to_json(model: ModelSpec) -> str:
    doc = {
        "name": model.name,
        "input": list(model.input_shape),
        "alpha": model.alpha,
        "rho": model.rho,
        "classes": model.classes,
        "base_width": model.base_width,
        "layers": [
            {
                "kind": spec.kind.value,
                "kernel": list(spec.kernel),
                "stride": spec.stride,
                "padding": spec.padding,
                "in_channels": spec.in_channels,
                "out_channels": spec.out_channels,
                "activation": spec.activation,
            }
            for spec in model.layers
        ],
    }
    return json.dumps(doc, indent=2)


def model_from_json(text: str) -> ModelSpec:
    doc = json.loads(text)
    layers = tuple(
        LayerSpec(
            LayerKind(item["kind"]),
            tuple(item["kernel"]),
            item["stride"],
            item["padding"],
            item["in_channels"],
            item["out_channels"],
            item["activation"],
        )
        for item in doc["layers"]
    )
    return ModelSpec(
        name=doc["name"],
        input_shape=tuple(doc["input"]),
        layers=layers,
        alpha=doc["alpha"],
        rho=doc["rho"],
        classes=doc["classes"],
        base_width=doc["base_width"],
    )


def get_model(name: str, alpha: float = 1.0, rho: int = 224, base_width: int = 0,
              classes: int = 1000) -> ModelSpec:
    """Build a model by CLI-style name ("vgg16" or "mobilenet")."""
    if name == "vgg16":
        return build_vgg16(base_width or 64, classes)
    if name in ("mobilenet", "mobilenet_v1"):
        return build_mobilenet_v1(alpha, rho, base_width or 32, classes)
    raise ValueError(f"unknown model {name!r}")

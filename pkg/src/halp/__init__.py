"""Distributed CNN inference across one host and two secondary edge nodes.

The package splits feature maps along the height dimension: two secondary
nodes compute the top and bottom segments while the host computes a small
overlap band around the boundary, exchanging boundary rows layer by layer
so the distributed result is exactly the monolithic result.
"""

__version__ = "0.1.0"

from .tensor import Tensor
from .layers import LayerKind, LayerSpec, LayerWeights
from .models import ModelSpec, build_vgg16, build_mobilenet_v1
from .planner import (
    PartitionPlan,
    build_plan_vgg,
    build_plan_mobilenet,
    optimize_plan,
    overlap_recurrence,
    receptive_field,
    validate_plan,
)

__all__ = [
    "Tensor",
    "LayerKind",
    "LayerSpec",
    "LayerWeights",
    "ModelSpec",
    "build_vgg16",
    "build_mobilenet_v1",
    "PartitionPlan",
    "build_plan_vgg",
    "build_plan_mobilenet",
    "optimize_plan",
    "overlap_recurrence",
    "receptive_field",
    "validate_plan",
]

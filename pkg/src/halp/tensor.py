"""Reference tensor type: an H x W x C float32 feature map."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Tensor:
    """Immutable float32 feature map in row-major (height, width, channels) order."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"tensor must be 3-D (H, W, C), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"tensor dimensions must be >= 1, got {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def zeros(cls, height: int, width: int, channels: int) -> "Tensor":
        return cls(np.zeros((height, width, channels), dtype=np.float32))

    @classmethod
    def from_flat(cls, flat, height: int, width: int, channels: int) -> "Tensor":
        arr = np.asarray(flat, dtype=np.float32)
        if arr.size != height * width * channels:
            raise ValueError(
                f"flat data has {arr.size} values, expected {height * width * channels}"
            )
        return cls(arr.reshape(height, width, channels))

    def rows(self, start: int, stop: int) -> "Tensor":
        """Row slice [start, stop) as a new Tensor."""
        if not (0 <= start < stop <= self.height):
            raise ValueError(f"row range [{start}, {stop}) outside height {self.height}")
        return Tensor(self.data[start:stop])

    def flatten(self) -> np.ndarray:
        """Row-major (H, W, C) flattening used by the classifier head."""
        return self.data.reshape(-1)

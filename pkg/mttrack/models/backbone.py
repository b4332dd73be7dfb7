"""
Toy convolutional backbone: three stride-2 stages and a stride-1 projection, total stride 8
"""
from typing import Sequence

import numpy as np

from mttrack.compute import ops
from mttrack.compute.nn import Conv2d, Module
from mttrack.compute.tensor import Tensor
from mttrack.core.exceptions import InputError

KERNEL = 3


class ToyBackbone(Module):
    def __init__(self, channels: int, stage_channels: Sequence[int], rng: np.random.Generator, dtype=np.float32):
        c1, c2, c3 = stage_channels
        self.dtype = np.dtype(dtype)
        self.stage1 = Conv2d(3, c1, KERNEL, rng, stride=2, dtype=dtype)
        self.stage2 = Conv2d(c1, c2, KERNEL, rng, stride=2, dtype=dtype)
        self.stage3 = Conv2d(c2, c3, KERNEL, rng, stride=2, dtype=dtype)
        self.project = Conv2d(c3, channels, KERNEL, rng, stride=1, dtype=dtype)

    @property
    def stride(self) -> int:
        return 8

    @staticmethod
    def output_size(size: int) -> int:
        for _ in range(3):
            size = (size - KERNEL) // 2 + 1
        return size - KERNEL + 1

    @property
    def cell_offset(self) -> float:
        """Crop-pixel coordinate where feature cell 0 starts (cell j spans [offset + 8j, offset + 8j + 8))"""
        # receptive centre of cell j is pixel 8j + 15, i.e. continuous coordinate 8j + 15.5
        return 15.5 - self.stride / 2.0

    def preprocess(self, patch: np.ndarray) -> Tensor:
        """uint8 [H, W, 3] image patch -> zero-centred float tensor"""
        if patch.ndim != 3 or patch.shape[2] != 3:
            raise InputError(user_message=f"Backbone expects an [H, W, 3] patch, got shape {patch.shape}.")
        return Tensor(patch.astype(self.dtype) / 255.0 - 0.5)

    def forward(self, x: Tensor) -> Tensor:
        x = ops.relu(self.stage1(x))
        x = ops.relu(self.stage2(x))
        x = ops.relu(self.stage3(x))
        return self.project(x)

"""
Anchor-free localisation head: classification logits and (l, t, r, b) offsets per correlation cell
"""
from typing import Tuple

import numpy as np

from mttrack.compute import ops
from mttrack.compute.nn import Conv2d, Module
from mttrack.compute.tensor import Tensor
from mttrack.core.exceptions import DimensionError

REG_BIAS_INIT = 1.0


class LocalizationHead(Module):
    """Two 3x3 conv towers (same padding); regression offsets are in stride units"""

    def __init__(self, channels: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.channels = channels
        self.cls_tower = Conv2d(channels, hidden, 3, rng, padding=1, dtype=dtype)
        self.cls_out = Conv2d(hidden, 1, 3, rng, padding=1, dtype=dtype)
        self.reg_tower = Conv2d(channels, hidden, 3, rng, padding=1, dtype=dtype)
        self.reg_out = Conv2d(hidden, 4, 3, rng, padding=1, dtype=dtype)
        # offsets start near one stride unit; at zero the IoU loss has no gradient
        self.reg_out.bias.data[:] = REG_BIAS_INIT

    def forward(self, m_star: Tensor) -> Tuple[Tensor, Tensor]:
        return head_forward(m_star, self)


def head_forward(m_star: Tensor, head: LocalizationHead) -> Tuple[Tensor, Tensor]:
    if m_star.ndim != 3 or m_star.shape[2] != head.channels:
        raise DimensionError(
            user_message=f"Head expects an [H, W, {head.channels}] map, got shape {m_star.shape}.",
        )
    cls = head.cls_out(ops.relu(head.cls_tower(m_star)))
    reg = ops.relu(head.reg_out(ops.relu(head.reg_tower(m_star))))
    return cls, reg

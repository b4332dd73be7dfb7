"""
SGD with momentum and the log-space learning-rate schedule
"""
import math
from typing import Iterable, List, Optional

import numpy as np

from mttrack.compute.nn import Parameter


def log_space_lr(epoch: int, epochs: int, start: float = 5e-3, end: float = 5e-4) -> float:
    """Geometric interpolation from `start` (epoch 0) to `end` (last epoch)"""
    if epochs <= 1:
        return start
    return float(start * (end / start) ** (epoch / (epochs - 1)))


class SGD:
    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float,
        momentum: float = 0.9,
        weight_decay: float = 0.0,
        grad_clip: Optional[float] = None,
    ):
        self.params: List[Parameter] = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self._velocity = {id(p): np.zeros_like(p.data) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.params:
            if p.grad is not None:
                total += float(np.sum(p.grad.astype(np.float64) ** 2))
        return math.sqrt(total)

    def step(self, frozen: Iterable[Parameter] = ()) -> float:
        """Apply one update, skipping `frozen`; returns the pre-clip gradient norm"""
        skip = {id(p) for p in frozen}
        norm = self.grad_norm()
        scale = 1.0
        if self.grad_clip is not None and norm > self.grad_clip:
            scale = self.grad_clip / (norm + 1e-12)
        for p in self.params:
            if p.grad is None or id(p) in skip:
                continue
            g = p.grad * scale + self.weight_decay * p.data
            v = self._velocity[id(p)]
            v *= self.momentum
            v += g
            # rebinding keeps any earlier views of p.data untouched
            p.data = (p.data - self.lr * v).astype(p.dtype, copy=False)
        return norm

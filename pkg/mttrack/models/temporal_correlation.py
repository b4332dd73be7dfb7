"""
Temporal correlation: depth-wise correlation against a template fused from the
initial template and the previous reliable template, with a confidence-gated
FIFO memory of bbox-masked search features driving the calibration weight.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from mttrack.compute import ops
from mttrack.compute.nn import Linear, Module, Parameter
from mttrack.compute.tensor import Tensor
from mttrack.core.exceptions import DimensionError, InputError
from mttrack.models.bbox import BBox

logger = logging.getLogger(__name__)

# similarity volume [H, W, C]
CorrelationMap = Tensor


def depthwise_correlate(template: Tensor, search: Tensor) -> CorrelationMap:
    return ops.depthwise_xcorr(template, search)


@dataclass(frozen=True)
class MaskedFeature:
    feature: Tensor
    rows: Tuple[int, int]
    cols: Tuple[int, int]
    empty: bool


def mask_by_bbox(feature: Tensor, bbox: BBox, stride: int, offset: float = 0.0) -> MaskedFeature:
    """
    Zero every feature cell outside the box.

    Cell j covers image pixels [offset + j*stride, offset + (j+1)*stride); box edges
    are projected to the grid and rounded outward. A box that misses the grid
    yields an all-zero map with `empty` set.
    """
    if bbox.w <= 0 or bbox.h <= 0:
        raise InputError(user_message="mask_by_bbox needs a box with positive width and height.")
    if feature.ndim != 3:
        raise DimensionError(
            user_message=f"mask_by_bbox expects an [H, W, C] feature, got shape {feature.shape}.",
        )
    height, width = feature.shape[:2]
    c0 = min(max(math.floor((bbox.x - offset) / stride), 0), width)
    c1 = min(max(math.ceil((bbox.x1 - offset) / stride), 0), width)
    r0 = min(max(math.floor((bbox.y - offset) / stride), 0), height)
    r1 = min(max(math.ceil((bbox.y1 - offset) / stride), 0), height)
    empty = c0 >= c1 or r0 >= r1

    mask = np.zeros((height, width, 1), dtype=feature.dtype)
    if not empty:
        mask[r0:r1, c0:c1] = 1
    else:
        logger.warning(f"Box {bbox.to_corner()} lies outside the {height}x{width} feature grid, masked feature is zero")
    return MaskedFeature(feature=ops.mul(feature, mask), rows=(r0, r1), cols=(c0, c1), empty=empty)


@dataclass(frozen=True)
class TemplateMemory:
    """
    Per-sequence template state.

    `feats` always holds exactly `capacity` masked features, oldest first. The
    memory is immutable: `update_memory` returns a new instance on acceptance
    and the same instance on rejection.
    """

    t0: Tensor
    t_prev: Tensor
    feats: Tuple[Tensor, ...]
    capacity: int
    tau: float
    beta: Tensor

    @classmethod
    def initialize(
        cls,
        t0: Tensor,
        masked_feat0: Tensor,
        beta: Tensor,
        capacity: int = 3,
        tau: float = 3.0,
    ) -> "TemplateMemory":
        if capacity < 0:
            raise InputError(user_message=f"Memory capacity must be non-negative, got {capacity}.")
        feat = masked_feat0.detach()
        return cls(t0=t0.detach(), t_prev=t0.detach(), feats=(feat,) * capacity, capacity=capacity, tau=float(tau), beta=beta)

    def nbytes(self) -> int:
        return self.t0.data.nbytes + self.t_prev.data.nbytes + sum(f.data.nbytes for f in self.feats)


class CalibrationWeight(Module):
    """alpha = W1(GAP(concat(queue, channels))), W1: n*C -> C with a zero-initialised bias"""

    def __init__(self, channels: int, slots: int, rng: np.random.Generator, dtype=np.float32):
        self.channels = channels
        self.slots = slots
        self.w1 = Linear(max(slots, 1) * channels, channels, rng, dtype=dtype)

    def forward(self, mem: TemplateMemory) -> Tensor:
        return compute_alpha(mem, self)

    def resize_slots(self, slots: int) -> None:
        """
        Re-fit W1 to a memory of a different capacity.

        Per-slot weight blocks are averaged and replicated with scale n/n', so a
        queue of identical features gives the same alpha at any capacity. With
        zero slots alpha is identically zero.
        """
        if slots == self.slots:
            return
        c = self.channels
        weight = self.w1.weight.data
        if self.slots == 0 or slots == 0:
            block = np.zeros((c, c), dtype=weight.dtype)
        else:
            block = weight.reshape(self.slots, c, c).mean(axis=0) * (self.slots / slots)
        logger.warning(f"Calibration weight resampled from {self.slots} to {slots} memory slots")
        self.w1.weight = Parameter(np.concatenate([block] * max(slots, 1), axis=0).astype(weight.dtype))
        self.w1.in_features = max(slots, 1) * c
        self.slots = slots


def compute_alpha(mem: TemplateMemory, cw: CalibrationWeight) -> Tensor:
    if mem.capacity != cw.slots:
        raise DimensionError(
            user_message=f"Calibration weight expects {cw.slots} memory slots ({cw.w1.in_features} inputs), memory holds {mem.capacity}.",
            details={"memory_slots": mem.capacity, "weight_slots": cw.slots},
        )
    if mem.capacity == 0:
        return Tensor(np.zeros(cw.channels, dtype=mem.t0.dtype))
    pooled = ops.global_avg_pool(ops.concat(list(mem.feats), axis=2))
    return cw.w1(pooled)


def fuse_templates(mem: TemplateMemory, alpha: Tensor) -> Tensor:
    """T_t = T0 + beta * (alpha (per channel) * T_{t-1})"""
    channels = mem.t0.shape[-1]
    if alpha.shape != (channels,):
        raise DimensionError(
            user_message=f"alpha has shape {alpha.shape}, expected ({channels},).",
            details={"alpha": list(alpha.shape), "channels": channels},
        )
    if mem.t_prev.shape != mem.t0.shape:
        raise DimensionError(
            user_message=f"Previous template {mem.t_prev.shape} does not match initial template {mem.t0.shape}.",
        )
    return ops.add(mem.t0, ops.mul(mem.beta, ops.mul(alpha, mem.t_prev)))


def update_memory(mem: TemplateMemory, masked_feat: Tensor, new_template_feat: Tensor, score: float) -> TemplateMemory:
    """Accept the frame only when score > tau: push the masked feature, drop the oldest, refresh t_prev"""
    if not math.isfinite(score):
        logger.warning(f"Non-finite confidence {score}, memory left unchanged")
        return mem
    if not score > mem.tau:
        return mem
    return push_memory(mem, masked_feat, new_template_feat)


def push_memory(mem: TemplateMemory, masked_feat: Tensor, new_template_feat: Tensor) -> TemplateMemory:
    """Unconditional FIFO push (oldest dropped) and t_prev refresh"""
    feats = mem.feats[1:] + (masked_feat.detach(),) if mem.capacity > 0 else ()
    return replace(mem, feats=feats, t_prev=new_template_feat.detach())


class TemporalCorrelation(Module):
    """Learnable part of the temporal correlation: the fusion scale beta and the calibration weight"""

    def __init__(self, channels: int, slots: int, rng: np.random.Generator, dtype=np.float32):
        self.beta = Parameter(np.zeros(1, dtype=dtype))
        self.calibration = CalibrationWeight(channels, slots, rng, dtype=dtype)

    def forward(
        self,
        mem: TemplateMemory,
        search_feat: Tensor,
        current_template_feat: Optional[Tensor] = None,
        enabled: bool = True,
    ) -> Tuple[CorrelationMap, Tensor]:
        return temporal_correlation_forward(mem, self, search_feat, current_template_feat, enabled)


def temporal_correlation_forward(
    mem: TemplateMemory,
    tc: TemporalCorrelation,
    search_feat: Tensor,
    current_template_feat: Optional[Tensor] = None,
    enabled: bool = True,
) -> Tuple[CorrelationMap, Tensor]:
    """
    Fuse the template and correlate it with the search feature.

    `current_template_feat` overrides the memory's T_{t-1}. With `enabled` off the
    initial template is used as is (plain Siamese correlation).
    """
    if not enabled:
        return depthwise_correlate(mem.t0, search_feat), mem.t0
    if current_template_feat is not None:
        mem = replace(mem, t_prev=current_template_feat)
    alpha = tc.calibration(mem)
    fused = fuse_templates(mem, alpha)
    return depthwise_correlate(fused, search_feat), fused

"""
Square context crops around a target box
"""
import math
from dataclasses import dataclass
from typing import Tuple

import cv2
import numpy as np

from mttrack.core.exceptions import InputError
from mttrack.models.bbox import BBox


@dataclass(frozen=True)
class CropResult:
    """
    Resized crop plus the mapping back to the frame.

    Crop coordinate u maps to frame coordinate origin + u * scale.
    `pads` are (top, bottom, left, right) fill widths in frame pixels.
    """

    patch: np.ndarray
    origin: Tuple[int, int]
    side: int
    scale: float
    pads: Tuple[int, int, int, int]

    @property
    def fill_area(self) -> int:
        """Frame-resolution pixels of the window that lie outside the frame"""
        top, bottom, left, right = self.pads
        inner_h = max(self.side - top - bottom, 0)
        inner_w = max(self.side - left - right, 0)
        return self.side * self.side - inner_h * inner_w

    def to_frame(self, u: float, v: float) -> Tuple[float, float]:
        return self.origin[0] + u * self.scale, self.origin[1] + v * self.scale


def context_side(bbox: BBox, context_factor: float) -> float:
    """context_factor * sqrt((w + p)(h + p)) with p = (w + h) / 2"""
    p = (bbox.w + bbox.h) / 2.0
    return context_factor * math.sqrt((bbox.w + p) * (bbox.h + p))


def crop_patch(frame: np.ndarray, bbox: BBox, context_factor: float, out_size: int) -> CropResult:
    if frame.ndim != 3 or frame.shape[2] != 3 or frame.shape[0] == 0 or frame.shape[1] == 0:
        raise InputError(
            user_message=f"Frames must be non-empty [H, W, 3] images, got shape {frame.shape}.",
            details={"shape": list(frame.shape)},
        )
    if out_size <= 0:
        raise InputError(user_message=f"Crop size must be positive, got {out_size}.")
    height, width = frame.shape[:2]
    side = max(int(round(context_side(bbox, context_factor))), 1)
    x0 = int(round(bbox.cx - side / 2.0))
    y0 = int(round(bbox.cy - side / 2.0))
    x1, y1 = x0 + side, y0 + side

    top, left = max(0, -y0), max(0, -x0)
    bottom, right = max(0, y1 - height), max(0, x1 - width)
    mean = frame.mean(axis=(0, 1))
    inner = frame[max(y0, 0):min(y1, height), max(x0, 0):min(x1, width)]
    if inner.size == 0:
        window = np.empty((side, side, 3), dtype=frame.dtype)
        window[...] = mean.astype(frame.dtype)
    elif top or bottom or left or right:
        window = cv2.copyMakeBorder(inner, top, bottom, left, right, cv2.BORDER_CONSTANT, value=mean.tolist())
    else:
        window = inner

    patch = window if side == out_size else cv2.resize(window, (out_size, out_size), interpolation=cv2.INTER_LINEAR)
    return CropResult(
        patch=np.ascontiguousarray(patch),
        origin=(x0, y0),
        side=side,
        scale=side / out_size,
        pads=(min(top, side), min(bottom, side), min(left, side), min(right, side)),
    )

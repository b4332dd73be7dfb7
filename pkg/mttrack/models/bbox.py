import math
from dataclasses import dataclass
from typing import Tuple

from mttrack.core.exceptions import InputError


@dataclass(frozen=True)
class BBox:
    """
    Axis-aligned box in image pixels.

    Stored in corner form (x, y, w, h) so that reading and writing text files
    is exact; the centre (cx, cy) is derived.
    """

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        values = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in values):
            raise InputError(user_message=f"Box {values} has non-finite coordinates.")
        if self.w <= 0 or self.h <= 0:
            raise InputError(
                user_message=f"Box {values} must have positive width and height.",
                details={"box": list(values)},
            )

    @classmethod
    def from_corner(cls, x: float, y: float, w: float, h: float) -> "BBox":
        return cls(float(x), float(y), float(w), float(h))

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BBox":
        return cls(float(cx) - w / 2.0, float(cy) - h / 2.0, float(w), float(h))

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def x1(self) -> float:
        return self.x + self.w

    @property
    def y1(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_corner(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def to_center(self) -> Tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)

    def clamp(self, frame_w: float, frame_h: float, min_size: float = 1.0) -> "BBox":
        """Shrink/shift so the box lies inside [0, frame_w] x [0, frame_h] with sides >= min_size"""
        w = min(max(self.w, min_size), frame_w)
        h = min(max(self.h, min_size), frame_h)
        cx = min(max(self.cx, w / 2.0), frame_w - w / 2.0)
        cy = min(max(self.cy, h / 2.0), frame_h - h / 2.0)
        return BBox.from_center(cx, cy, w, h)

"""
Seeded synthetic tracking sequences.

A textured rectangle moves over a textured background along a piecewise-linear
path with jitter and gradual scale change. Optional distractor rectangles share
part of the target's texture; blur events and occluders model the usual UAV
challenge attributes. Ground-truth boxes are integer-aligned with the rendered
target, so the visible target's centroid is the box centre.
"""
import hashlib
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import cv2
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from mttrack.core.exceptions import SpecError
from mttrack.models.bbox import BBox
from mttrack.services.sequence_io import Sequence

logger = logging.getLogger(__name__)

ATTRIBUTES = ("occlusion", "motion_blur", "similar_object", "scale_variation", "fast_motion", "camera_motion")
OCCLUDER_COLOR = (96, 96, 96)
TEXTURE_CELLS = 4


class OcclusionEvent(BaseModel):
    model_config = ConfigDict(extra="forbid")

    start: int = Field(ge=0)
    duration: int = Field(gt=0)
    coverage: float = Field(ge=0.0, le=1.0)

    def active(self, frame: int) -> bool:
        return self.start <= frame < self.start + self.duration


class BlurEvent(BaseModel):
    model_config = ConfigDict(extra="forbid")

    start: int = Field(ge=0)
    duration: int = Field(gt=0)
    sigma: float = Field(default=2.0, gt=0.0)

    def active(self, frame: int) -> bool:
        return self.start <= frame < self.start + self.duration


class SyntheticSpec(BaseModel):
    """One sequence; sizes are (width, height) in pixels, waypoints are target centres"""

    model_config = ConfigDict(extra="forbid")

    name: str = "synthetic"
    num_frames: int = Field(default=100, ge=2)
    frame_size: Tuple[int, int] = (320, 240)
    target_size: Tuple[int, int] = (36, 28)
    waypoints: List[Tuple[float, float]] = Field(default_factory=list)
    jitter: float = Field(default=0.0, ge=0.0)
    scale_rate: float = 0.0
    distractors: int = Field(default=0, ge=0)
    distractor_similarity: float = Field(default=0.5, ge=0.0, le=1.0)
    camera_motion: float = Field(default=0.0, ge=0.0)
    blur: List[BlurEvent] = Field(default_factory=list)
    occlusions: List[OcclusionEvent] = Field(default_factory=list)
    seed: int = Field(default=0, ge=0, lt=2**64)

    def attributes(self) -> List[str]:
        tags = []
        if self.occlusions:
            tags.append("occlusion")
        if self.blur:
            tags.append("motion_blur")
        if self.distractors and self.distractor_similarity >= 0.5:
            tags.append("similar_object")
        if abs((1.0 + self.scale_rate) ** (self.num_frames - 1) - 1.0) > 0.3:
            tags.append("scale_variation")
        if self._max_speed() > 0.5 * min(self.target_size):
            tags.append("fast_motion")
        if self.camera_motion > 0:
            tags.append("camera_motion")
        return tags

    def _max_speed(self) -> float:
        if len(self.waypoints) < 2:
            return 0.0
        segment = (self.num_frames - 1) / (len(self.waypoints) - 1)
        steps = [math.dist(a, b) / segment for a, b in zip(self.waypoints[:-1], self.waypoints[1:])]
        return max(steps) + 2.0 * self.jitter


class SyntheticBenchmarkSpec(BaseModel):
    """
    A seeded family of sequences. Explicit `sequences` are used verbatim;
    otherwise `count` specs are drawn from the ranges below.
    """

    model_config = ConfigDict(extra="forbid")

    count: int = Field(default=20, gt=0)
    num_frames: int = Field(default=100, ge=2)
    frame_size: Tuple[int, int] = (320, 240)
    target_size_range: Tuple[int, int] = (24, 48)
    max_speed: float = Field(default=4.0, ge=0.0)
    num_waypoints: int = Field(default=3, ge=1)
    jitter: float = Field(default=1.0, ge=0.0)
    max_scale_rate: float = Field(default=0.004, ge=0.0)
    occlusion_probability: float = Field(default=0.3, ge=0.0, le=1.0)
    blur_probability: float = Field(default=0.3, ge=0.0, le=1.0)
    distractor_probability: float = Field(default=0.4, ge=0.0, le=1.0)
    camera_motion_probability: float = Field(default=0.2, ge=0.0, le=1.0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    sequences: List[SyntheticSpec] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_sizes(self) -> "SyntheticBenchmarkSpec":
        lo, hi = self.target_size_range
        if not 0 < lo <= hi:
            raise ValueError("target_size_range must be (min, max) with 0 < min <= max")
        return self

    def expand(self) -> List[SyntheticSpec]:
        if self.sequences:
            return list(self.sequences)
        rng = np.random.default_rng(self.seed)
        width, height = self.frame_size
        lo, hi = self.target_size_range
        specs = []
        for i in range(self.count):
            tw, th = (int(v) for v in rng.integers(lo, hi + 1, size=2))
            margin_x, margin_y = tw, th
            # path length bounded by max_speed per frame
            start = (float(rng.uniform(margin_x, width - margin_x)), float(rng.uniform(margin_y, height - margin_y)))
            waypoints = [start]
            step = (self.num_frames - 1) / max(self.num_waypoints - 1, 1)
            for _ in range(self.num_waypoints - 1):
                angle = rng.uniform(0.0, 2.0 * np.pi)
                dist = rng.uniform(0.0, self.max_speed) * step
                x = float(np.clip(waypoints[-1][0] + dist * np.cos(angle), margin_x, width - margin_x))
                y = float(np.clip(waypoints[-1][1] + dist * np.sin(angle), margin_y, height - margin_y))
                waypoints.append((x, y))

            occlusions = []
            if rng.random() < self.occlusion_probability:
                duration = int(rng.integers(3, max(4, self.num_frames // 8)))
                start_frame = int(rng.integers(1, max(2, self.num_frames - duration)))
                occlusions.append(OcclusionEvent(start=start_frame, duration=duration, coverage=float(rng.uniform(0.3, 1.0))))
            blur = []
            if rng.random() < self.blur_probability:
                duration = int(rng.integers(2, max(3, self.num_frames // 10)))
                start_frame = int(rng.integers(1, max(2, self.num_frames - duration)))
                blur.append(BlurEvent(start=start_frame, duration=duration, sigma=float(rng.uniform(1.0, 3.0))))
            distractors = int(rng.integers(1, 4)) if rng.random() < self.distractor_probability else 0
            camera = float(rng.uniform(0.5, 2.0)) if rng.random() < self.camera_motion_probability else 0.0

            specs.append(
                SyntheticSpec(
                    name=f"synth_{i + 1:03d}",
                    num_frames=self.num_frames,
                    frame_size=self.frame_size,
                    target_size=(tw, th),
                    waypoints=waypoints,
                    jitter=self.jitter,
                    scale_rate=float(rng.uniform(-self.max_scale_rate, self.max_scale_rate)),
                    distractors=distractors,
                    distractor_similarity=float(rng.uniform(0.3, 0.9)),
                    camera_motion=camera,
                    blur=blur,
                    occlusions=occlusions,
                    seed=int(rng.integers(0, 2**63)),
                )
            )
        return specs


def _texture(rng: np.random.Generator, width: int, height: int, cells: int) -> np.ndarray:
    """Blocky random colour pattern upsampled to (height, width)"""
    coarse = rng.integers(0, 256, size=(cells, cells, 3), dtype=np.uint8)
    return cv2.resize(coarse, (width, height), interpolation=cv2.INTER_NEAREST)


def _background(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    coarse = rng.integers(40, 216, size=(max(height // 16, 2), max(width // 16, 2), 3), dtype=np.uint8)
    smooth = cv2.resize(coarse, (width, height), interpolation=cv2.INTER_LINEAR)
    grain = rng.integers(-12, 13, size=(height, width, 3))
    return np.clip(smooth.astype(np.int16) + grain, 0, 255).astype(np.uint8)


def _trajectory(spec: SyntheticSpec, rng: np.random.Generator) -> List[BBox]:
    width, height = spec.frame_size
    tw0, th0 = spec.target_size
    n = spec.num_frames
    waypoints = spec.waypoints or [(width / 2.0, height / 2.0)]
    boxes = []
    for t in range(n):
        if len(waypoints) == 1:
            cx, cy = waypoints[0]
        else:
            pos = t * (len(waypoints) - 1) / (n - 1)
            k = min(int(pos), len(waypoints) - 2)
            frac = pos - k
            (x0, y0), (x1, y1) = waypoints[k], waypoints[k + 1]
            cx, cy = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        if spec.jitter > 0:
            dx, dy = rng.normal(0.0, spec.jitter, size=2)
            cx, cy = cx + dx, cy + dy
        factor = (1.0 + spec.scale_rate) ** t
        w = int(min(max(round(tw0 * factor), 4), width))
        h = int(min(max(round(th0 * factor), 4), height))
        x = int(min(max(round(cx - w / 2.0), 0), width - w))
        y = int(min(max(round(cy - h / 2.0), 0), height - h))
        boxes.append(BBox.from_corner(x, y, w, h))
    return boxes


@dataclass
class _Distractor:
    x: float
    y: float
    vx: float
    vy: float
    texture: np.ndarray


def generate_with_masks(spec: SyntheticSpec) -> Tuple[Sequence, List[np.ndarray]]:
    """Render the sequence and, per frame, the boolean mask of visible target pixels"""
    width, height = spec.frame_size
    tw, th = spec.target_size
    if tw <= 0 or th <= 0:
        raise SpecError(user_message=f"Target size {spec.target_size} must be positive.")
    if tw > width or th > height:
        raise SpecError(
            user_message=f"Target {tw}x{th} does not fit in a {width}x{height} frame.",
            details={"target_size": [tw, th], "frame_size": [width, height]},
        )
    for event in spec.occlusions:
        if event.start >= spec.num_frames:
            raise SpecError(user_message=f"Occlusion starting at frame {event.start} is past the last frame.")

    rng = np.random.default_rng(spec.seed)
    margin = int(math.ceil(spec.camera_motion * 10)) if spec.camera_motion > 0 else 0
    canvas = _background(rng, width + 2 * margin, height + 2 * margin)
    target_texture = _texture(rng, tw, th, TEXTURE_CELLS)
    gt = _trajectory(spec, rng)

    distractors = []
    for _ in range(spec.distractors):
        own = _texture(rng, tw, th, TEXTURE_CELLS)
        s = spec.distractor_similarity
        texture = np.clip(s * target_texture.astype(np.float64) + (1.0 - s) * own, 0, 255).astype(np.uint8)
        distractors.append(
            _Distractor(
                x=float(rng.uniform(0, width - tw)),
                y=float(rng.uniform(0, height - th)),
                vx=float(rng.uniform(-2.0, 2.0)),
                vy=float(rng.uniform(-2.0, 2.0)),
                texture=texture,
            )
        )

    frames, masks = [], []
    cam = np.zeros(2)
    for t, box in enumerate(gt):
        if margin:
            cam = np.clip(cam + rng.normal(0.0, spec.camera_motion, size=2), -margin, margin)
        ox, oy = int(round(cam[0])) + margin, int(round(cam[1])) + margin
        frame = canvas[oy:oy + height, ox:ox + width].copy()

        for d in distractors:
            dx, dy = int(round(d.x)), int(round(d.y))
            frame[dy:dy + th, dx:dx + tw] = d.texture
            d.x, d.y = d.x + d.vx, d.y + d.vy
            if not 0 <= d.x <= width - tw:
                d.vx = -d.vx
                d.x = float(np.clip(d.x, 0, width - tw))
            if not 0 <= d.y <= height - th:
                d.vy = -d.vy
                d.y = float(np.clip(d.y, 0, height - th))

        x, y, w, h = (int(v) for v in box.to_corner())
        frame[y:y + h, x:x + w] = cv2.resize(target_texture, (w, h), interpolation=cv2.INTER_NEAREST)
        mask = np.zeros((height, width), dtype=bool)
        mask[y:y + h, x:x + w] = True

        for event in spec.occlusions:
            if event.active(t):
                covered = int(math.ceil(event.coverage * w))
                frame[y:y + h, x:x + covered] = OCCLUDER_COLOR
                mask[y:y + h, x:x + covered] = False

        for event in spec.blur:
            if event.active(t):
                frame = cv2.GaussianBlur(frame, (0, 0), event.sigma)

        frames.append(frame)
        masks.append(mask)

    meta = {
        "generator": "synthetic",
        "spec": spec.model_dump(mode="json"),
    }
    seq = Sequence(name=spec.name, frames=frames, gt=gt, attributes=spec.attributes(), meta=meta)
    return seq, masks


def generate_synthetic(spec: SyntheticSpec) -> Sequence:
    seq, _ = generate_with_masks(spec)
    return seq


def sequence_digest(seq: Sequence) -> str:
    """sha256 over pixel data and ground truth"""
    digest = hashlib.sha256()
    for i in range(len(seq)):
        digest.update(np.ascontiguousarray(seq.frame(i)).tobytes())
    for box in seq.gt:
        digest.update(repr(box.to_corner()).encode())
    return digest.hexdigest()


def manifest_entry(spec: SyntheticSpec, seq: Sequence, digest: Optional[str] = None) -> dict:
    return {
        "name": seq.name,
        "frames": len(seq),
        "attributes": list(seq.attributes),
        "occlusions": [
            {"start": e.start, "end": e.start + e.duration - 1, "coverage": e.coverage} for e in spec.occlusions
        ],
        "blur": [{"start": e.start, "end": e.start + e.duration - 1, "sigma": e.sigma} for e in spec.blur],
        "seed": spec.seed,
        "sha256": digest or sequence_digest(seq),
    }

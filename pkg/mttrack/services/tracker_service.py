"""
Online tracking: initialisation on the first frame, per-frame localisation and the gated template update
"""
import io
import logging
import struct
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from mttrack.compute import ops
from mttrack.compute.tensor import Tensor, no_grad
from mttrack.core.config import TrackerConfig
from mttrack.core.exceptions import InputError
from mttrack.models.bbox import BBox
from mttrack.models.mutual_transformer import HistoricalMapState
from mttrack.models.temporal_correlation import (
    TemplateMemory,
    depthwise_correlate,
    update_memory,
)
from mttrack.models.tracker_model import MTTrackModel
from mttrack.services.image_ops import CropResult, crop_patch
from mttrack.services.sequence_io import Sequence

logger = logging.getLogger(__name__)

STAGES = ("backbone", "temporal_correlation", "mutual_transformer", "head")


class StageTimer:
    """Accumulates wall-clock milliseconds per named stage"""

    def __init__(self):
        self.totals: Dict[str, float] = defaultdict(float)
        self.calls: Dict[str, int] = defaultdict(int)

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.totals[name] += (time.perf_counter() - start) * 1000.0
            self.calls[name] += 1

    def mean_ms(self) -> Dict[str, float]:
        return {name: self.totals[name] / self.calls[name] for name in self.totals if self.calls[name]}


@contextmanager
def _maybe(timer: Optional[StageTimer], name: str) -> Iterator[None]:
    if timer is None:
        yield
    else:
        with timer.stage(name):
            yield


@dataclass(frozen=True)
class TrackerState:
    bbox: BBox
    score: float
    mem: TemplateMemory
    hist_map: HistoricalMapState
    frame_size: Tuple[int, int]
    params: MTTrackModel = field(repr=False, compare=False)

    def to_bytes(self) -> bytes:
        """Serialise the per-sequence state (the shared parameters are not part of it)"""
        buf = io.BytesIO()
        buf.write(struct.pack("<4dd2I?", *self.bbox.to_corner(), self.score, *self.frame_size, self.hist_map.encoded))
        arrays = [self.mem.t0.data, self.mem.t_prev.data, *[f.data for f in self.mem.feats], self.hist_map.m_hist.tokens.data]
        for array in arrays:
            buf.write(struct.pack("<I", array.ndim))
            buf.write(struct.pack(f"<{array.ndim}I", *array.shape))
            buf.write(np.ascontiguousarray(array, dtype="<f4").tobytes())
        return buf.getvalue()

    def nbytes(self) -> int:
        """In-memory size of the per-sequence arrays"""
        return self.mem.nbytes() + self.hist_map.nbytes()


@dataclass(frozen=True)
class TargetSelection:
    bbox: BBox
    score: float
    cell: Tuple[int, int]
    # centre-form box decoded at the chosen cell, in frame pixels, before smoothing
    raw_center: Tuple[float, float, float, float]
    score_map: np.ndarray


def hanning_window(height: int, width: int) -> np.ndarray:
    return np.outer(np.hanning(height), np.hanning(width))


def cell_point(row: int, col: int, map_size: Tuple[int, int], cfg: TrackerConfig) -> Tuple[float, float]:
    """Search-crop point of a score-map cell; the map centre sits on the crop centre"""
    h, w = map_size
    x = cfg.search_size / 2.0 + (col - (w - 1) / 2.0) * cfg.stride
    y = cfg.search_size / 2.0 + (row - (h - 1) / 2.0) * cfg.stride
    return x, y


def select_target(
    cls: Tensor,
    reg: Tensor,
    prev_bbox: BBox,
    cfg: TrackerConfig,
    crop: CropResult,
    frame_size: Tuple[int, int],
) -> TargetSelection:
    """
    Pick the best cell of the window-penalised score map and decode its box.

    The returned score is the raw classification logit at that cell.
    """
    logits = cls.data[..., 0].astype(np.float64)
    h, w = logits.shape
    prob = ops.sigmoid(Tensor(logits)).data
    score_map = (1.0 - cfg.window_influence) * prob + cfg.window_influence * hanning_window(h, w)
    row, col = np.unravel_index(int(np.argmax(score_map)), score_map.shape)

    px, py = cell_point(row, col, (h, w), cfg)
    left, top, right, bottom = reg.data[row, col].astype(np.float64) * cfg.stride
    cx_crop = px + (right - left) / 2.0
    cy_crop = py + (bottom - top) / 2.0
    cx, cy = crop.to_frame(cx_crop, cy_crop)
    pw, ph = (left + right) * crop.scale, (top + bottom) * crop.scale

    lam = cfg.smoothing
    frame_w, frame_h = frame_size
    bbox = BBox.from_center(
        lam * cx + (1.0 - lam) * prev_bbox.cx,
        lam * cy + (1.0 - lam) * prev_bbox.cy,
        max(lam * pw + (1.0 - lam) * prev_bbox.w, cfg.min_box_size),
        max(lam * ph + (1.0 - lam) * prev_bbox.h, cfg.min_box_size),
    ).clamp(frame_w, frame_h, cfg.min_box_size)
    return TargetSelection(
        bbox=bbox,
        score=float(logits[row, col]),
        cell=(int(row), int(col)),
        raw_center=(float(cx), float(cy), float(pw), float(ph)),
        score_map=score_map,
    )


def to_crop_box(bbox: BBox, crop: CropResult) -> BBox:
    return BBox.from_corner(
        (bbox.x - crop.origin[0]) / crop.scale,
        (bbox.y - crop.origin[1]) / crop.scale,
        bbox.w / crop.scale,
        bbox.h / crop.scale,
    )


def _check_frame(frame: np.ndarray) -> Tuple[int, int]:
    if frame.ndim != 3 or frame.shape[2] != 3 or min(frame.shape[:2]) == 0:
        raise InputError(user_message=f"Frames must be non-empty [H, W, 3] images, got shape {frame.shape}.")
    return frame.shape[1], frame.shape[0]


class TrackerService:
    """Single-target tracker over a shared, read-only model"""

    def __init__(self, model: MTTrackModel, timer: Optional[StageTimer] = None):
        self.model = model
        self.cfg = model.cfg
        self.timer = timer

    def _mask(self, feature: Tensor, bbox: BBox, crop: CropResult) -> Tensor:
        return self.model.mask_target(feature, to_crop_box(bbox, crop)).feature

    def init(self, frame: np.ndarray, bbox: BBox) -> TrackerState:
        frame_size = _check_frame(frame)
        frame_w, frame_h = frame_size
        if bbox.x1 <= 0 or bbox.y1 <= 0 or bbox.x >= frame_w or bbox.y >= frame_h:
            raise InputError(
                user_message=f"Initial box {bbox.to_corner()} lies outside the {frame_w}x{frame_h} frame.",
            )
        cfg, flags = self.cfg, self.cfg.ablation
        with no_grad():
            template = crop_patch(frame, bbox, cfg.context_amount, cfg.template_size)
            search = crop_patch(frame, bbox, cfg.search_context, cfg.search_size)
            t0 = self.model.features(template.patch)
            f0 = self.model.features(search.patch)
            mem = TemplateMemory.initialize(
                t0,
                self._mask(f0, bbox, search),
                beta=self.model.temporal.beta,
                capacity=cfg.n_hist,
                tau=cfg.tau,
            )
            hist_map = self.model.transformer.init_state(depthwise_correlate(t0, f0), use_encoder=flags.encoder)
        logger.debug(f"Tracker initialised at {bbox.to_corner()} ({flags.name})")
        return TrackerState(bbox=bbox, score=0.0, mem=mem, hist_map=hist_map, frame_size=frame_size, params=self.model)

    def track(self, state: TrackerState, frame: np.ndarray) -> Tuple[BBox, float, TrackerState]:
        frame_size = _check_frame(frame)
        cfg, flags, model = self.cfg, self.cfg.ablation, self.model
        with no_grad():
            search = crop_patch(frame, state.bbox, cfg.search_context, cfg.search_size)
            with _maybe(self.timer, "backbone"):
                feature = self.model.features(search.patch)
            with _maybe(self.timer, "temporal_correlation"):
                corr, fused = model.temporal(state.mem, feature, enabled=flags.temporal_correlation)
            with _maybe(self.timer, "mutual_transformer"):
                if flags.mutual_transformer:
                    refined, hist_map = model.transformer(
                        corr, state.hist_map, use_encoder=flags.encoder, use_filter=flags.filter
                    )
                else:
                    refined, hist_map = corr, state.hist_map
            with _maybe(self.timer, "head"):
                cls, reg = model.head(refined)
                selection = select_target(cls, reg, state.bbox, cfg, search, frame_size)
            mem = update_memory(state.mem, self._mask(feature, selection.bbox, search), fused, selection.score)

        new_state = TrackerState(
            bbox=selection.bbox,
            score=selection.score,
            mem=mem,
            hist_map=hist_map,
            frame_size=frame_size,
            params=model,
        )
        return selection.bbox, selection.score, new_state


def track_sequence(tracker: TrackerService, frames: Iterable[np.ndarray], init_bbox: BBox) -> Tuple[List[BBox], List[Optional[float]]]:
    """One pass: init on the first frame, then track every remaining frame without re-initialisation"""
    frames = iter(frames)
    first = next(frames, None)
    if first is None:
        raise InputError(user_message="Cannot track a sequence without frames.")
    state = tracker.init(first, init_bbox)
    boxes: List[BBox] = [init_bbox]
    scores: List[Optional[float]] = [None]
    for frame in frames:
        bbox, score, state = tracker.track(state, frame)
        boxes.append(bbox)
        scores.append(score)
    return boxes, scores


class SequenceRunner:
    """Adapts TrackerService to the one-pass evaluation interface"""

    def __init__(self, model: MTTrackModel, timer: Optional[StageTimer] = None):
        self.tracker = TrackerService(model, timer)

    def run(self, seq: Sequence) -> Tuple[List[BBox], List[Optional[float]]]:
        return track_sequence(self.tracker, seq.iter_frames(), seq.gt[0])

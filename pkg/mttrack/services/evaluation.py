"""
One-pass evaluation metrics: precision and success curves, AUC and centre location error
"""
import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from mttrack.core.exceptions import ContractError, DataIOError
from mttrack.models.bbox import BBox

logger = logging.getLogger(__name__)

PRECISION_THRESHOLDS = np.arange(51, dtype=np.float64)
SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 51)
PRECISION_AT = 20


def iou(a: BBox, b: BBox) -> float:
    return float(_iou_array(_corners([a]), _corners([b]))[0])


def cle(a: BBox, b: BBox) -> float:
    return math.hypot(a.cx - b.cx, a.cy - b.cy)


def _corners(boxes: Sequence[BBox]) -> np.ndarray:
    return np.array([b.to_corner() for b in boxes], dtype=np.float64).reshape(-1, 4)


def _iou_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    left = np.maximum(a[:, 0], b[:, 0])
    right = np.minimum(a[:, 0] + a[:, 2], b[:, 0] + b[:, 2])
    top = np.maximum(a[:, 1], b[:, 1])
    bottom = np.minimum(a[:, 1] + a[:, 3], b[:, 1] + b[:, 3])
    inter = np.maximum(0.0, right - left) * np.maximum(0.0, bottom - top)
    union = a[:, 2] * a[:, 3] + b[:, 2] * b[:, 3] - inter
    return np.clip(inter / union, 0.0, 1.0)


def _cle_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ca = a[:, :2] + a[:, 2:] / 2.0
    cb = b[:, :2] + b[:, 2:] / 2.0
    return np.hypot(ca[:, 0] - cb[:, 0], ca[:, 1] - cb[:, 1])


@dataclass
class TrackResult:
    boxes: List[BBox]
    scores: List[Optional[float]]
    # None when the run was not timed
    fps: Optional[float] = None


class SequenceMetrics(BaseModel):
    model_config = ConfigDict(extra="forbid")

    precision_curve: List[float]
    success_curve: List[float]
    auc: float
    precision_at_20: float
    mean_cle: float
    fps: Optional[float] = None


class MetricsReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sequences: Dict[str, SequenceMetrics]
    aggregate: SequenceMetrics
    attributes: Dict[str, SequenceMetrics] = Field(default_factory=dict)
    failed: Dict[str, str] = Field(default_factory=dict)


def sequence_metrics(boxes: Sequence[BBox], gt: Sequence[BBox], fps: Optional[float] = None) -> SequenceMetrics:
    if len(boxes) != len(gt):
        raise ContractError(
            user_message=f"Result has {len(boxes)} boxes but ground truth has {len(gt)}.",
            details={"boxes": len(boxes), "gt": len(gt)},
        )
    if not gt:
        raise ContractError(user_message="Cannot evaluate an empty sequence.")
    pred, truth = _corners(boxes), _corners(gt)
    errors = _cle_array(pred, truth)
    overlaps = _iou_array(pred, truth)
    precision = (errors[None, :] <= PRECISION_THRESHOLDS[:, None]).mean(axis=1)
    success = (overlaps[None, :] > SUCCESS_THRESHOLDS[:, None]).mean(axis=1)
    return SequenceMetrics(
        precision_curve=precision.tolist(),
        success_curve=success.tolist(),
        auc=float(success.mean()),
        precision_at_20=float(precision[PRECISION_AT]),
        mean_cle=float(errors.mean()),
        fps=fps,
    )


def average_metrics(items: Sequence[SequenceMetrics]) -> SequenceMetrics:
    """Unweighted mean over sequences"""
    if not items:
        raise ContractError(user_message="No sequences to aggregate.")
    precision = np.mean([m.precision_curve for m in items], axis=0)
    success = np.mean([m.success_curve for m in items], axis=0)
    fps = [m.fps for m in items if m.fps is not None]
    return SequenceMetrics(
        precision_curve=precision.tolist(),
        success_curve=success.tolist(),
        auc=float(success.mean()),
        precision_at_20=float(precision[PRECISION_AT]),
        mean_cle=float(np.mean([m.mean_cle for m in items])),
        fps=float(np.mean(fps)) if fps else None,
    )


def compute_metrics(
    results: Mapping[str, TrackResult],
    gts: Mapping[str, Sequence[BBox]],
    attributes: Optional[Mapping[str, Sequence[str]]] = None,
    failed: Optional[Mapping[str, str]] = None,
) -> MetricsReport:
    if not results:
        raise ContractError(user_message="No sequences to evaluate.")
    missing = sorted(set(results) - set(gts))
    if missing:
        raise ContractError(
            user_message=f"No ground truth for sequences: {', '.join(missing)}.",
            details={"missing": missing},
        )
    per_sequence = {
        name: sequence_metrics(results[name].boxes, gts[name], results[name].fps)
        for name in sorted(results)
    }

    by_attribute: Dict[str, List[SequenceMetrics]] = {}
    for name, metrics in per_sequence.items():
        for tag in (attributes or {}).get(name, ()):
            by_attribute.setdefault(tag, []).append(metrics)

    return MetricsReport(
        sequences=per_sequence,
        aggregate=average_metrics(list(per_sequence.values())),
        attributes={tag: average_metrics(items) for tag, items in sorted(by_attribute.items())},
        failed=dict(failed or {}),
    )


def combine_reports(reports: Mapping[str, MetricsReport]) -> MetricsReport:
    """Average the aggregates of several benchmarks (each benchmark weighs the same)"""
    if not reports:
        raise ContractError(user_message="No reports to combine.")
    aggregates = {name: report.aggregate for name, report in sorted(reports.items())}
    return MetricsReport(sequences=aggregates, aggregate=average_metrics(list(aggregates.values())))


def _write_curve(path: Path, thresholds: np.ndarray, values: Sequence[float]) -> None:
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["threshold", "value"])
        for threshold, value in zip(thresholds, values):
            writer.writerow([repr(float(threshold)), repr(float(value))])


def write_report(report: MetricsReport, out_dir: Path, name: str = "metrics") -> Path:
    """Write `<name>.json` and per-sequence/aggregate curve CSVs under `curves/`"""
    out_dir = Path(out_dir)
    try:
        curves = out_dir / "curves"
        curves.mkdir(parents=True, exist_ok=True)
        target = out_dir / f"{name}.json"
        target.write_text(json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
        entries = dict(report.sequences)
        entries["aggregate"] = report.aggregate
        for label, metrics in entries.items():
            _write_curve(curves / f"{label}_precision.csv", PRECISION_THRESHOLDS, metrics.precision_curve)
            _write_curve(curves / f"{label}_success.csv", SUCCESS_THRESHOLDS, metrics.success_curve)
    except OSError as e:
        raise DataIOError(user_message=f"Could not write the metrics report to '{out_dir}'.", technical_message=str(e))
    logger.info(f"Metrics written to {target}")
    return target


def read_report(path: Path) -> MetricsReport:
    path = Path(path)
    try:
        return MetricsReport.model_validate_json(path.read_text())
    except FileNotFoundError:
        raise DataIOError(user_message=f"Metrics report '{path}' does not exist.", details={"path": str(path)})

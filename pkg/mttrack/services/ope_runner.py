"""
One-pass evaluation over many sequences with a worker pool
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Protocol, Tuple

from mttrack.core.exceptions import BaseTrackingException, InputError
from mttrack.models.bbox import BBox
from mttrack.services.evaluation import MetricsReport, TrackResult, compute_metrics
from mttrack.services.sequence_io import Sequence

logger = logging.getLogger(__name__)


class SequenceTracker(Protocol):
    """Anything that can run one pass over a sequence"""

    def run(self, seq: Sequence) -> Tuple[List[BBox], List[Optional[float]]]:
        ...


TrackerFactory = Callable[[], SequenceTracker]


def _run_one(factory: TrackerFactory, seq: Sequence) -> TrackResult:
    tracker = factory()
    start = time.perf_counter()
    boxes, scores = tracker.run(seq)
    elapsed = time.perf_counter() - start
    if len(boxes) != len(seq):
        raise InputError(
            user_message=f"Tracker returned {len(boxes)} boxes for {len(seq)} frames of '{seq.name}'.",
        )
    fps = (len(seq) - 1) / elapsed if elapsed > 0 else 0.0
    return TrackResult(boxes=list(boxes), scores=list(scores), fps=fps)


def run_ope(
    factory: TrackerFactory,
    sequences: List[Sequence],
    threads: int = 1,
) -> Tuple[Dict[str, TrackResult], MetricsReport]:
    """
    Init on frame 0 with the ground-truth box and track every remaining frame
    without re-initialisation. A sequence whose tracker raises is excluded from
    the report and listed under `failed`.
    """
    if not sequences:
        raise InputError(user_message="No sequences to evaluate.")
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = [(seq, pool.submit(_run_one, factory, seq)) for seq in sequences]

    results: Dict[str, TrackResult] = {}
    failed: Dict[str, str] = {}
    for seq, future in futures:
        try:
            results[seq.name] = future.result()
            logger.info(f"Sequence {seq.name}: {len(seq)} frames at {results[seq.name].fps:.1f} FPS")
        except Exception as e:
            reason = e.user_message if isinstance(e, BaseTrackingException) else f"{type(e).__name__}: {e}"
            failed[seq.name] = reason
            logger.warning(f"Sequence {seq.name} failed and is excluded from the report: {reason}")

    if not results:
        raise InputError(
            user_message="Every sequence failed; nothing to evaluate.",
            details={"failed": failed},
        )
    report = compute_metrics(
        results,
        {seq.name: seq.gt for seq in sequences},
        attributes={seq.name: seq.attributes for seq in sequences},
        failed=failed,
    )
    return results, report

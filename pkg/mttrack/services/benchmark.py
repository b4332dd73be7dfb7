"""
Service for timing the tracker and accounting for its parameters and matmuls
"""
import logging
import time
from pathlib import Path
from typing import Dict, Optional

import numpy as np
from pydantic import BaseModel

from mttrack.compute import ops
from mttrack.compute.tensor import no_grad
from mttrack.core.exceptions import InputError
from mttrack.models.mutual_transformer import HistoricalMapState
from mttrack.models.tracker_model import MTTrackModel, analytic_parameter_count
from mttrack.services.checkpoint_service import read_checkpoint
from mttrack.services.sequence_io import Sequence
from mttrack.services.tracker_service import STAGES, StageTimer, TrackerService, TrackerState

logger = logging.getLogger(__name__)


class ParameterAccount(BaseModel):
    analytic: Dict[str, int]
    model_total: int
    checkpoint_total: Optional[int] = None
    matches: bool


class MatmulAccount(BaseModel):
    per_frame_reuse: int
    per_frame_no_reuse: int
    saved_per_decoder_layer: float


class BenchmarkReport(BaseModel):
    sequence: str
    frames: int
    fps: float
    stage_ms: Dict[str, float]
    parameters: ParameterAccount
    matmuls: MatmulAccount
    state_bytes: int


def parameter_account(model: MTTrackModel, checkpoint: Optional[Path] = None) -> ParameterAccount:
    """Closed-form counts next to the model's and the checkpoint's actual tensor sizes"""
    analytic = analytic_parameter_count(model.cfg)
    checkpoint_total = None
    if checkpoint is not None:
        header, _ = read_checkpoint(checkpoint)
        checkpoint_total = int(sum(np.prod(t["shape"], dtype=np.int64) for t in header["tensors"]))
        if header["config"].get("n_hist") != model.cfg.n_hist:
            # the checkpoint holds the weights before calibration resampling
            stored = model.cfg.model_copy(update={"n_hist": header["config"]["n_hist"]})
            checkpoint_matches = checkpoint_total == analytic_parameter_count(stored)["total"]
        else:
            checkpoint_matches = checkpoint_total == analytic["total"]
    else:
        checkpoint_matches = True
    model_total = model.num_parameters()
    return ParameterAccount(
        analytic=analytic,
        model_total=model_total,
        checkpoint_total=checkpoint_total,
        matches=checkpoint_matches and model_total == analytic["total"],
    )


def _count_transformer_matmuls(model: MTTrackModel, state: TrackerState, reuse_logits: bool) -> int:
    flags = model.cfg.ablation
    current = state.hist_map.m_hist.to_map()
    # steady-state frame: the history is a decoder output that still goes through the encoder
    history = HistoricalMapState(state.hist_map.m_hist)
    with no_grad(), ops.count_matmuls() as counter:
        model.transformer(current, history, use_encoder=flags.encoder, use_filter=flags.filter, reuse_logits=reuse_logits)
    return counter.count


class BenchmarkService:
    """Service for timing one sequence end to end"""

    def __init__(self, model: MTTrackModel):
        self.model = model

    def run(self, seq: Sequence, frames: Optional[int] = None, checkpoint: Optional[Path] = None) -> BenchmarkReport:
        """
        Track the first `frames` frames after initialisation (all by default).

        FPS covers tracked frames only; stage times are per-frame means.
        """
        limit = len(seq) - 1 if frames is None else min(frames, len(seq) - 1)
        if limit <= 0:
            raise InputError(user_message=f"--frames must be positive, got {frames}.")

        timer = StageTimer()
        tracker = TrackerService(self.model, timer)
        state = tracker.init(seq.frame(0), seq.gt[0])
        init_state = state

        start = time.perf_counter()
        for index in range(1, limit + 1):
            _, _, state = tracker.track(state, seq.frame(index))
        elapsed = time.perf_counter() - start
        fps = limit / elapsed if elapsed > 0 else 0.0

        stage_ms = timer.mean_ms()
        logger.info(
            f"Benchmark {seq.name}: {limit} frames at {fps:.1f} FPS, "
            + ", ".join(f"{name} {stage_ms.get(name, 0.0):.2f} ms" for name in STAGES)
        )

        # matmul accounting on the transformer alone, matmuls outside it do not depend on logits reuse
        with_reuse = _count_transformer_matmuls(self.model, init_state, reuse_logits=True)
        without_reuse = _count_transformer_matmuls(self.model, init_state, reuse_logits=False)
        layers = max(self.model.cfg.dec_layers, 1)

        return BenchmarkReport(
            sequence=seq.name,
            frames=limit,
            fps=fps,
            stage_ms={name: stage_ms.get(name, 0.0) for name in STAGES},
            parameters=parameter_account(self.model, checkpoint),
            matmuls=MatmulAccount(
                per_frame_reuse=with_reuse,
                per_frame_no_reuse=without_reuse,
                saved_per_decoder_layer=(without_reuse - with_reuse) / layers,
            ),
            state_bytes=state.nbytes(),
        )

from functools import lru_cache
from pathlib import Path
from typing import List

import numpy as np
import pytest

from mttrack.core.config import AblationFlags, RunConfig, TrackerConfig, TrainConfig
from mttrack.models.tracker_model import MTTrackModel
from mttrack.services.sequence_io import Sequence, write_sequence
from mttrack.services.synthetic import SyntheticBenchmarkSpec, SyntheticSpec, generate_synthetic
from mttrack.services.trainer import toy_train

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def tiny_tracker_config(**overrides) -> TrackerConfig:
    """47/87 crops, 12 channels, fp64: a 6x6 score map that runs in milliseconds"""
    values = dict(
        template_size=47,
        search_size=87,
        channels=12,
        backbone_channels=(4, 8, 12),
        head_channels=8,
        heads=6,
        L_train=2,
        dtype="float64",
    )
    values.update(overrides)
    return TrackerConfig(**values)


def moving_spec(**overrides) -> SyntheticSpec:
    values = dict(
        name="moving",
        num_frames=8,
        frame_size=(128, 96),
        target_size=(20, 16),
        waypoints=[(40.0, 40.0), (80.0, 56.0)],
        seed=1,
    )
    values.update(overrides)
    return SyntheticSpec(**values)


class OracleTracker:
    """Returns the ground truth"""

    def run(self, seq: Sequence):
        return list(seq.gt), [None] + [10.0] * (len(seq) - 1)


class StaticTracker:
    """Never moves from the initial box"""

    def run(self, seq: Sequence):
        return [seq.gt[0]] * len(seq), [None] + [0.0] * (len(seq) - 1)


class CrashingTracker:
    def run(self, seq: Sequence):
        raise RuntimeError(f"boom on {seq.name}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg() -> TrackerConfig:
    return tiny_tracker_config()


@pytest.fixture
def tiny_model(tiny_cfg) -> MTTrackModel:
    return MTTrackModel(tiny_cfg)


@pytest.fixture
def tiny_run(tiny_cfg) -> RunConfig:
    train = TrainConfig(epochs=1, batch_size=2, samples_per_epoch=2, max_shift=8.0)
    return RunConfig(tracker=tiny_cfg, train=train)


@pytest.fixture
def moving_sequence() -> Sequence:
    return generate_synthetic(moving_spec())


@pytest.fixture
def static_sequence() -> Sequence:
    return generate_synthetic(moving_spec(name="static", waypoints=[(64.0, 48.0)]))


@pytest.fixture
def sequence_root(tmp_path, moving_sequence, static_sequence):
    """Two sequences on disk in the OTB layout"""
    root = tmp_path / "data"
    write_sequence(moving_sequence, root / moving_sequence.name)
    write_sequence(static_sequence, root / static_sequence.name)
    return root


@lru_cache(maxsize=None)
def toy_benchmark() -> List[Sequence]:
    """The seeded 20 x 100 synthetic benchmark of configs/synth.json"""
    spec = SyntheticBenchmarkSpec.model_validate_json((CONFIG_DIR / "synth.json").read_text())
    return [generate_synthetic(s) for s in spec.expand()]


@lru_cache(maxsize=None)
def trained_toy_model(ablation: str = "full") -> MTTrackModel:
    """configs/toy.json trained on the toy benchmark; shared by the slow tests"""
    run = RunConfig.load(str(CONFIG_DIR / "toy.json"), {"tracker.ablation": AblationFlags.preset(ablation).model_dump()})
    return toy_train(toy_benchmark(), run).model

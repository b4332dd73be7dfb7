import pytest

from mttrack.core.exceptions import InputError
from mttrack.models.tracker_model import MTTrackModel
from mttrack.services.ope_runner import run_ope
from mttrack.services.tracker_service import SequenceRunner

from tests.conftest import CrashingTracker, OracleTracker, StaticTracker


class ShortTracker:
    def run(self, seq):
        return list(seq.gt[:-1]), [None] * (len(seq) - 1)


def test_oracle_scores_perfectly(moving_sequence, static_sequence):
    results, report = run_ope(OracleTracker, [moving_sequence, static_sequence])
    assert set(results) == {"moving", "static"}
    assert report.aggregate.precision_at_20 == 1.0
    assert report.aggregate.auc == pytest.approx(50 / 51)
    assert report.failed == {}


def test_static_tracker_is_perfect_only_on_the_static_sequence(moving_sequence, static_sequence):
    _, report = run_ope(StaticTracker, [moving_sequence, static_sequence])
    assert report.sequences["static"].auc == pytest.approx(50 / 51)
    assert report.sequences["moving"].auc < report.sequences["static"].auc


def test_failing_sequence_is_excluded(moving_sequence, static_sequence):
    calls = iter([OracleTracker(), CrashingTracker()])
    _, report = run_ope(lambda: next(calls), [moving_sequence, static_sequence], threads=1)
    assert list(report.sequences) == ["moving"]
    assert "boom on static" in report.failed["static"]


def test_all_failures_raise(moving_sequence):
    with pytest.raises(InputError):
        run_ope(CrashingTracker, [moving_sequence])


def test_wrong_box_count_is_a_failure(moving_sequence, static_sequence):
    calls = iter([ShortTracker(), OracleTracker()])
    _, report = run_ope(lambda: next(calls), [moving_sequence, static_sequence], threads=1)
    assert "moving" in report.failed


def test_empty_sequence_list():
    with pytest.raises(InputError):
        run_ope(OracleTracker, [])


def test_threads_do_not_change_results(tiny_cfg, moving_sequence, static_sequence):
    model = MTTrackModel(tiny_cfg)
    serial, _ = run_ope(lambda: SequenceRunner(model), [moving_sequence, static_sequence], threads=1)
    parallel, _ = run_ope(lambda: SequenceRunner(model), [moving_sequence, static_sequence], threads=2)
    for name in serial:
        assert serial[name].boxes == parallel[name].boxes
        assert serial[name].scores == parallel[name].scores
    assert all(r.fps > 0 for r in serial.values())

import math

import numpy as np
import pytest

from mttrack.compute.tensor import Tensor
from mttrack.core.config import RunConfig, TrainConfig
from mttrack.core.exceptions import InputError
from mttrack.models.bbox import BBox
from mttrack.models.tracker_model import MTTrackModel
from mttrack.services.trainer import (
    Trainer,
    assign_targets,
    classification_loss,
    draw_sample,
    iou_loss,
    toy_train,
)

from tests.conftest import tiny_tracker_config

SELECT_CFG = tiny_tracker_config(search_size=79, template_size=47)


class TestTargets:
    def test_small_target_marks_only_the_centre_cell(self):
        labels, targets = assign_targets(BBox.from_center(39.5, 39.5, 16, 16), (5, 5), SELECT_CFG, 0.6)
        assert labels.sum() == 1 and labels[2, 2]
        np.testing.assert_allclose(targets[2, 2], [1.0, 1.0, 1.0, 1.0])

    def test_large_target_marks_the_cross(self):
        labels, _ = assign_targets(BBox.from_center(39.5, 39.5, 40, 40), (5, 5), SELECT_CFG, 0.6)
        expected = np.zeros((5, 5), dtype=bool)
        expected[2, 1:4] = True
        expected[1:4, 2] = True
        np.testing.assert_array_equal(labels, expected)

    def test_falls_back_to_the_nearest_cell(self):
        labels, _ = assign_targets(BBox.from_center(42.0, 42.0, 2, 2), (5, 5), SELECT_CFG, 0.6)
        assert labels.sum() == 1 and labels[2, 2]

    def test_regression_targets_are_in_stride_units(self):
        gt = BBox.from_corner(20, 24, 40, 32)
        _, targets = assign_targets(gt, (5, 5), SELECT_CFG, 0.6)
        # cell (0, 0) sits at crop point (23.5, 23.5)
        np.testing.assert_allclose(targets[0, 0], [3.5 / 8, -0.5 / 8, 36.5 / 8, 32.5 / 8])


class TestLosses:
    def test_zero_logits_give_log_two(self):
        labels = np.zeros((5, 5), dtype=bool)
        labels[2, 2] = True
        loss = classification_loss(Tensor(np.zeros((5, 5, 1))), labels)
        assert loss.item() == pytest.approx(math.log(2.0))

    def test_all_positive_labels(self):
        loss = classification_loss(Tensor(np.zeros((3, 3, 1))), np.ones((3, 3), dtype=bool))
        assert loss.item() == pytest.approx(math.log(2.0))

    def test_classes_are_balanced(self):
        labels = np.zeros((5, 5), dtype=bool)
        labels[0, 0] = True
        logits = np.zeros((5, 5, 1))
        logits[0, 0] = 50.0
        # positive term vanishes, negatives still cost 0.5 * log 2
        assert classification_loss(Tensor(logits), labels).item() == pytest.approx(0.5 * math.log(2.0))

    def test_iou_loss_of_exact_offsets_is_zero(self):
        targets = np.full((3, 3, 4), 2.0)
        labels = np.ones((3, 3), dtype=bool)
        assert iou_loss(Tensor(targets.copy()), targets, labels).item() == pytest.approx(0.0, abs=1e-6)

    def test_iou_loss_of_nested_boxes(self):
        targets = np.full((3, 3, 4), 2.0)
        labels = np.zeros((3, 3), dtype=bool)
        labels[1, 1] = True
        assert iou_loss(Tensor(np.ones((3, 3, 4))), targets, labels).item() == pytest.approx(0.75, abs=1e-6)

    def test_iou_loss_gradient_reaches_positive_cells_only(self):
        reg = Tensor(np.ones((3, 3, 4)), requires_grad=True)
        labels = np.zeros((3, 3), dtype=bool)
        labels[0, 2] = True
        iou_loss(reg, np.full((3, 3, 4), 2.0), labels).backward()
        assert np.abs(reg.grad[0, 2]).sum() > 0
        reg.grad[0, 2] = 0.0
        assert not reg.grad.any()

    @pytest.mark.parametrize("start,expected", [(1e-3, 1.25e-4), (1.0, 0.125)])
    def test_iou_loss_gradient_scales_with_predicted_size(self, start, expected):
        reg = Tensor(np.full((1, 1, 4), start), requires_grad=True)
        iou_loss(reg, np.full((1, 1, 4), 2.0), np.ones((1, 1), dtype=bool)).backward()
        np.testing.assert_allclose(reg.grad[0, 0], -expected, rtol=1e-3)


class TestSampling:
    def test_sample_layout(self, moving_sequence, tiny_cfg, rng):
        train = TrainConfig(max_frame_gap=3, max_shift=8.0)
        for _ in range(50):
            sample = draw_sample(moving_sequence, tiny_cfg, train, rng)
            assert 0 <= sample.template < sample.search < len(moving_sequence)
            assert sample.search - sample.template <= 3
            assert len(sample.history) == tiny_cfg.L_train
            assert list(sample.history) == sorted(sample.history)
            assert all(sample.template <= h < sample.search for h in sample.history)
            assert all(abs(s) <= 8.0 for s in sample.shift)


class TestTrainer:
    def test_requires_sequences(self, tiny_run):
        with pytest.raises(InputError):
            Trainer(MTTrackModel(tiny_run.tracker), tiny_run.train).fit([])

    def test_sample_loss_reaches_every_component(self, tiny_cfg, moving_sequence, rng):
        model = MTTrackModel(tiny_cfg)
        trainer = Trainer(model, TrainConfig(max_shift=8.0))
        sample = draw_sample(moving_sequence, tiny_cfg, trainer.train, rng)
        loss, cls_loss, reg_loss = trainer.sample_loss(moving_sequence, sample)
        assert loss.item() == pytest.approx(cls_loss + reg_loss)
        loss.backward()
        for param in (
            model.backbone.stage1.weight,
            model.temporal.calibration.w1.weight,
            model.transformer.decoders[0].filter.w1.weight,
            model.head.cls_out.weight,
        ):
            assert param.grad is not None and np.isfinite(param.grad).all()

    def test_toy_train_trace(self, tiny_run, moving_sequence):
        result = toy_train([moving_sequence], tiny_run)
        assert len(result.trace) == 1
        record = result.trace[0]
        assert record.epoch == 0 and record.step == 0
        assert record.lr == tiny_run.train.lr_start
        assert np.isfinite(record.loss) and record.grad_norm > 0
        assert result.losses == [record.loss]

    def test_training_updates_weights(self, tiny_run, moving_sequence):
        before = MTTrackModel(tiny_run.tracker).state_dict()
        after = toy_train([moving_sequence], tiny_run).model.state_dict()
        assert any(not np.array_equal(before[k], after[k]) for k in before)

    def test_frozen_backbone_is_untouched(self, tiny_cfg, moving_sequence):
        run = RunConfig(
            tracker=tiny_cfg,
            train=TrainConfig(epochs=1, batch_size=1, samples_per_epoch=1, max_shift=8.0, freeze_backbone_epochs=1),
        )
        before = MTTrackModel(tiny_cfg).state_dict()
        after = toy_train([moving_sequence], run).model.state_dict()
        for name in before:
            if name.startswith("backbone."):
                np.testing.assert_array_equal(before[name], after[name])

    def test_training_is_deterministic(self, tiny_run, moving_sequence):
        assert toy_train([moving_sequence], tiny_run).losses == toy_train([moving_sequence], tiny_run).losses


@pytest.mark.slow
def test_overfits_a_single_sample(tiny_cfg, moving_sequence):
    model = MTTrackModel(tiny_cfg)
    trainer = Trainer(model, TrainConfig(lr_start=1e-2, max_shift=4.0))
    sample = draw_sample(moving_sequence, tiny_cfg, trainer.train, np.random.default_rng(0))
    losses = []
    for _ in range(200):
        trainer.optimizer.zero_grad()
        loss, _, _ = trainer.sample_loss(moving_sequence, sample)
        loss.backward()
        trainer.optimizer.step()
        losses.append(loss.item())
    assert min(losses) < 0.05


import math

import numpy as np
import pytest

from mttrack.compute import ops
from mttrack.compute.gradcheck import grad_check
from mttrack.compute.nn import Parameter
from mttrack.compute.tensor import Tensor
from mttrack.core.exceptions import DimensionError
from mttrack.models.bbox import BBox
from mttrack.models.temporal_correlation import (
    CalibrationWeight,
    TemplateMemory,
    TemporalCorrelation,
    compute_alpha,
    depthwise_correlate,
    fuse_templates,
    mask_by_bbox,
    temporal_correlation_forward,
    update_memory,
)
from mttrack.services.selftest import MEMORY_SCENARIOS, run_memory_scenario


def rand(rng, *shape):
    return Tensor(rng.standard_normal(shape))


def memory(rng, c=4, capacity=3, beta=0.0, feats=None):
    mem = TemplateMemory.initialize(
        rand(rng, 3, 3, c), rand(rng, 8, 8, c), beta=Parameter(np.full(1, beta)), capacity=capacity
    )
    if feats is not None:
        mem = TemplateMemory(mem.t0, mem.t_prev, tuple(feats), capacity, mem.tau, mem.beta)
    return mem


class TestDepthwiseCorrelate:
    def test_unit_template_is_identity(self, rng):
        search = rand(rng, 6, 6, 3)
        out = depthwise_correlate(Tensor(np.ones((1, 1, 3))), search)
        np.testing.assert_array_equal(out.data, search.data)

    def test_zero_template_gives_zero_map(self, rng):
        out = depthwise_correlate(Tensor(np.zeros((3, 3, 2))), rand(rng, 7, 7, 2))
        assert out.shape == (5, 5, 2)
        assert not out.data.any()

    def test_template_larger_than_search(self, rng):
        with pytest.raises(DimensionError):
            depthwise_correlate(rand(rng, 9, 9, 2), rand(rng, 8, 8, 2))


class TestMaskByBBox:
    def test_full_frame_box_keeps_feature(self, rng):
        feature = rand(rng, 8, 8, 2)
        masked = mask_by_bbox(feature, BBox(0, 0, 64, 64), stride=8)
        np.testing.assert_array_equal(masked.feature.data, feature.data)
        assert not masked.empty

    def test_box_outside_grid_is_flagged(self, rng):
        masked = mask_by_bbox(rand(rng, 8, 8, 2), BBox(200, 200, 10, 10), stride=8)
        assert masked.empty
        assert not masked.feature.data.any()

    def test_centred_box_matches_index_projection(self, rng):
        feature = rand(rng, 8, 8, 2)
        bbox = BBox(20, 18, 24, 20)
        masked = mask_by_bbox(feature, bbox, stride=8)
        expected = np.zeros_like(feature.data)
        for r in range(8):
            for c in range(8):
                # cell spans [8c, 8c + 8): keep it if it overlaps the box
                if 8 * c < bbox.x1 and 8 * c + 8 > bbox.x and 8 * r < bbox.y1 and 8 * r + 8 > bbox.y:
                    expected[r, c] = feature.data[r, c]
        np.testing.assert_array_equal(masked.feature.data, expected)
        assert masked.rows == (2, 5) and masked.cols == (2, 6)

    def test_offset_shifts_the_grid(self, rng):
        masked = mask_by_bbox(rand(rng, 8, 8, 1), BBox(11.5, 11.5, 8, 8), stride=8, offset=11.5)
        assert masked.rows == (0, 1) and masked.cols == (0, 1)


class TestCalibration:
    def test_zero_queue_gives_zero_alpha(self, rng):
        cw = CalibrationWeight(4, 3, rng, dtype=np.float64)
        mem = memory(rng, feats=[Tensor(np.zeros((8, 8, 4)))] * 3)
        np.testing.assert_array_equal(compute_alpha(mem, cw).data, 0.0)

    def test_constant_features_with_averaging_weight(self, rng):
        c = 4
        cw = CalibrationWeight(c, 3, rng, dtype=np.float64)
        cw.w1.weight.data = np.concatenate([np.eye(c)] * 3, axis=0) / 3.0
        values = np.array([0.5, -1.0, 2.0, 3.0])
        mem = memory(rng, feats=[Tensor(np.broadcast_to(values, (8, 8, c)).copy())] * 3)
        np.testing.assert_allclose(compute_alpha(mem, cw).data, values)

    def test_random_queue_matches_composed_oracle(self, rng):
        c = 4
        cw = CalibrationWeight(c, 3, rng, dtype=np.float64)
        cw.w1.bias.data = rng.standard_normal(c)
        feats = [rand(rng, 8, 8, c) for _ in range(3)]
        pooled = np.concatenate([f.data.mean(axis=(0, 1)) for f in feats])
        expected = pooled @ cw.w1.weight.data + cw.w1.bias.data
        np.testing.assert_allclose(compute_alpha(memory(rng, feats=feats), cw).data, expected, atol=1e-12)

    def test_slot_mismatch(self, rng):
        cw = CalibrationWeight(4, 3, rng, dtype=np.float64)
        with pytest.raises(DimensionError):
            compute_alpha(memory(rng, capacity=2), cw)

    def test_resampled_slots_keep_alpha_on_identical_queue(self, rng):
        c = 4
        cw = CalibrationWeight(c, 3, rng, dtype=np.float64)
        feat = rand(rng, 8, 8, c)
        before = compute_alpha(memory(rng, feats=[feat] * 3), cw).data
        cw.resize_slots(5)
        after = compute_alpha(memory(rng, capacity=5, feats=[feat] * 5), cw).data
        np.testing.assert_allclose(after, before, atol=1e-12)

    def test_zero_slots_give_zero_alpha(self, rng):
        cw = CalibrationWeight(4, 3, rng, dtype=np.float64)
        cw.resize_slots(0)
        mem = memory(rng, capacity=0)
        assert mem.feats == ()
        np.testing.assert_array_equal(compute_alpha(mem, cw).data, 0.0)


class TestFusion:
    def test_zero_beta_returns_initial_template(self, rng):
        mem = memory(rng, beta=0.0)
        mem = TemplateMemory(mem.t0, rand(rng, 3, 3, 4), mem.feats, 3, 3.0, mem.beta)
        fused = fuse_templates(mem, rand(rng, 4))
        np.testing.assert_array_equal(fused.data, mem.t0.data)

    def test_unit_beta_and_alpha_add_previous(self, rng):
        mem = memory(rng, beta=1.0)
        mem = TemplateMemory(mem.t0, rand(rng, 3, 3, 4), mem.feats, 3, 3.0, mem.beta)
        fused = fuse_templates(mem, Tensor(np.ones(4)))
        np.testing.assert_allclose(fused.data, mem.t0.data + mem.t_prev.data)

    def test_random_case_matches_loop(self, rng):
        mem = memory(rng, beta=0.37)
        mem = TemplateMemory(mem.t0, rand(rng, 3, 3, 4), mem.feats, 3, 3.0, mem.beta)
        alpha = rand(rng, 4)
        expected = np.empty((3, 3, 4))
        for i in range(3):
            for j in range(3):
                for k in range(4):
                    expected[i, j, k] = mem.t0.data[i, j, k] + 0.37 * alpha.data[k] * mem.t_prev.data[i, j, k]
        np.testing.assert_allclose(fuse_templates(mem, alpha).data, expected, atol=1e-12)

    def test_alpha_length_checked(self, rng):
        with pytest.raises(DimensionError):
            fuse_templates(memory(rng), rand(rng, 3))


class TestMemoryGating:
    def test_score_equal_to_tau_is_rejected(self, rng):
        mem = memory(rng)
        assert update_memory(mem, rand(rng, 8, 8, 4), rand(rng, 3, 3, 4), 3.0) is mem

    def test_accepted_frame_pops_oldest(self, rng):
        mem = memory(rng)
        new = rand(rng, 8, 8, 4)
        template = rand(rng, 3, 3, 4)
        updated = update_memory(mem, new, template, 4.0)
        assert len(updated.feats) == 3
        np.testing.assert_array_equal(updated.feats[-1].data, new.data)
        np.testing.assert_array_equal(updated.t_prev.data, template.data)
        assert updated.t0 is mem.t0

    def test_non_finite_score_leaves_memory(self, rng):
        mem = memory(rng)
        assert update_memory(mem, rand(rng, 8, 8, 4), rand(rng, 3, 3, 4), math.nan) is mem

    @pytest.mark.parametrize("scores,expected", MEMORY_SCENARIOS)
    def test_scripted_fifo(self, scores, expected):
        assert run_memory_scenario(scores) == expected

    def test_low_scores_keep_memory_bit_identical(self, rng):
        mem = memory(rng)
        t0, t_prev, feats = mem.t0.data.copy(), mem.t_prev.data.copy(), [f.data.copy() for f in mem.feats]
        for score in rng.uniform(-5, 3, size=20):
            mem = update_memory(mem, rand(rng, 8, 8, 4), rand(rng, 3, 3, 4), float(score))
        np.testing.assert_array_equal(mem.t0.data, t0)
        np.testing.assert_array_equal(mem.t_prev.data, t_prev)
        for a, b in zip(mem.feats, feats):
            np.testing.assert_array_equal(a.data, b)

    def test_fifo_keeps_last_accepted_in_order(self, rng):
        mem = memory(rng)
        accepted = []
        for i in range(5):
            feat = Tensor(np.full((8, 8, 4), float(i)))
            accepted.append(feat)
            mem = update_memory(mem, feat, rand(rng, 3, 3, 4), 10.0)
        assert [f.data[0, 0, 0] for f in mem.feats] == [2.0, 3.0, 4.0]


class TestForward:
    def test_zero_beta_reduces_to_plain_correlation(self, rng):
        tc = TemporalCorrelation(4, 3, rng, dtype=np.float64)
        mem = TemplateMemory.initialize(rand(rng, 3, 3, 4), rand(rng, 8, 8, 4), beta=tc.beta)
        mem = update_memory(mem, rand(rng, 8, 8, 4), rand(rng, 3, 3, 4), 9.0)
        search = rand(rng, 8, 8, 4)
        out, fused = temporal_correlation_forward(mem, tc, search)
        np.testing.assert_array_equal(out.data, depthwise_correlate(mem.t0, search).data)
        np.testing.assert_array_equal(fused.data, mem.t0.data)

    def test_zero_search_gives_zero_map(self, rng):
        tc = TemporalCorrelation(4, 3, rng, dtype=np.float64)
        tc.beta.data[...] = 0.8
        mem = TemplateMemory.initialize(rand(rng, 3, 3, 4), rand(rng, 8, 8, 4), beta=tc.beta)
        out, _ = temporal_correlation_forward(mem, tc, Tensor(np.zeros((8, 8, 4))))
        assert not out.data.any()

    def test_random_instance_matches_composition(self, rng):
        tc = TemporalCorrelation(4, 3, rng, dtype=np.float64)
        tc.beta.data[...] = 0.5
        mem = TemplateMemory.initialize(rand(rng, 3, 3, 4), rand(rng, 8, 8, 4), beta=tc.beta)
        current = rand(rng, 3, 3, 4)
        search = rand(rng, 8, 8, 4)
        out, _ = temporal_correlation_forward(mem, tc, search, current_template_feat=current)
        alpha = ops.global_avg_pool(ops.concat(list(mem.feats), axis=2)).data @ tc.calibration.w1.weight.data
        fused = mem.t0.data + 0.5 * alpha * current.data
        expected = depthwise_correlate(Tensor(fused), search).data
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_disabled_uses_initial_template(self, rng):
        tc = TemporalCorrelation(4, 3, rng, dtype=np.float64)
        tc.beta.data[...] = 2.0
        mem = TemplateMemory.initialize(rand(rng, 3, 3, 4), rand(rng, 8, 8, 4), beta=tc.beta)
        search = rand(rng, 8, 8, 4)
        out, fused = temporal_correlation_forward(mem, tc, search, enabled=False)
        assert fused is mem.t0
        np.testing.assert_array_equal(out.data, depthwise_correlate(mem.t0, search).data)

    def test_gradients_reach_beta_weight_and_templates(self, rng):
        tc = TemporalCorrelation(4, 3, rng, dtype=np.float64)
        tc.beta.data[...] = 0.6
        t0, t_prev = rand(rng, 3, 3, 4), rand(rng, 3, 3, 4)
        feats = tuple(rand(rng, 8, 8, 4) for _ in range(3))
        search = rand(rng, 8, 8, 4)
        weights = rng.standard_normal((6, 6, 4))

        def f(xs):
            mem = TemplateMemory(xs[0], xs[1], feats, 3, 3.0, xs[2])
            out, _ = temporal_correlation_forward(mem, tc, search)
            return ops.sum(ops.mul(out, weights))

        assert grad_check(f, [t0, t_prev, tc.beta, tc.calibration.w1.weight], max_coords=40) <= 1e-4

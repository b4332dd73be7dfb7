import math

import numpy as np
import pytest

from mttrack.compute.tensor import Tensor
from mttrack.core.config import TrackerConfig
from mttrack.core.exceptions import DimensionError, InputError
from mttrack.models.backbone import ToyBackbone
from mttrack.models.bbox import BBox
from mttrack.models.head import REG_BIAS_INIT, head_forward
from mttrack.models.tracker_model import MTTrackModel, analytic_parameter_count

from tests.conftest import tiny_tracker_config


class TestBBox:
    def test_centre_round_trip(self):
        box = BBox.from_center(50.0, 40.0, 20.0, 10.0)
        assert box.to_corner() == (40.0, 35.0, 20.0, 10.0)
        assert box.to_center() == (50.0, 40.0, 20.0, 10.0)
        assert (box.x1, box.y1, box.area) == (60.0, 45.0, 200.0)

    @pytest.mark.parametrize("values", [(0, 0, 0, 5), (0, 0, 5, -1), (math.nan, 0, 5, 5), (0, math.inf, 5, 5)])
    def test_invalid_boxes(self, values):
        with pytest.raises(InputError):
            BBox.from_corner(*values)

    def test_clamp_keeps_box_inside_frame(self):
        box = BBox.from_corner(-10, 90, 30, 30).clamp(100, 100)
        assert box.to_corner() == (0.0, 70.0, 30.0, 30.0)

    def test_clamp_enforces_min_size(self):
        box = BBox.from_center(50, 50, 0.5, 0.5).clamp(100, 100, min_size=2.0)
        assert (box.w, box.h) == (2.0, 2.0)
        assert (box.cx, box.cy) == (50.0, 50.0)


class TestBackbone:
    @pytest.mark.parametrize("size,expected", [(127, 13), (287, 33), (47, 3), (87, 8), (79, 7)])
    def test_output_size(self, size, expected):
        assert ToyBackbone.output_size(size) == expected

    def test_forward_matches_output_size(self, tiny_model):
        patch = np.full((87, 87, 3), 128, dtype=np.uint8)
        assert tiny_model.features(patch).shape == (8, 8, 12)

    def test_preprocess_rejects_grayscale(self, tiny_model):
        with pytest.raises(InputError):
            tiny_model.backbone.preprocess(np.zeros((47, 47), dtype=np.uint8))

    def test_cell_offset(self, tiny_model):
        assert tiny_model.backbone.stride == 8
        assert tiny_model.backbone.cell_offset == 11.5


class TestHead:
    def test_output_shapes_and_positive_offsets(self, tiny_model, rng):
        cls, reg = head_forward(Tensor(rng.standard_normal((6, 6, 12))), tiny_model.head)
        assert cls.shape == (6, 6, 1)
        assert reg.shape == (6, 6, 4)
        assert np.all(reg.data >= 0.0)

    def test_offsets_start_near_one_stride_unit(self, tiny_model):
        np.testing.assert_array_equal(tiny_model.head.reg_out.bias.data, np.full(4, REG_BIAS_INIT))

    def test_every_offset_is_active_at_init(self, tiny_model, rng):
        _, reg = head_forward(Tensor(rng.standard_normal((6, 6, 12))), tiny_model.head)
        assert np.all(reg.data > 0.0)

    def test_zero_input_with_zeroed_final_layers(self, tiny_cfg):
        head = MTTrackModel(tiny_cfg).head
        for layer in (head.cls_out, head.reg_out):
            layer.weight.data[...] = 0.0
            layer.bias.data[...] = 0.0
        cls, reg = head(Tensor(np.zeros((6, 6, 12), dtype=np.float32)))
        assert not cls.data.any() and not reg.data.any()

    def test_channel_mismatch(self, tiny_model):
        with pytest.raises(DimensionError):
            tiny_model.head(Tensor(np.zeros((6, 6, 8))))


class TestModel:
    def test_default_parameter_count(self):
        counts = analytic_parameter_count(TrackerConfig())
        assert counts["backbone"] == 314624
        assert counts["temporal_correlation"] == 110785
        assert counts["head"] == 224197
        assert sum(v for k, v in counts.items() if k.startswith("mutual_transformer.")) == 743232
        assert counts["total"] == 1392838

    def test_analytic_count_matches_instance(self, tiny_model, tiny_cfg):
        assert analytic_parameter_count(tiny_cfg)["total"] == tiny_model.num_parameters()

    def test_equal_seeds_give_identical_weights(self, tiny_cfg):
        a, b = MTTrackModel(tiny_cfg).state_dict(), MTTrackModel(tiny_cfg).state_dict()
        assert a.keys() == b.keys()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_different_seeds_differ(self):
        a = MTTrackModel(tiny_tracker_config(seed=1)).state_dict()
        b = MTTrackModel(tiny_tracker_config(seed=2)).state_dict()
        assert any(not np.array_equal(a[name], b[name]) for name in a)

    def test_parameters_are_named_by_path(self, tiny_model):
        names = [p.name for p in tiny_model.parameters()]
        assert "temporal.beta" in names
        assert "transformer.decoders.1.mutual.hist_proj.weight" in names
        assert len(set(names)) == len(names)

    def test_resize_memory(self, tiny_cfg):
        model = MTTrackModel(tiny_cfg)
        model.resize_memory(5)
        assert model.cfg.n_hist == 5
        assert model.temporal.calibration.w1.weight.shape == (60, 12)
        assert model.num_parameters() == analytic_parameter_count(model.cfg)["total"]

    def test_mask_target_uses_backbone_grid(self, tiny_model, rng):
        feature = Tensor(rng.standard_normal((8, 8, 12)))
        masked = tiny_model.mask_target(feature, BBox.from_corner(27.5, 27.5, 16, 16))
        assert masked.rows == (2, 4) and masked.cols == (2, 4)

"""
Full tracking network: toy backbone, temporal correlation, mutual transformer and head
"""
import logging
from typing import Dict

import numpy as np

from mttrack.compute.nn import Module
from mttrack.compute.tensor import Tensor
from mttrack.core.config import TrackerConfig
from mttrack.models.backbone import KERNEL, ToyBackbone
from mttrack.models.bbox import BBox
from mttrack.models.head import LocalizationHead
from mttrack.models.mutual_transformer import AttentionConfig, MutualTransformer, parameter_breakdown
from mttrack.models.temporal_correlation import MaskedFeature, TemporalCorrelation, mask_by_bbox

logger = logging.getLogger(__name__)


def attention_config(cfg: TrackerConfig) -> AttentionConfig:
    return AttentionConfig(
        heads=cfg.heads,
        model_dim=cfg.channels,
        encoder_layers=cfg.enc_layers,
        decoder_layers=cfg.dec_layers,
        reduction=cfg.reduction,
    )


class MTTrackModel(Module):
    """
    Parameters are drawn from one generator seeded with `cfg.seed` in a fixed
    construction order, so equal seeds give bit-identical models.
    """

    def __init__(self, cfg: TrackerConfig, shared_projections: bool = False):
        self.cfg = cfg
        dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng(cfg.seed)
        self.backbone = ToyBackbone(cfg.channels, cfg.backbone_channels, rng, dtype=dtype)
        self.temporal = TemporalCorrelation(cfg.channels, cfg.n_hist, rng, dtype=dtype)
        self.transformer = MutualTransformer(attention_config(cfg), rng, dtype=dtype, shared_projections=shared_projections)
        self.head = LocalizationHead(cfg.channels, cfg.head_channels, rng, dtype=dtype)
        self.name_parameters()

    def features(self, patch: np.ndarray) -> Tensor:
        """uint8 image patch -> backbone feature map"""
        return self.backbone(self.backbone.preprocess(patch))

    def mask_target(self, feature: Tensor, crop_box: BBox) -> MaskedFeature:
        """Zero feature cells outside a box given in crop pixels"""
        return mask_by_bbox(feature, crop_box, self.backbone.stride, self.backbone.cell_offset)

    def backbone_parameters(self):
        return self.backbone.parameters()

    def resize_memory(self, n_hist: int) -> None:
        """Run with a memory capacity different from the one the weights were trained for"""
        self.temporal.calibration.resize_slots(n_hist)
        self.cfg = self.cfg.model_copy(update={"n_hist": n_hist})
        self.name_parameters()


def analytic_parameter_count(cfg: TrackerConfig) -> Dict[str, int]:
    """Closed-form parameter count per component of the configured model"""
    c, hc = cfg.channels, cfg.head_channels
    k2 = KERNEL * KERNEL
    widths = (3, *cfg.backbone_channels, c)
    backbone = sum(k2 * cin * cout + cout for cin, cout in zip(widths[:-1], widths[1:]))
    temporal = 1 + max(cfg.n_hist, 1) * c * c + c
    head = 2 * (k2 * c * hc + hc) + (k2 * hc + 1) + (k2 * hc * 4 + 4)
    counts = {"backbone": backbone, "temporal_correlation": temporal}
    counts.update({f"mutual_transformer.{k}": v for k, v in parameter_breakdown(attention_config(cfg)).items()})
    counts["head"] = head
    counts["total"] = sum(counts.values())
    return counts

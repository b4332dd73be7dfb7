"""
Toy-scale training of the full tracker on sequence pairs.

Each sample is a template frame, a search frame at most `max_frame_gap` frames
later and `L_train` historical frames in between. The historical frames run
without gradient and are pushed into the template memory as reliable frames;
their correlation maps build the historical map the search frame is refined
against. The loss is class-balanced BCE on the score map plus an IoU loss on
the regression of positive cells.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import List, Sequence as Seq, Tuple

import numpy as np

from mttrack.compute import ops
from mttrack.compute.optim import SGD, log_space_lr
from mttrack.compute.tensor import Tensor, no_grad
from mttrack.core.config import RunConfig, TrackerConfig, TrainConfig
from mttrack.core.exceptions import InputError
from mttrack.models.bbox import BBox
from mttrack.models.temporal_correlation import (
    TemplateMemory,
    depthwise_correlate,
    push_memory,
)
from mttrack.models.tracker_model import MTTrackModel
from mttrack.services.evaluation import iou
from mttrack.services.image_ops import CropResult, crop_patch
from mttrack.services.sequence_io import Sequence
from mttrack.services.tracker_service import cell_point, to_crop_box

logger = logging.getLogger(__name__)

IOU_EPS = 1e-6


@dataclass(frozen=True)
class TrainingSample:
    sequence: str
    template: int
    history: Tuple[int, ...]
    search: int
    shift: Tuple[float, float]
    scale: float


@dataclass
class StepRecord:
    epoch: int
    step: int
    lr: float
    loss: float
    cls_loss: float
    reg_loss: float
    grad_norm: float


@dataclass
class TrainResult:
    model: MTTrackModel
    trace: List[StepRecord] = field(default_factory=list)

    @property
    def losses(self) -> List[float]:
        return [r.loss for r in self.trace]


def draw_sample(seq: Sequence, cfg: TrackerConfig, train: TrainConfig, rng: np.random.Generator) -> TrainingSample:
    n = len(seq)
    search = int(rng.integers(1, n))
    template = int(rng.integers(max(0, search - train.max_frame_gap), search))
    pool = np.arange(template, search)
    history = np.sort(rng.choice(pool, size=cfg.L_train, replace=pool.size < cfg.L_train)) if cfg.L_train else []
    shift = tuple(float(v) for v in rng.uniform(-train.max_shift, train.max_shift, size=2))
    scale = float(np.exp(rng.uniform(-train.max_scale_jitter, train.max_scale_jitter)))
    return TrainingSample(seq.name, template, tuple(int(h) for h in history), search, shift, scale)


def assign_targets(gt_crop: BBox, map_size: Tuple[int, int], cfg: TrackerConfig, positive_iou: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Positive cells: a gt-sized box centred on the cell point overlaps gt with
    IoU > positive_iou and the point lies inside gt. Falls back to the cell
    nearest the gt centre. Regression targets are (l, t, r, b) in stride units.
    """
    h, w = map_size
    labels = np.zeros((h, w), dtype=bool)
    targets = np.zeros((h, w, 4), dtype=np.float64)
    best, best_dist = (0, 0), np.inf
    for r in range(h):
        for c in range(w):
            px, py = cell_point(r, c, map_size, cfg)
            targets[r, c] = (
                (px - gt_crop.x) / cfg.stride,
                (py - gt_crop.y) / cfg.stride,
                (gt_crop.x1 - px) / cfg.stride,
                (gt_crop.y1 - py) / cfg.stride,
            )
            inside = gt_crop.x <= px <= gt_crop.x1 and gt_crop.y <= py <= gt_crop.y1
            if inside and iou(BBox.from_center(px, py, gt_crop.w, gt_crop.h), gt_crop) > positive_iou:
                labels[r, c] = True
            dist = (px - gt_crop.cx) ** 2 + (py - gt_crop.cy) ** 2
            if dist < best_dist:
                best, best_dist = (r, c), dist
    if not labels.any():
        labels[best] = True
    return labels, targets


def classification_loss(cls: Tensor, labels: np.ndarray) -> Tensor:
    """0.5 * mean BCE over positives + 0.5 * mean BCE over negatives"""
    positives = labels.sum()
    negatives = labels.size - positives
    weights = np.where(labels, 0.5 / max(positives, 1), 0.5 / max(negatives, 1))
    if negatives == 0:
        weights = np.full(labels.shape, 1.0 / labels.size)
    bce = ops.bce_with_logits(cls.reshape(labels.shape), labels.astype(cls.dtype))
    return ops.sum(ops.mul(bce, weights.astype(cls.dtype)))


def iou_loss(reg: Tensor, targets: np.ndarray, labels: np.ndarray) -> Tensor:
    """mean (1 - IoU) of (l, t, r, b) boxes anchored at the same point, over positive cells"""
    rows, cols = np.nonzero(labels)
    pred = ops.getitem(reg, (rows, cols))
    target = Tensor(targets[rows, cols].astype(reg.dtype))

    def side(x, k):
        return ops.getitem(x, (slice(None), k))

    pl, pt, pr, pb = (side(pred, k) for k in range(4))
    tl, tt, tr, tb = (side(target, k) for k in range(4))
    inter_w = ops.minimum(pl, tl) + ops.minimum(pr, tr)
    inter_h = ops.minimum(pt, tt) + ops.minimum(pb, tb)
    inter = inter_w * inter_h
    union = (pl + pr) * (pt + pb) + (tl + tr) * (tt + tb) - inter
    overlap = inter / (union + IOU_EPS)
    return ops.mean(1.0 - overlap)


class Trainer:
    def __init__(self, model: MTTrackModel, train: TrainConfig, seed: int = 0):
        self.model = model
        self.cfg = model.cfg
        self.train = train
        self.rng = np.random.default_rng(seed)
        self.optimizer = SGD(
            model.parameters(),
            lr=train.lr_start,
            momentum=train.momentum,
            weight_decay=train.weight_decay,
            grad_clip=train.grad_clip,
        )

    def _mask(self, feature: Tensor, bbox: BBox, crop: CropResult) -> Tensor:
        return self.model.mask_target(feature, to_crop_box(bbox, crop)).feature

    def sample_loss(self, seq: Sequence, sample: TrainingSample) -> Tuple[Tensor, float, float]:
        cfg, flags, model = self.cfg, self.cfg.ablation, self.model
        template_box = seq.gt[sample.template]
        template_frame = seq.frame(sample.template)

        t0 = model.features(crop_patch(template_frame, template_box, cfg.context_amount, cfg.template_size).patch)

        # Step 1: memory and historical map from the template and history frames, without gradient
        with no_grad():
            first = crop_patch(template_frame, template_box, cfg.search_context, cfg.search_size)
            f0 = model.features(first.patch)
            t0_data = t0.detach()
            mem = TemplateMemory.initialize(
                t0_data, self._mask(f0, template_box, first), beta=model.temporal.beta, capacity=cfg.n_hist, tau=cfg.tau
            )
            hist = model.transformer.init_state(depthwise_correlate(t0_data, f0), use_encoder=flags.encoder)
            for index in sample.history:
                box = seq.gt[index]
                crop = crop_patch(seq.frame(index), box, cfg.search_context, cfg.search_size)
                feature = model.features(crop.patch)
                corr, fused = model.temporal(mem, feature, enabled=flags.temporal_correlation)
                if flags.mutual_transformer:
                    _, hist = model.transformer(corr, hist, use_encoder=flags.encoder, use_filter=flags.filter)
                mem = push_memory(mem, self._mask(feature, box, crop), fused)

        # Step 2: search frame with a jittered crop centre and scale
        gt = seq.gt[sample.search]
        centre = BBox.from_center(
            gt.cx + sample.shift[0], gt.cy + sample.shift[1], gt.w * sample.scale, gt.h * sample.scale
        )
        crop = crop_patch(seq.frame(sample.search), centre, cfg.search_context, cfg.search_size)
        feature = model.features(crop.patch)
        corr, _ = model.temporal(replace(mem, t0=t0), feature, enabled=flags.temporal_correlation)
        if flags.mutual_transformer:
            refined, _ = model.transformer(corr, hist, use_encoder=flags.encoder, use_filter=flags.filter)
        else:
            refined = corr
        cls, reg = model.head(refined)

        # Step 3: targets and loss
        labels, targets = assign_targets(to_crop_box(gt, crop), cls.shape[:2], cfg, self.train.positive_iou)
        cls_loss = classification_loss(cls, labels)
        reg_loss = iou_loss(reg, targets, labels)
        return cls_loss + reg_loss, cls_loss.item(), reg_loss.item()

    def fit(self, sequences: Seq[Sequence]) -> TrainResult:
        if not sequences:
            raise InputError(user_message="Training needs at least one sequence.")
        train = self.train
        steps_per_epoch = max(1, train.samples_per_epoch // train.batch_size)
        result = TrainResult(model=self.model)
        backbone = self.model.backbone_parameters()
        step = 0
        for epoch in range(train.epochs):
            self.optimizer.lr = log_space_lr(epoch, train.epochs, train.lr_start, train.lr_end)
            frozen = backbone if epoch < train.freeze_backbone_epochs else ()
            for _ in range(steps_per_epoch):
                record = self._step(sequences, epoch, step, frozen)
                result.trace.append(record)
                step += 1
            epoch_losses = [r.loss for r in result.trace[-steps_per_epoch:]]
            logger.info(
                f"Epoch {epoch + 1}/{train.epochs}: lr {self.optimizer.lr:.2e}, mean loss {np.mean(epoch_losses):.4f}"
            )
        return result

    def _step(self, sequences: Seq[Sequence], epoch: int, step: int, frozen) -> StepRecord:
        self.optimizer.zero_grad()
        total = cls_total = reg_total = 0.0
        batch = self.train.batch_size
        for _ in range(batch):
            seq = sequences[int(self.rng.integers(len(sequences)))]
            sample = draw_sample(seq, self.cfg, self.train, self.rng)
            loss, cls_loss, reg_loss = self.sample_loss(seq, sample)
            ops.mul(loss, 1.0 / batch).backward()
            total += loss.item() / batch
            cls_total += cls_loss / batch
            reg_total += reg_loss / batch
        norm = self.optimizer.step(frozen=frozen)
        return StepRecord(epoch, step, self.optimizer.lr, total, cls_total, reg_total, norm)


def toy_train(sequences: Seq[Sequence], run: RunConfig) -> TrainResult:
    model = MTTrackModel(run.tracker)
    logger.info(
        f"Training {model.num_parameters()} parameters on {len(sequences)} sequences "
        f"({run.train.epochs} epochs, batch {run.train.batch_size}, ablation {run.tracker.ablation.name})"
    )
    return Trainer(model, run.train, seed=run.tracker.seed).fit(sequences)

"""
Built-in numerical checks run by the `selftest` command.

Each check returns its worst observed error against a tolerance; a check
that raises is reported as failed with the exception text.
"""
import logging
import time
from contextlib import nullcontext
from typing import Callable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel

from mttrack.compute import ops
from mttrack.compute.gradcheck import grad_check
from mttrack.compute.nn import Parameter
from mttrack.compute.tensor import Tensor
from mttrack.models.bbox import BBox
from mttrack.models.mutual_transformer import (
    AttentionConfig,
    HistoricalMapState,
    MutualAttention,
    MutualTransformer,
    TokenizedMap,
)
from mttrack.models.temporal_correlation import (
    TemplateMemory,
    TemporalCorrelation,
    depthwise_correlate,
    temporal_correlation_forward,
    update_memory,
)
from mttrack.services.evaluation import PRECISION_THRESHOLDS, SUCCESS_THRESHOLDS, TrackResult, compute_metrics

logger = logging.getLogger(__name__)

GRAD_TOL = 1e-4
PROB_TOL = 1e-6


class CheckResult(BaseModel):
    name: str
    passed: bool
    max_error: Optional[float] = None
    tolerance: Optional[float] = None
    seconds: float = 0.0
    detail: str = ""


class SelfTestReport(BaseModel):
    passed: bool
    checks: List[CheckResult]


def _rand(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return ops.sum(ops.mul(out, weights))


# gradient checks

def _grad_ops() -> float:
    rng = np.random.default_rng(0)
    worst = 0.0
    a, b = _rand(rng, 4, 3), _rand(rng, 3, 5)
    r45 = rng.standard_normal((4, 5))
    worst = max(worst, grad_check(lambda xs: _weighted_sum(ops.softmax(xs[0] @ xs[1], axis=-1), r45), [a, b]))

    x, gamma, beta = _rand(rng, 2, 8), _rand(rng, 8), _rand(rng, 8)
    r28 = rng.standard_normal((2, 8))
    worst = max(worst, grad_check(lambda xs: _weighted_sum(ops.layer_norm(*xs), r28), [x, gamma, beta]))

    v = _rand(rng, 3, 4)
    r34 = rng.standard_normal((3, 4))
    worst = max(worst, grad_check(lambda t: _weighted_sum(ops.sigmoid(t), r34), v))
    worst = max(worst, grad_check(lambda t: _weighted_sum(ops.relu(t), r34), Tensor(v.data + 0.05 * np.sign(v.data))))

    img, kernels, bias = _rand(rng, 8, 8, 2), _rand(rng, 3, 3, 2, 3), _rand(rng, 3)
    r_conv = rng.standard_normal((4, 4, 3))
    worst = max(
        worst,
        grad_check(lambda xs: _weighted_sum(ops.conv2d(xs[0], xs[1], xs[2], stride=2, padding=1), r_conv), [img, kernels, bias]),
    )

    template, search = _rand(rng, 3, 3, 4), _rand(rng, 8, 8, 4)
    r_corr = rng.standard_normal((6, 6, 4))
    worst = max(worst, grad_check(lambda xs: _weighted_sum(depthwise_correlate(*xs), r_corr), [template, search]))

    maps = [_rand(rng, 4, 4, 2) for _ in range(3)]
    r_gap = rng.standard_normal(6)
    worst = max(worst, grad_check(lambda xs: _weighted_sum(ops.global_avg_pool(ops.concat(xs, axis=2)), r_gap), maps))
    return worst


def _grad_temporal() -> float:
    rng = np.random.default_rng(1)
    c = 4
    tc = TemporalCorrelation(c, 3, rng, dtype=np.float64)
    tc.beta.data[...] = 0.7
    t0, t_prev = _rand(rng, 3, 3, c), _rand(rng, 3, 3, c)
    feats = tuple(_rand(rng, 8, 8, c) for _ in range(3))
    search = _rand(rng, 8, 8, c)
    weights = rng.standard_normal((6, 6, c))

    def f(xs):
        mem = TemplateMemory(t0=xs[0], t_prev=xs[1], feats=feats, capacity=3, tau=3.0, beta=xs[2])
        out, _ = temporal_correlation_forward(mem, tc, search)
        return _weighted_sum(out, weights)

    return grad_check(f, [t0, t_prev, tc.beta, tc.calibration.w1.weight], max_coords=60)


def small_transformer(seed: int = 0, channels: int = 12, shared_projections: bool = False) -> MutualTransformer:
    cfg = AttentionConfig(heads=6, model_dim=channels, encoder_layers=1, decoder_layers=2, reduction=2)
    return MutualTransformer(cfg, np.random.default_rng(seed), dtype=np.float64, shared_projections=shared_projections)


def _grad_transformer() -> float:
    rng = np.random.default_rng(2)
    model = small_transformer(seed=3)
    cur, hist = _rand(rng, 6, 6, 12), _rand(rng, 36, 12)
    weights = rng.standard_normal((6, 6, 12))

    def f(xs):
        refined, _ = model(xs[0], HistoricalMapState(TokenizedMap(xs[1], (6, 6))))
        return _weighted_sum(refined, weights)

    params = [model.decoders[0].filter.w1.weight, model.decoders[1].mutual.hist_proj.weight, model.encoders[0].attention.query.weight]
    return grad_check(f, [cur, hist, *params], max_coords=80)


# attention properties

def _attention_normalization(trials: int = 100) -> float:
    worst = 0.0
    for seed in range(trials):
        rng = np.random.default_rng(seed)
        mutual = MutualAttention(AttentionConfig(heads=6, model_dim=12), rng, dtype=np.float64)
        hist, cur = TokenizedMap(_rand(rng, 6, 12), (2, 3)), TokenizedMap(_rand(rng, 6, 12), (2, 3))
        out = mutual(hist, cur)
        for weights in (out.hist_weights, out.cur_weights):
            worst = max(worst, float(np.abs(weights.sum(axis=-1) - 1.0).max()))
    return worst


def _logits_reuse(trials: int = 100) -> float:
    worst = 0.0
    for seed in range(trials):
        rng = np.random.default_rng(seed)
        mutual = MutualAttention(AttentionConfig(heads=6, model_dim=12), rng, dtype=np.float64)
        hist, cur = TokenizedMap(_rand(rng, 6, 12), (2, 3)), TokenizedMap(_rand(rng, 6, 12), (2, 3))
        shared = mutual(hist, cur, reuse_logits=True)
        own = mutual(hist, cur, reuse_logits=False)
        worst = max(
            worst,
            float(np.abs(shared.cur_weights - own.cur_weights).max()),
            float(np.abs(shared.cur.tokens.data - own.cur.tokens.data).max()),
        )
    return worst


def _baseline_reduction(trials: int = 10) -> float:
    """beta = 0 must reproduce plain correlation of T0 bit for bit; returns the number of differing values"""
    differing = 0
    for seed in range(trials):
        rng = np.random.default_rng(seed)
        c = 4
        tc = TemporalCorrelation(c, 3, rng, dtype=np.float64)
        t0 = _rand(rng, 3, 3, c)
        mem = TemplateMemory.initialize(t0, _rand(rng, 8, 8, c), beta=tc.beta, capacity=3)
        mem = update_memory(mem, _rand(rng, 8, 8, c), _rand(rng, 3, 3, c), score=10.0)
        search = _rand(rng, 8, 8, c)
        fused_map, _ = temporal_correlation_forward(mem, tc, search)
        differing += int(np.count_nonzero(fused_map.data != depthwise_correlate(t0, search).data))
    return float(differing)


# memory gating

MEMORY_SCENARIOS: List[Tuple[List[float], List[str]]] = [
    ([4.0, 2.0, 5.0], ["f0", "g1", "g3"]),
    ([3.0, 3.0, 3.0], ["f0", "f0", "f0"]),
    ([3.5, 4.0, 9.0, 3.1], ["g2", "g3", "g4"]),
    ([1e9, -1.0, 3.0000001, 0.0, 7.0], ["g1", "g3", "g5"]),
    ([2.9, 3.01], ["f0", "f0", "g2"]),
]


def _feature_name(feat: Tensor) -> str:
    # the frame-0 feature is all zeros, candidate i is filled with i
    value = int(feat.data.reshape(-1)[0])
    return "f0" if value == 0 else f"g{value}"


def run_memory_scenario(scores: List[float], capacity: int = 3, tau: float = 3.0) -> List[str]:
    """Feed scripted confidences through the gated memory and name the queued features, oldest first"""
    template = Tensor(np.zeros((1, 1, 1)))
    mem = TemplateMemory.initialize(template, Tensor(np.zeros((2, 2, 1))), beta=Parameter(np.zeros(1)), capacity=capacity, tau=tau)
    for i, score in enumerate(scores, start=1):
        mem = update_memory(mem, Tensor(np.full((2, 2, 1), float(i))), template, score)
    return [_feature_name(f) for f in mem.feats]


def _memory_fifo() -> float:
    """Returns the number of scenarios whose final queue differs from the scripted expectation"""
    failures = 0
    for scores, expected in MEMORY_SCENARIOS:
        names = run_memory_scenario(scores)
        if names != expected:
            failures += 1
            logger.error(f"Memory scenario {scores}: expected {expected}, got {names}")
    return float(failures)


# metric oracles

def brute_force_curves(boxes: List[BBox], gt: List[BBox]) -> Tuple[List[float], List[float]]:
    precision, success = [], []
    for theta in PRECISION_THRESHOLDS:
        hits = 0
        for p, g in zip(boxes, gt):
            if ((p.cx - g.cx) ** 2 + (p.cy - g.cy) ** 2) ** 0.5 <= theta:
                hits += 1
        precision.append(hits / len(gt))
    for rho in SUCCESS_THRESHOLDS:
        hits = 0
        for p, g in zip(boxes, gt):
            iw = max(0.0, min(p.x1, g.x1) - max(p.x, g.x))
            ih = max(0.0, min(p.y1, g.y1) - max(p.y, g.y))
            inter = iw * ih
            if inter / (p.area + g.area - inter) > rho:
                hits += 1
        success.append(hits / len(gt))
    return precision, success


def metric_fixtures() -> List[Tuple[List[BBox], List[BBox]]]:
    box = BBox.from_corner
    gt3 = [box(10, 10, 20, 20), box(40, 40, 20, 20), box(70, 70, 20, 20)]
    rng = np.random.default_rng(7)
    random_gt = [box(*rng.uniform(0, 50, 2), *rng.uniform(5, 30, 2)) for _ in range(10)]
    random_pred = [box(g.x + rng.normal(0, 8), g.y + rng.normal(0, 8), g.w * rng.uniform(0.7, 1.3), g.h) for g in random_gt]
    return [
        (list(gt3), list(gt3)),
        ([box(10, 10, 20, 20), box(49, 52, 20, 20), box(88, 94, 20, 20)], gt3),
        ([box(500, 500, 5, 5)] * 3, gt3),
        ([box(12, 10, 20, 20), box(40, 45, 25, 20), box(60, 70, 20, 30)], gt3),
        (random_pred, random_gt),
    ]


def _metric_oracles() -> float:
    worst = 0.0
    for i, (boxes, gt) in enumerate(metric_fixtures()):
        report = compute_metrics({f"f{i}": TrackResult(boxes, [None] * len(boxes))}, {f"f{i}": gt})
        metrics = report.sequences[f"f{i}"]
        precision, success = brute_force_curves(boxes, gt)
        worst = max(
            worst,
            float(np.abs(np.array(metrics.precision_curve) - precision).max()),
            float(np.abs(np.array(metrics.success_curve) - success).max()),
        )
    return worst


CHECKS: List[Tuple[str, Callable[[], float], float]] = [
    ("grad_ops", _grad_ops, GRAD_TOL),
    ("grad_temporal_correlation", _grad_temporal, GRAD_TOL),
    ("grad_mutual_transformer", _grad_transformer, GRAD_TOL),
    ("attention_normalization", _attention_normalization, PROB_TOL),
    ("logits_reuse", _logits_reuse, PROB_TOL),
    ("baseline_reduction", _baseline_reduction, 0.0),
    ("memory_fifo", _memory_fifo, 0.0),
    ("metric_oracles", _metric_oracles, 0.0),
]


def run_selftest(only: Optional[List[str]] = None, fault: Optional[str] = None) -> SelfTestReport:
    """
    Run the named checks (all by default).

    `fault` corrupts one op for the whole run; the affected checks must then fail.
    """
    if fault:
        logger.warning(f"Self-test running with injected fault in '{fault}'")
    results = []
    for name, check, tolerance in CHECKS:
        if only and name not in only:
            continue
        start = time.perf_counter()
        try:
            with ops.inject_fault(fault) if fault else nullcontext():
                error = check()
            passed = bool(np.isfinite(error) and error <= tolerance)
            result = CheckResult(name=name, passed=passed, max_error=error, tolerance=tolerance)
        except Exception as e:
            result = CheckResult(name=name, passed=False, tolerance=tolerance, detail=f"{type(e).__name__}: {e}")
        result.seconds = time.perf_counter() - start
        log = logger.info if result.passed else logger.error
        log(f"Self-test {name}: {'ok' if result.passed else 'FAILED'} (max error {result.max_error}, tolerance {tolerance})")
        results.append(result)
    return SelfTestReport(passed=all(r.passed for r in results), checks=results)

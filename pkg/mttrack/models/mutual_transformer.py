"""
Mutual transformer refining the current correlation map against the historical one.

Pipeline per frame: a shared encoder layer is applied to both maps, then each
decoder layer gates the two maps with a joint channel filter and runs mutual
attention, where the historical branch attends over current tokens and the
current branch over historical tokens using the transposed logits of the same
Q.K^T product.
"""
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from mttrack.compute import ops
from mttrack.compute.nn import LayerNorm, Linear, Module
from mttrack.compute.tensor import Tensor
from mttrack.core.exceptions import DimensionError


@dataclass(frozen=True)
class AttentionConfig:
    heads: int = 6
    model_dim: int = 192
    encoder_layers: int = 1
    decoder_layers: int = 2
    reduction: int = 2

    def __post_init__(self):
        if self.heads <= 0 or self.model_dim % self.heads != 0:
            raise DimensionError(
                user_message=f"model_dim {self.model_dim} is not divisible by {self.heads} heads.",
                details={"model_dim": self.model_dim, "heads": self.heads},
            )
        if self.reduction <= 0 or self.model_dim % self.reduction != 0:
            raise DimensionError(
                user_message=f"model_dim {self.model_dim} is not divisible by reduction {self.reduction}.",
            )

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.head_dim)


@dataclass(frozen=True)
class TokenizedMap:
    """[N, C] token view of an [H, W, C] map, rows in row-major spatial order"""

    tokens: Tensor
    spatial: Tuple[int, int]

    @classmethod
    def from_map(cls, m: Tensor) -> "TokenizedMap":
        if m.ndim != 3:
            raise DimensionError(user_message=f"Expected an [H, W, C] map, got shape {m.shape}.")
        h, w, c = m.shape
        return cls(tokens=m.reshape(h * w, c), spatial=(h, w))

    def to_map(self) -> Tensor:
        h, w = self.spatial
        return self.tokens.reshape(h, w, self.tokens.shape[1])

    @property
    def channels(self) -> int:
        return self.tokens.shape[1]

    def detach(self) -> "TokenizedMap":
        return TokenizedMap(self.tokens.detach(), self.spatial)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """[N, C] -> [heads, N, C/heads]"""
    n, c = x.shape
    return x.reshape(n, heads, c // heads).transpose(1, 0, 2)


def merge_heads(x: Tensor) -> Tensor:
    """[heads, N, d] -> [N, heads*d]"""
    h, n, d = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * d)


def _check_tokens(name: str, x: Tensor, channels: int) -> None:
    if x.ndim != 2 or x.shape[1] != channels:
        raise DimensionError(
            user_message=f"{name}: expected [N, {channels}] tokens, got shape {x.shape}.",
            details={"shape": list(x.shape), "channels": channels},
        )


class MultiHeadAttention(Module):
    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, dtype=np.float32):
        c = cfg.model_dim
        self.cfg = cfg
        self.query = Linear(c, c, rng, dtype=dtype)
        self.key = Linear(c, c, rng, dtype=dtype)
        self.value = Linear(c, c, rng, dtype=dtype)
        self.out = Linear(c, c, rng, dtype=dtype)

    def forward(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        c = self.cfg.model_dim
        for name, x in (("query", q), ("key", k), ("value", v)):
            _check_tokens(f"multi_head_attention {name}", x, c)
        if k.shape[0] != v.shape[0]:
            raise DimensionError(
                user_message=f"multi_head_attention: key has {k.shape[0]} tokens, value has {v.shape[0]}.",
            )
        weights = self.attention_weights(q, k)
        vh = split_heads(self.value(v), self.cfg.heads)
        return self.out(merge_heads(weights @ vh))

    def attention_weights(self, q: Tensor, k: Tensor) -> Tensor:
        """[heads, N_q, N_k] row-softmax of the scaled per-head logits"""
        qh = split_heads(self.query(q), self.cfg.heads)
        kh = split_heads(self.key(k), self.cfg.heads)
        return ops.softmax(ops.mul(qh @ kh.transpose(0, 2, 1), self.cfg.scale), axis=-1)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, mha: MultiHeadAttention) -> Tensor:
    return mha(q, k, v)


class EncoderLayer(Module):
    """Norm(m + MHA(m, m, m))"""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, dtype=np.float32):
        self.attention = MultiHeadAttention(cfg, rng, dtype=dtype)
        self.norm = LayerNorm(cfg.model_dim, dtype=dtype)

    def forward(self, m: TokenizedMap) -> TokenizedMap:
        x = m.tokens
        return TokenizedMap(self.norm(x + self.attention(x, x, x)), m.spatial)


def encode(m: TokenizedMap, layers: List[EncoderLayer]) -> TokenizedMap:
    for layer in layers:
        m = layer(m)
    return m


class Filter(Module):
    """
    Joint channel gate: omega = sigmoid(W2 relu(W1 mean_tokens([cur | hist]))), omega in R^2C.

    The first half gates the current map, the second half the historical map.
    """

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, dtype=np.float32):
        c = cfg.model_dim
        self.channels = c
        self.w1 = Linear(2 * c, c // cfg.reduction, rng, dtype=dtype)
        self.w2 = Linear(c // cfg.reduction, 2 * c, rng, dtype=dtype)

    def forward(self, m_cur: TokenizedMap, m_hist: TokenizedMap) -> Tuple[TokenizedMap, TokenizedMap, Tensor]:
        return filter_maps(m_cur, m_hist, self)


def filter_maps(m_cur: TokenizedMap, m_hist: TokenizedMap, fw: Filter) -> Tuple[TokenizedMap, TokenizedMap, Tensor]:
    if m_cur.tokens.shape != m_hist.tokens.shape:
        raise DimensionError(
            user_message=f"filter: current {m_cur.tokens.shape} and historical {m_hist.tokens.shape} tokens differ.",
        )
    _check_tokens("filter", m_cur.tokens, fw.channels)
    # gate from the pre-filter maps
    descriptor = ops.mean(ops.concat([m_cur.tokens, m_hist.tokens], axis=1), axis=0)
    omega = ops.sigmoid(fw.w2(ops.relu(fw.w1(descriptor))))
    d1, d2 = ops.chunk(omega, 2, axis=0)
    return (
        TokenizedMap(ops.mul(m_cur.tokens, d1), m_cur.spatial),
        TokenizedMap(ops.mul(m_hist.tokens, d2), m_hist.spatial),
        omega,
    )


@dataclass
class MutualAttentionOutput:
    hist: TokenizedMap
    cur: TokenizedMap
    hist_weights: np.ndarray
    cur_weights: np.ndarray
    logits: np.ndarray


class MutualAttention(Module):
    """
    Paired cross-attention sharing one logits product.

    `hist_proj` projects historical tokens (query of the historical branch, key of
    the current one) and `cur_proj` projects current tokens (key of the historical
    branch, query of the current one), so the current-branch logits are the
    transpose of the historical-branch logits. Each branch owns its value and
    output projections and its norm. `shared_projections` ties both branches to
    one set of weights.
    """

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, dtype=np.float32, shared_projections: bool = False):
        c = cfg.model_dim
        self.cfg = cfg
        self.shared_projections = shared_projections
        self.hist_proj = Linear(c, c, rng, dtype=dtype)
        self.hist_value = Linear(c, c, rng, dtype=dtype)
        self.hist_out = Linear(c, c, rng, dtype=dtype)
        self.hist_norm = LayerNorm(c, dtype=dtype)
        if shared_projections:
            self.cur_proj = self.hist_proj
            self.cur_value = self.hist_value
            self.cur_out = self.hist_out
            self.cur_norm = self.hist_norm
        else:
            self.cur_proj = Linear(c, c, rng, dtype=dtype)
            self.cur_value = Linear(c, c, rng, dtype=dtype)
            self.cur_out = Linear(c, c, rng, dtype=dtype)
            self.cur_norm = LayerNorm(c, dtype=dtype)

    def forward(self, m_hist_f: TokenizedMap, m_cur_f: TokenizedMap, reuse_logits: bool = True) -> MutualAttentionOutput:
        return mutual_attention(m_hist_f, m_cur_f, self, reuse_logits=reuse_logits)


def mutual_attention(
    m_hist_f: TokenizedMap,
    m_cur_f: TokenizedMap,
    params: MutualAttention,
    reuse_logits: bool = True,
) -> MutualAttentionOutput:
    """
    Historical branch: Norm(hist + MHA(q=hist, k=cur, v=cur)).
    Current branch:    Norm(cur + MHA(q=cur, k=hist, v=hist)), logits taken as L^T.

    `reuse_logits=False` recomputes the current-branch logits with their own matmul.
    """
    cfg = params.cfg
    hist, cur = m_hist_f.tokens, m_cur_f.tokens
    _check_tokens("mutual_attention historical", hist, cfg.model_dim)
    _check_tokens("mutual_attention current", cur, cfg.model_dim)
    if hist.shape != cur.shape:
        raise DimensionError(
            user_message=f"mutual_attention: historical {hist.shape} and current {cur.shape} tokens differ.",
        )
    heads = cfg.heads
    q_hist = split_heads(params.hist_proj(hist), heads)
    q_cur = split_heads(params.cur_proj(cur), heads)

    logits = ops.mul(q_hist @ q_cur.transpose(0, 2, 1), cfg.scale)  # [heads, N_hist, N_cur]
    hist_weights = ops.softmax(logits, axis=-1)
    v_cur = split_heads(params.hist_value(cur), heads)
    hist_out = params.hist_norm(hist + params.hist_out(merge_heads(hist_weights @ v_cur)))

    if reuse_logits:
        cur_logits = logits.transpose(0, 2, 1)
    else:
        cur_logits = ops.mul(q_cur @ q_hist.transpose(0, 2, 1), cfg.scale)
    cur_weights = ops.softmax(cur_logits, axis=-1)
    v_hist = split_heads(params.cur_value(hist), heads)
    cur_out = params.cur_norm(cur + params.cur_out(merge_heads(cur_weights @ v_hist)))

    return MutualAttentionOutput(
        hist=TokenizedMap(hist_out, m_hist_f.spatial),
        cur=TokenizedMap(cur_out, m_cur_f.spatial),
        hist_weights=hist_weights.data,
        cur_weights=cur_weights.data,
        logits=logits.data,
    )


class DecoderLayer(Module):
    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, dtype=np.float32, shared_projections: bool = False):
        self.filter = Filter(cfg, rng, dtype=dtype)
        self.mutual = MutualAttention(cfg, rng, dtype=dtype, shared_projections=shared_projections)

    def forward(
        self,
        m_hist: TokenizedMap,
        m_cur: TokenizedMap,
        use_filter: bool = True,
        reuse_logits: bool = True,
    ) -> MutualAttentionOutput:
        if use_filter:
            m_cur, m_hist, _ = self.filter(m_cur, m_hist)
        return self.mutual(m_hist, m_cur, reuse_logits=reuse_logits)


@dataclass(frozen=True)
class HistoricalMapState:
    """
    Historical map carried between frames.

    The seeded first-frame map is stored already encoded (`encoded=True`) and is
    not encoded again; decoder outputs of later frames go through the encoder.
    """

    m_hist: TokenizedMap
    encoded: bool = False

    def nbytes(self) -> int:
        return self.m_hist.tokens.data.nbytes


class MutualTransformer(Module):
    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, dtype=np.float32, shared_projections: bool = False):
        self.cfg = cfg
        self.encoders = [EncoderLayer(cfg, rng, dtype=dtype) for _ in range(cfg.encoder_layers)]
        self.decoders = [
            DecoderLayer(cfg, rng, dtype=dtype, shared_projections=shared_projections)
            for _ in range(cfg.decoder_layers)
        ]

    def encode_map(self, m: Tensor, use_encoder: bool = True) -> TokenizedMap:
        tokens = TokenizedMap.from_map(m)
        return encode(tokens, self.encoders) if use_encoder else tokens

    def init_state(self, first_map: Tensor, use_encoder: bool = True) -> HistoricalMapState:
        return HistoricalMapState(self.encode_map(first_map, use_encoder).detach(), encoded=use_encoder)

    def forward(
        self,
        m_cur_raw: Tensor,
        state: HistoricalMapState,
        use_encoder: bool = True,
        use_filter: bool = True,
        reuse_logits: bool = True,
        trace: Optional[List[MutualAttentionOutput]] = None,
    ) -> Tuple[Tensor, HistoricalMapState]:
        return mutual_transformer_forward(m_cur_raw, state, self, use_encoder, use_filter, reuse_logits, trace)


def mutual_transformer_forward(
    m_cur_raw: Tensor,
    state: HistoricalMapState,
    params: MutualTransformer,
    use_encoder: bool = True,
    use_filter: bool = True,
    reuse_logits: bool = True,
    trace: Optional[List[MutualAttentionOutput]] = None,
) -> Tuple[Tensor, HistoricalMapState]:
    """
    Encode both maps (a seeded, already encoded history is used as is), run the
    decoder stack, return the refined current map and the next state.

    Per-layer attention outputs are appended to `trace` when one is given.
    """
    cur = TokenizedMap.from_map(m_cur_raw)
    if state.m_hist.tokens.shape != cur.tokens.shape or state.m_hist.spatial != cur.spatial:
        raise DimensionError(
            user_message=f"Historical map {state.m_hist.spatial} does not match current map {cur.spatial}.",
            details={"historical": list(state.m_hist.tokens.shape), "current": list(cur.tokens.shape)},
        )
    hist = state.m_hist
    if use_encoder:
        cur = encode(cur, params.encoders)
        if not state.encoded:
            hist = encode(hist, params.encoders)

    for layer in params.decoders:
        out = layer(hist, cur, use_filter=use_filter, reuse_logits=reuse_logits)
        if trace is not None:
            trace.append(out)
        hist, cur = out.hist, out.cur
    return cur.to_map(), HistoricalMapState(hist.detach())


def parameter_breakdown(cfg: AttentionConfig) -> Dict[str, int]:
    """Closed-form parameter counts of the mutual transformer"""
    c, hidden = cfg.model_dim, cfg.model_dim // cfg.reduction
    encoder = 4 * c * c + 4 * c + 2 * c
    filter_ = 2 * c * hidden + hidden + hidden * 2 * c + 2 * c
    mutual = 2 * (3 * c * c + 3 * c) + 2 * 2 * c
    return {
        "encoder": cfg.encoder_layers * encoder,
        "filter": cfg.decoder_layers * filter_,
        "mutual_attention": cfg.decoder_layers * mutual,
    }

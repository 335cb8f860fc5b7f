"""Forward transforms of the network's building blocks.

The block at each stage runs two streams: a local pass-through of the
inverted-residual stack output, and a global "hourglass" stream that pools the
map to 7x7, mixes it with two more inverted residuals, applies a stack of
modified attention blocks, and restores the original resolution with a
transposed convolution. The streams are fused with a sigmoid gate, channel
concatenation and a halving projection.

Parameter structs hold plain float32 arrays and are immutable after
construction; every forward is a pure function of (input, params).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .errors import ConfigError, ShapeError
from .tensor import DTYPE, conv_spec

POOLED_HW = 7  # attention always runs on a 7x7 map, 49 tokens


@dataclass(frozen=True)
class BNParams:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return K.batch_norm_inference(x, self.gamma, self.beta, self.mean, self.var, self.eps)


@dataclass(frozen=True)
class ConvBN:
    """Convolution weight plus optional bias and optional following BN.

    bn is None once batch norm has been folded into (w, b) at load time.
    """
    w: np.ndarray
    b: np.ndarray | None
    bn: BNParams | None

    def apply_bn(self, x: np.ndarray) -> np.ndarray:
        return self.bn(x) if self.bn is not None else x


def _pw(p: ConvBN, x: np.ndarray) -> np.ndarray:
    return p.apply_bn(K.pointwise_conv(x, p.w, p.b))


def _dw3(p: ConvBN, x: np.ndarray, stride: int = 1) -> np.ndarray:
    return p.apply_bn(K.depthwise_conv3x3(x, p.w, p.b, stride=stride))


def _conv3(p: ConvBN, x: np.ndarray, stride: int) -> np.ndarray:
    y = K.conv2d_im2col(x, p.w, p.b, conv_spec(3, stride=stride, padding=1))
    return p.apply_bn(y)


# ---------------------------------------------------------------------------
# Inverted residual / stem / embedding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InvResParams:
    """Point-wise expand, depthwise 3x3, point-wise project, residual add."""
    expand: ConvBN
    dw: ConvBN
    project: ConvBN


def invres_forward(x: np.ndarray, p: InvResParams) -> np.ndarray:
    if x.shape[1] != p.expand.w.shape[1]:
        raise ShapeError(
            f"invres expects {p.expand.w.shape[1]} channels, input has {x.shape[1]}"
        )
    h = K.gelu(_pw(p.expand, x))
    h = K.gelu(_dw3(p.dw, h))
    h = _pw(p.project, h)
    return x + h


@dataclass(frozen=True)
class StemParams:
    convs: tuple[ConvBN, ConvBN, ConvBN]


def stem_forward(img: np.ndarray, p: StemParams) -> np.ndarray:
    """Three stride-2 3x3 conv+BN+GeLU layers: spatial extents divided by 8."""
    if img.shape[2] % 8 or img.shape[3] % 8:
        raise ShapeError(f"stem input extents {img.shape[2]}x{img.shape[3]} not divisible by 8")
    x = img
    for c in p.convs:
        x = K.gelu(_conv3(c, x, stride=2))
    return x


@dataclass(frozen=True)
class EmbedParams:
    conv: ConvBN


def embedding_forward(x: np.ndarray, p: EmbedParams) -> np.ndarray:
    """Stride-2 3x3 conv + BN between stages: extents halved, channels remapped."""
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"embedding input extents {x.shape[2]}x{x.shape[3]} not even")
    return _conv3(p.conv, x, stride=2)


def mixer_forward(x: np.ndarray, blocks: tuple[InvResParams, ...]) -> np.ndarray:
    """Two consecutive inverted residuals on the pooled 7x7 map."""
    if x.shape[2] != POOLED_HW or x.shape[3] != POOLED_HW:
        raise ShapeError(f"mixer expects {POOLED_HW}x{POOLED_HW} input, got {x.shape[2]}x{x.shape[3]}")
    for b in blocks:
        x = invres_forward(x, b)
    return x


# ---------------------------------------------------------------------------
# Modified attention
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MAttnParams:
    norm: BNParams              # applied before the shared point-wise conv
    pw_w: np.ndarray            # shared projection feeding query, key and value
    pw_b: np.ndarray
    value_norm: BNParams        # inside the residual value branch
    dw_w: np.ndarray
    dw_b: np.ndarray
    pos_bias: np.ndarray        # length h*w, added per key column of the scores
    linear_w: np.ndarray
    linear_b: np.ndarray
    ffn0_w: np.ndarray
    ffn0_b: np.ndarray
    ffn1_w: np.ndarray
    ffn1_b: np.ndarray
    heads: int
    bias_mode: str = "key"      # "key": + b[j] per column; "query": literal + b[i] per row

    def __post_init__(self):
        c = self.pw_w.shape[0]
        if c % self.heads:
            raise ConfigError(f"attention channels {c} not divisible by heads {self.heads}")
        if self.bias_mode not in ("key", "query"):
            raise ConfigError(f"bias_mode must be 'key' or 'query', got {self.bias_mode!r}")


def map_to_tokens(x: np.ndarray) -> np.ndarray:
    """[1, C, h, w] -> [h*w, C], row-major spatial order."""
    _, c, h, w = x.shape
    return np.ascontiguousarray(x.reshape(c, h * w).T)


def tokens_to_map(t: np.ndarray, h: int, w: int) -> np.ndarray:
    """[h*w, C] -> [1, C, h, w], inverse of map_to_tokens."""
    return np.ascontiguousarray(t.T.reshape(1, t.shape[1], h, w))


def value_branch(y: np.ndarray, p: MAttnParams) -> np.ndarray:
    """Residual value refinement: GeLU(DW3x3(BN(y))) + y on the map form."""
    h = p.value_norm(y)
    h = K.depthwise_conv3x3(h, p.dw_w, p.dw_b)
    return K.gelu(h) + y


def attention_core(y: np.ndarray, y_val: np.ndarray, pos_bias: np.ndarray,
                   heads: int, bias_mode: str = "key") -> np.ndarray:
    """Shared-projection self attention on token matrices.

    Query and key are both y; per head the scores are y_h @ y_h.T / sqrt(d)
    plus the positional bias, softmaxed per row, then applied to y_val.
    """
    hw, c = y.shape
    if len(pos_bias) != hw:
        raise ConfigError(f"positional bias length {len(pos_bias)} != token count {hw}")
    if c % heads:
        raise ConfigError(f"channels {c} not divisible by heads {heads}")
    d = c // heads
    yh = y.reshape(hw, heads, d).transpose(1, 0, 2)       # [heads, hw, d]
    vh = y_val.reshape(hw, heads, d).transpose(1, 0, 2)
    scores = np.matmul(yh, yh.transpose(0, 2, 1)) / DTYPE(np.sqrt(d))
    if bias_mode == "key":
        scores = scores + pos_bias[None, None, :]
    else:
        scores = scores + pos_bias[None, :, None]
    attn = K.softmax_rows(scores.reshape(heads * hw, hw)).reshape(heads, hw, hw)
    out = np.matmul(attn, vh)                              # [heads, hw, d]
    return np.ascontiguousarray(out.transpose(1, 0, 2).reshape(hw, c))


def mhsa(y: np.ndarray, p: MAttnParams) -> np.ndarray:
    """Multi-head attention over tokens [hw, C]; the value passes through the
    residual depthwise branch first. Token count must form a square map."""
    hw = y.shape[0]
    side = int(round(np.sqrt(hw)))
    if side * side != hw:
        raise ShapeError(f"mhsa token count {hw} is not a square map")
    y_map = tokens_to_map(y, side, side)
    y_val = map_to_tokens(value_branch(y_map, p))
    return attention_core(y, y_val, p.pos_bias, p.heads, p.bias_mode)


def mattn_forward(x: np.ndarray, p: MAttnParams) -> np.ndarray:
    """Attention sub-layer with residual, then FFN sub-layer with residual."""
    _, c, h, w = x.shape
    y_map = K.pointwise_conv(p.norm(x), p.pw_w, p.pw_b)
    y = map_to_tokens(y_map)
    o = mhsa(y, p)
    o = K.linear(o, p.linear_w, p.linear_b)
    x1 = tokens_to_map(o, h, w) + x

    t = map_to_tokens(x1)
    f = K.linear(K.gelu(K.linear(t, p.ffn0_w, p.ffn0_b)), p.ffn1_w, p.ffn1_b)
    return tokens_to_map(f, h, w) + x1


@dataclass(frozen=True)
class StdAttnParams:
    """Ablation: canonical attention with independent query/key/value
    projections and an output projection, no value branch, no FFN."""
    norm: BNParams
    qkv_w: np.ndarray
    qkv_b: np.ndarray
    proj_w: np.ndarray
    proj_b: np.ndarray
    heads: int


def std_attn_forward(x: np.ndarray, p: StdAttnParams) -> np.ndarray:
    _, c, h, w = x.shape
    t = map_to_tokens(p.norm(x))
    qkv = K.linear(t, p.qkv_w, p.qkv_b)
    q, k, v = qkv[:, :c], qkv[:, c : 2 * c], qkv[:, 2 * c :]
    hw, d = h * w, c // p.heads
    qh = q.reshape(hw, p.heads, d).transpose(1, 0, 2)
    kh = k.reshape(hw, p.heads, d).transpose(1, 0, 2)
    vh = v.reshape(hw, p.heads, d).transpose(1, 0, 2)
    scores = np.matmul(qh, kh.transpose(0, 2, 1)) / DTYPE(np.sqrt(d))
    attn = K.softmax_rows(scores.reshape(p.heads * hw, hw)).reshape(p.heads, hw, hw)
    o = np.matmul(attn, vh).transpose(1, 0, 2).reshape(hw, c)
    o = K.linear(np.ascontiguousarray(o), p.proj_w, p.proj_b)
    return tokens_to_map(o, h, w) + x


# ---------------------------------------------------------------------------
# Stream fusion and the full block
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FuseParams:
    gate: ConvBN | None   # None when the local stream is ablated away
    merge: ConvBN


def fuse_streams(x_l: np.ndarray, x_g: np.ndarray, p: FuseParams) -> np.ndarray:
    if x_l.shape != x_g.shape:
        raise ShapeError(f"fuse_streams: stream shapes differ, {x_l.shape} vs {x_g.shape}")
    if p.gate is None:
        raise ConfigError("fuse_streams called without a gate projection")
    gate = K.sigmoid(_pw(p.gate, x_g))
    merged = np.concatenate([x_l * gate, x_g], axis=1)
    return _pw(p.merge, merged)


@dataclass(frozen=True)
class StageParams:
    invres: tuple[InvResParams, ...]
    mixer: tuple[InvResParams, ...]
    attn: tuple  # MAttnParams or StdAttnParams, per the ablation
    convt_w: np.ndarray
    convt_b: np.ndarray
    convt_factor: int
    fuse: FuseParams
    no_local: bool = False
    std_attn: bool = False


def attn_block_forward(x: np.ndarray, p) -> np.ndarray:
    if isinstance(p, StdAttnParams):
        return std_attn_forward(x, p)
    return mattn_forward(x, p)


def global_stream(x_l: np.ndarray, stage: StageParams) -> np.ndarray:
    """Pool to 7x7, mix, run the attention stack, restore the resolution."""
    g = K.adaptive_avg_pool2d(x_l, POOLED_HW, POOLED_HW)
    g = mixer_forward(g, stage.mixer)
    for a in stage.attn:
        g = attn_block_forward(g, a)
    return K.conv_transpose2d(g, stage.convt_w, stage.convt_b, stage.convt_factor)


def sbcformer_block_forward(x: np.ndarray, stage: StageParams) -> np.ndarray:
    for b in stage.invres:
        x = invres_forward(x, b)
    x_g = global_stream(x, stage)
    if stage.no_local:
        return _pw(stage.fuse.merge, x_g)
    return fuse_streams(x, x_g, stage.fuse)

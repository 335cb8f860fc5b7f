"""Model assembly: variant configurations, parameter naming contract, seeded
construction, forward inference, and structural audits (parameter and MAC
counts).

Parameter names are dotted paths in forward-execution order, e.g.
``stage1.invres0.expand.w`` or ``stage2.mattn3.ffn.0.b``. Batch-norm tensors
live under a ``.bn.`` suffix when the norm follows its convolution (foldable)
and under ``.norm.`` when it precedes one. The same names key the on-disk
weight container and the reference activations, so they are load-bearing.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import blocks as B
from . import kernels as K
from .errors import ConfigError, StateError
from .tensor import DTYPE

CONVT_FACTORS = (4, 2, 1)
POOLED_HW = B.POOLED_HW
INIT_STD = 0.02


@dataclass(frozen=True)
class VariantSpec:
    """Structural configuration of one model variant."""

    name: str
    stage_dims: tuple[int, int, int]
    mattn_counts: tuple[int, int, int]
    expansion_ratio: int
    invres_counts: tuple[int, int, int] = (2, 2, 1)
    mixer_counts: tuple[int, int, int] = (1, 1, 1)
    mixer_depth: int = 2           # inverted residuals per mixer unit
    ffn_ratio: int = 2
    head_dim: int = 32
    num_classes: int = 1000
    input_hw: int = 224
    stem_widths: tuple[int, int, int] | None = None
    bias_mode: str = "key"

    def stem_channels(self) -> tuple[int, int, int]:
        if self.stem_widths is not None:
            return self.stem_widths
        c1 = self.stage_dims[0]
        return (c1 // 2, c1, c1)

    def heads(self, stage: int) -> int:
        return self.stage_dims[stage] // self.head_dim

    def stage_hw(self, stage: int) -> int:
        return self.input_hw // (8 << stage)

    def validate(self) -> None:
        if self.input_hw % 32:
            raise ConfigError(f"input_hw {self.input_hw} is not a multiple of 32")
        if self.input_hw // 32 < POOLED_HW:
            raise ConfigError(
                f"input_hw {self.input_hw} leaves a final stage smaller than the "
                f"{POOLED_HW}x{POOLED_HW} attention map"
            )
        for i, c in enumerate(self.stage_dims):
            if c % self.head_dim:
                raise ConfigError(
                    f"stage_dims[{i}]={c} not divisible by head_dim {self.head_dim}"
                )
        if self.expansion_ratio < 1:
            raise ConfigError(f"expansion_ratio {self.expansion_ratio} must be >= 1")
        if self.ffn_ratio < 1:
            raise ConfigError(f"ffn_ratio {self.ffn_ratio} must be >= 1")
        if any(m < 0 for m in self.invres_counts + self.mattn_counts):
            raise ConfigError("block counts must be >= 0")
        if any(m < 1 for m in self.mixer_counts):
            raise ConfigError("mixer_counts must be >= 1")
        if any(w < 1 for w in self.stem_channels()):
            raise ConfigError(f"stem widths {self.stem_channels()} must be >= 1")
        if self.bias_mode not in ("key", "query"):
            raise ConfigError(f"bias_mode {self.bias_mode!r} must be 'key' or 'query'")


@dataclass(frozen=True)
class AblationFlags:
    no_local_stream: bool = False
    standard_attention: bool = False


VARIANTS: dict[str, VariantSpec] = {
    "XS": VariantSpec("XS", (96, 160, 288), (2, 3, 2), expansion_ratio=3),
    "S": VariantSpec("S", (96, 192, 320), (2, 4, 3), expansion_ratio=4),
    "B": VariantSpec("B", (128, 256, 384), (2, 4, 3), expansion_ratio=4),
    "L": VariantSpec("L", (192, 288, 384), (2, 4, 3), expansion_ratio=5),
}


def get_variant(name: str) -> VariantSpec:
    try:
        return VARIANTS[name]
    except KeyError:
        raise ConfigError(f"unknown variant {name!r}, expected one of {sorted(VARIANTS)}") from None


# ---------------------------------------------------------------------------
# Parameter naming contract
# ---------------------------------------------------------------------------
# Entry kinds drive initialization: "weight" draws from the seeded truncated
# normal, "zero" is zero-filled, "one" is one-filled. BN running statistics
# are the .mean/.var leaves and are excluded from the learnable count.

def _bn_entries(prefix: str, c: int):
    yield f"{prefix}.gamma", (c,), "one"
    yield f"{prefix}.beta", (c,), "zero"
    yield f"{prefix}.mean", (c,), "zero"
    yield f"{prefix}.var", (c,), "one"


def _invres_entries(prefix: str, c: int, e: int):
    ec = c * e
    yield f"{prefix}.expand.w", (ec, c, 1, 1), "weight"
    yield from _bn_entries(f"{prefix}.expand.bn", ec)
    yield f"{prefix}.dw.w", (ec, 1, 3, 3), "weight"
    yield from _bn_entries(f"{prefix}.dw.bn", ec)
    yield f"{prefix}.project.w", (c, ec, 1, 1), "weight"
    yield from _bn_entries(f"{prefix}.project.bn", c)


def _mattn_entries(prefix: str, c: int, r: int, std_attn: bool):
    if std_attn:
        yield from _bn_entries(f"{prefix}.norm", c)
        yield f"{prefix}.qkv.w", (3 * c, c), "weight"
        yield f"{prefix}.qkv.b", (3 * c,), "zero"
        yield f"{prefix}.linear.w", (c, c), "weight"
        yield f"{prefix}.linear.b", (c,), "zero"
        return
    yield from _bn_entries(f"{prefix}.pw.norm", c)
    yield f"{prefix}.pw.w", (c, c, 1, 1), "weight"
    yield f"{prefix}.pw.b", (c,), "zero"
    yield from _bn_entries(f"{prefix}.dw.norm", c)
    yield f"{prefix}.dw.w", (c, 1, 3, 3), "weight"
    yield f"{prefix}.dw.b", (c,), "zero"
    yield f"{prefix}.bias", (POOLED_HW * POOLED_HW,), "zero"
    yield f"{prefix}.linear.w", (c, c), "weight"
    yield f"{prefix}.linear.b", (c,), "zero"
    yield f"{prefix}.ffn.0.w", (r * c, c), "weight"
    yield f"{prefix}.ffn.0.b", (r * c,), "zero"
    yield f"{prefix}.ffn.1.w", (c, r * c), "weight"
    yield f"{prefix}.ffn.1.b", (c,), "zero"


def parameter_entries(spec: VariantSpec, ablation: AblationFlags):
    """Yield (name, shape, kind) in the canonical order."""
    cin = 3
    for j, c in enumerate(spec.stem_channels()):
        yield f"stem.conv{j}.w", (c, cin, 3, 3), "weight"
        yield from _bn_entries(f"stem.conv{j}.bn", c)
        cin = c
    for i in range(3):
        s, c = f"stage{i + 1}", spec.stage_dims[i]
        e, r = spec.expansion_ratio, spec.ffn_ratio
        for k in range(spec.invres_counts[i]):
            yield from _invres_entries(f"{s}.invres{k}", c, e)
        for j in range(spec.mixer_counts[i] * spec.mixer_depth):
            yield from _invres_entries(f"{s}.mixer.{j}", c, e)
        for k in range(spec.mattn_counts[i]):
            yield from _mattn_entries(f"{s}.mattn{k}", c, r, ablation.standard_attention)
        f = CONVT_FACTORS[i]
        yield f"{s}.convt.w", (c, c, f, f), "weight"
        yield f"{s}.convt.b", (c,), "zero"
        if not ablation.no_local_stream:
            yield f"{s}.fuse.gate.w", (c, c, 1, 1), "weight"
            yield from _bn_entries(f"{s}.fuse.gate.bn", c)
            yield f"{s}.fuse.merge.w", (c, 2 * c, 1, 1), "weight"
        else:
            yield f"{s}.fuse.merge.w", (c, c, 1, 1), "weight"
        yield from _bn_entries(f"{s}.fuse.merge.bn", c)
        if i < 2:
            nxt = spec.stage_dims[i + 1]
            yield f"embed{i + 1}.w", (nxt, c, 3, 3), "weight"
            yield from _bn_entries(f"embed{i + 1}.bn", nxt)
    yield "head.linear.w", (spec.num_classes, spec.stage_dims[2]), "weight"
    yield "head.linear.b", (spec.num_classes,), "zero"


def parameter_shapes(spec: VariantSpec, ablation: AblationFlags | None = None) -> OrderedDict:
    ablation = ablation or AblationFlags()
    return OrderedDict((n, s) for n, s, _ in parameter_entries(spec, ablation))


def is_bn_statistic(name: str) -> bool:
    return name.endswith(".mean") or name.endswith(".var")


BLOCK_SINGLETONS = ("stem", "embed1", "embed2", "head")


def block_of_param(name: str) -> str:
    head = name.split(".", 1)[0]
    if head in BLOCK_SINGLETONS:
        return head
    parts = name.split(".")
    return ".".join(parts[:2])


def block_names(spec: VariantSpec) -> list[str]:
    """Named block boundaries in execution order."""
    names = ["stem"]
    for i in range(3):
        s = f"stage{i + 1}"
        names += [f"{s}.invres{k}" for k in range(spec.invres_counts[i])]
        names.append(f"{s}.mixer")
        names += [f"{s}.mattn{k}" for k in range(spec.mattn_counts[i])]
        names += [f"{s}.convt", f"{s}.fuse"]
        if i < 2:
            names.append(f"embed{i + 1}")
    names.append("head")
    return names


# ---------------------------------------------------------------------------
# Build
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Model:
    spec: VariantSpec
    ablation: AblationFlags
    params: OrderedDict
    bn_eps: float = 1e-5

    def loaded(self) -> bool:
        return all(v is not None for v in self.params.values())

    def segments(self):
        return iter_segments(self)


def truncated_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    vals = rng.normal(0.0, std, size=int(np.prod(shape)))
    return np.clip(vals, -2.0 * std, 2.0 * std).astype(DTYPE).reshape(shape)


def build(variant: VariantSpec | str, ablation: AblationFlags | None = None,
          init: str = "random", seed: int = 0) -> Model:
    """Assemble a model. init="random" draws seeded weights; init="empty"
    allocates the name table only and expects a subsequent weight load."""
    spec = get_variant(variant) if isinstance(variant, str) else variant
    spec.validate()
    ablation = ablation or AblationFlags()
    if init not in ("random", "empty"):
        raise ConfigError(f"init must be 'random' or 'empty', got {init!r}")
    params: OrderedDict = OrderedDict()
    rng = np.random.default_rng(seed) if init == "random" else None
    for name, shape, kind in parameter_entries(spec, ablation):
        if init == "empty":
            params[name] = None
        elif kind == "weight":
            params[name] = truncated_normal(rng, shape)
        elif kind == "one":
            params[name] = np.ones(shape, dtype=DTYPE)
        else:
            params[name] = np.zeros(shape, dtype=DTYPE)
    return Model(spec=spec, ablation=ablation, params=params)


# ---------------------------------------------------------------------------
# Typed views over the flat parameter dict
# ---------------------------------------------------------------------------

def _bn(model: Model, prefix: str) -> B.BNParams | None:
    p = model.params
    if f"{prefix}.gamma" not in p:
        return None
    return B.BNParams(
        gamma=p[f"{prefix}.gamma"], beta=p[f"{prefix}.beta"],
        mean=p[f"{prefix}.mean"], var=p[f"{prefix}.var"], eps=model.bn_eps,
    )


def _convbn(model: Model, prefix: str) -> B.ConvBN:
    p = model.params
    return B.ConvBN(w=p[f"{prefix}.w"], b=p.get(f"{prefix}.b"), bn=_bn(model, f"{prefix}.bn"))


def _invres(model: Model, prefix: str) -> B.InvResParams:
    return B.InvResParams(
        expand=_convbn(model, f"{prefix}.expand"),
        dw=_convbn(model, f"{prefix}.dw"),
        project=_convbn(model, f"{prefix}.project"),
    )


def _attn(model: Model, prefix: str, stage: int):
    p, spec = model.params, model.spec
    if model.ablation.standard_attention:
        return B.StdAttnParams(
            norm=_bn(model, f"{prefix}.norm"),
            qkv_w=p[f"{prefix}.qkv.w"], qkv_b=p[f"{prefix}.qkv.b"],
            proj_w=p[f"{prefix}.linear.w"], proj_b=p[f"{prefix}.linear.b"],
            heads=spec.heads(stage),
        )
    return B.MAttnParams(
        norm=_bn(model, f"{prefix}.pw.norm"),
        pw_w=p[f"{prefix}.pw.w"], pw_b=p[f"{prefix}.pw.b"],
        value_norm=_bn(model, f"{prefix}.dw.norm"),
        dw_w=p[f"{prefix}.dw.w"], dw_b=p[f"{prefix}.dw.b"],
        pos_bias=p[f"{prefix}.bias"],
        linear_w=p[f"{prefix}.linear.w"], linear_b=p[f"{prefix}.linear.b"],
        ffn0_w=p[f"{prefix}.ffn.0.w"], ffn0_b=p[f"{prefix}.ffn.0.b"],
        ffn1_w=p[f"{prefix}.ffn.1.w"], ffn1_b=p[f"{prefix}.ffn.1.b"],
        heads=spec.heads(stage), bias_mode=spec.bias_mode,
    )


def stem_params(model: Model) -> B.StemParams:
    return B.StemParams(convs=tuple(_convbn(model, f"stem.conv{j}") for j in range(3)))


def embed_params(model: Model, i: int) -> B.EmbedParams:
    return B.EmbedParams(conv=_convbn(model, f"embed{i}"))


def stage_params(model: Model, stage: int) -> B.StageParams:
    spec, abl = model.spec, model.ablation
    s = f"stage{stage + 1}"
    n_mix = spec.mixer_counts[stage] * spec.mixer_depth
    gate = None if abl.no_local_stream else _convbn(model, f"{s}.fuse.gate")
    return B.StageParams(
        invres=tuple(_invres(model, f"{s}.invres{k}") for k in range(spec.invres_counts[stage])),
        mixer=tuple(_invres(model, f"{s}.mixer.{j}") for j in range(n_mix)),
        attn=tuple(_attn(model, f"{s}.mattn{k}", stage) for k in range(spec.mattn_counts[stage])),
        convt_w=model.params[f"{s}.convt.w"],
        convt_b=model.params[f"{s}.convt.b"],
        convt_factor=CONVT_FACTORS[stage],
        fuse=B.FuseParams(gate=gate, merge=_convbn(model, f"{s}.fuse.merge")),
        no_local=abl.no_local_stream,
        std_attn=abl.standard_attention,
    )


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------

def iter_segments(model: Model):
    """Yield (block name, transform) pairs whose composition is the forward
    pass. The local stream is captured in closure state so the pooled global
    path can be traced block by block."""
    if not model.loaded():
        raise StateError("model parameters are empty; load weights or build with random init")
    spec = model.spec
    sp = stem_params(model)
    yield "stem", lambda x, p=sp: B.stem_forward(x, p)
    for i in range(3):
        st = stage_params(model, i)
        s = f"stage{i + 1}"
        for k, bp in enumerate(st.invres):
            yield f"{s}.invres{k}", lambda x, p=bp: B.invres_forward(x, p)
        local: dict = {}

        def pool_and_mix(x, st=st, local=local):
            local["x_l"] = x
            g = K.adaptive_avg_pool2d(x, POOLED_HW, POOLED_HW)
            return B.mixer_forward(g, st.mixer)

        yield f"{s}.mixer", pool_and_mix
        for k, ap in enumerate(st.attn):
            yield f"{s}.mattn{k}", lambda g, p=ap: B.attn_block_forward(g, p)
        yield f"{s}.convt", (
            lambda g, st=st: K.conv_transpose2d(g, st.convt_w, st.convt_b, st.convt_factor)
        )

        def fuse(g, st=st, local=local):
            if st.no_local:
                return B._pw(st.fuse.merge, g)
            return B.fuse_streams(local.pop("x_l"), g, st.fuse)

        yield f"{s}.fuse", fuse
        if i < 2:
            ep = embed_params(model, i + 1)
            yield f"embed{i + 1}", lambda x, p=ep: B.embedding_forward(x, p)
    hw = model.params["head.linear.w"]
    hb = model.params["head.linear.b"]
    yield "head", lambda x: K.linear(K.global_avg_pool(x), hw, hb)


def forward(model: Model, img: np.ndarray, trace: dict | None = None) -> np.ndarray:
    """Run inference to class logits. When trace is a dict, the activation at
    every named block boundary is recorded into it."""
    x = np.ascontiguousarray(img, dtype=DTYPE)
    for name, fn in iter_segments(model):
        x = fn(x)
        if trace is not None:
            trace[name] = x
    return x


# ---------------------------------------------------------------------------
# Structural audits
# ---------------------------------------------------------------------------

def count_params(model_or_spec, ablation: AblationFlags | None = None) -> int:
    """Learnable parameter count (BN running statistics excluded)."""
    shapes = _shapes_of(model_or_spec, ablation)
    return sum(int(np.prod(s)) for n, s in shapes.items() if not is_bn_statistic(n))


def count_bn_stats(model_or_spec, ablation: AblationFlags | None = None) -> int:
    shapes = _shapes_of(model_or_spec, ablation)
    return sum(int(np.prod(s)) for n, s in shapes.items() if is_bn_statistic(n))


def count_params_by_block(model_or_spec, ablation: AblationFlags | None = None) -> OrderedDict:
    shapes = _shapes_of(model_or_spec, ablation)
    out: OrderedDict = OrderedDict()
    for n, s in shapes.items():
        if is_bn_statistic(n):
            continue
        blk = block_of_param(n)
        out[blk] = out.get(blk, 0) + int(np.prod(s))
    return out


def _shapes_of(model_or_spec, ablation):
    if isinstance(model_or_spec, Model):
        m = model_or_spec
        declared = parameter_shapes(m.spec, m.ablation)
        return OrderedDict(
            (n, v.shape if v is not None else declared[n]) for n, v in m.params.items()
        )
    spec = get_variant(model_or_spec) if isinstance(model_or_spec, str) else model_or_spec
    return parameter_shapes(spec, ablation or AblationFlags())


def conv_macs(cout: int, cin_per_group: int, kh: int, kw: int, oh: int, ow: int) -> int:
    return cout * cin_per_group * kh * kw * oh * ow


def count_macs_by_block(spec: VariantSpec | str, ablation: AblationFlags | None = None,
                        input_hw: int | None = None) -> OrderedDict:
    """Analytic multiply-accumulate counts per block for one forward pass.
    Convolutions, linear layers and attention products are counted; norms,
    activations and pooling are not."""
    spec = get_variant(spec) if isinstance(spec, str) else spec
    ablation = ablation or AblationFlags()
    hw = input_hw or spec.input_hw
    t = POOLED_HW * POOLED_HW
    out: OrderedDict = OrderedDict()

    stem = 0
    cin, res = 3, hw
    for c in spec.stem_channels():
        res //= 2
        stem += conv_macs(c, cin, 3, 3, res, res)
        cin = c
    out["stem"] = stem

    for i in range(3):
        s, c = f"stage{i + 1}", spec.stage_dims[i]
        e, r = spec.expansion_ratio, spec.ffn_ratio
        res = hw // (8 << i)
        px = res * res
        ec = c * e
        invres_unit = conv_macs(ec, c, 1, 1, 1, 1) + conv_macs(ec, 1, 3, 3, 1, 1) \
            + conv_macs(c, ec, 1, 1, 1, 1)
        for k in range(spec.invres_counts[i]):
            out[f"{s}.invres{k}"] = invres_unit * px
        out[f"{s}.mixer"] = invres_unit * t * spec.mixer_counts[i] * spec.mixer_depth
        attn_products = 2 * t * t * c
        if ablation.standard_attention:
            per_attn = (3 * c * c + c * c) * t + attn_products
        else:
            per_attn = (c * c + 9 * c + c * c + 2 * r * c * c) * t + attn_products
        for k in range(spec.mattn_counts[i]):
            out[f"{s}.mattn{k}"] = per_attn
        f = CONVT_FACTORS[i]
        out[f"{s}.convt"] = c * c * f * f * t
        if ablation.no_local_stream:
            out[f"{s}.fuse"] = c * c * px
        else:
            out[f"{s}.fuse"] = (c * c + 2 * c * c) * px
        if i < 2:
            nxt_res = hw // (8 << (i + 1))
            out[f"embed{i + 1}"] = conv_macs(spec.stage_dims[i + 1], c, 3, 3, nxt_res, nxt_res)
    out["head"] = spec.num_classes * spec.stage_dims[2]
    return out


def count_macs(spec, ablation: AblationFlags | None = None, input_hw: int | None = None) -> int:
    return sum(count_macs_by_block(spec, ablation, input_hw).values())


def count_gmacs(spec, ablation: AblationFlags | None = None, input_hw: int | None = None) -> float:
    return count_macs(spec, ablation, input_hw) / 1e9

"""The cross-implementation contract: variant table, parameter names, shapes,
entry order and the seeded init recipe.

This file is a deliberate, standalone restatement of the engine's naming
contract; the two implementations exchange tensors only through the SBCW
container, and the parity tests assert that seeded exports from both sides
are byte-identical.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

POOLED_HW = 7
CONVT_FACTORS = (4, 2, 1)
INIT_STD = 0.02


@dataclass(frozen=True)
class Variant:
    name: str
    stage_dims: tuple[int, int, int]
    mattn_counts: tuple[int, int, int]
    expansion_ratio: int
    invres_counts: tuple[int, int, int] = (2, 2, 1)
    mixer_blocks: int = 2
    ffn_ratio: int = 2
    head_dim: int = 32
    num_classes: int = 1000
    input_hw: int = 224

    def stem_channels(self):
        c1 = self.stage_dims[0]
        return (c1 // 2, c1, c1)

    def heads(self, stage):
        return self.stage_dims[stage] // self.head_dim


VARIANTS = {
    "XS": Variant("XS", (96, 160, 288), (2, 3, 2), expansion_ratio=3),
    "S": Variant("S", (96, 192, 320), (2, 4, 3), expansion_ratio=4),
    "B": Variant("B", (128, 256, 384), (2, 4, 3), expansion_ratio=4),
    "L": Variant("L", (192, 288, 384), (2, 4, 3), expansion_ratio=5),
}

ABLATIONS = ("none", "no-local", "std-attn")


def _bn(prefix, c):
    yield f"{prefix}.gamma", (c,), "one"
    yield f"{prefix}.beta", (c,), "zero"
    yield f"{prefix}.mean", (c,), "zero"
    yield f"{prefix}.var", (c,), "one"


def _invres(prefix, c, e):
    ec = c * e
    yield f"{prefix}.expand.w", (ec, c, 1, 1), "weight"
    yield from _bn(f"{prefix}.expand.bn", ec)
    yield f"{prefix}.dw.w", (ec, 1, 3, 3), "weight"
    yield from _bn(f"{prefix}.dw.bn", ec)
    yield f"{prefix}.project.w", (c, ec, 1, 1), "weight"
    yield from _bn(f"{prefix}.project.bn", c)


def _attn(prefix, c, r, std_attn):
    if std_attn:
        yield from _bn(f"{prefix}.norm", c)
        yield f"{prefix}.qkv.w", (3 * c, c), "weight"
        yield f"{prefix}.qkv.b", (3 * c,), "zero"
        yield f"{prefix}.linear.w", (c, c), "weight"
        yield f"{prefix}.linear.b", (c,), "zero"
        return
    yield from _bn(f"{prefix}.pw.norm", c)
    yield f"{prefix}.pw.w", (c, c, 1, 1), "weight"
    yield f"{prefix}.pw.b", (c,), "zero"
    yield from _bn(f"{prefix}.dw.norm", c)
    yield f"{prefix}.dw.w", (c, 1, 3, 3), "weight"
    yield f"{prefix}.dw.b", (c,), "zero"
    yield f"{prefix}.bias", (POOLED_HW * POOLED_HW,), "zero"
    yield f"{prefix}.linear.w", (c, c), "weight"
    yield f"{prefix}.linear.b", (c,), "zero"
    yield f"{prefix}.ffn.0.w", (r * c, c), "weight"
    yield f"{prefix}.ffn.0.b", (r * c,), "zero"
    yield f"{prefix}.ffn.1.w", (c, r * c), "weight"
    yield f"{prefix}.ffn.1.b", (c,), "zero"


def parameter_entries(spec: Variant, ablation: str = "none"):
    no_local = ablation == "no-local"
    std_attn = ablation == "std-attn"
    cin = 3
    for j, c in enumerate(spec.stem_channels()):
        yield f"stem.conv{j}.w", (c, cin, 3, 3), "weight"
        yield from _bn(f"stem.conv{j}.bn", c)
        cin = c
    for i in range(3):
        s, c = f"stage{i + 1}", spec.stage_dims[i]
        e, r = spec.expansion_ratio, spec.ffn_ratio
        for k in range(spec.invres_counts[i]):
            yield from _invres(f"{s}.invres{k}", c, e)
        for j in range(spec.mixer_blocks):
            yield from _invres(f"{s}.mixer.{j}", c, e)
        for k in range(spec.mattn_counts[i]):
            yield from _attn(f"{s}.mattn{k}", c, r, std_attn)
        f = CONVT_FACTORS[i]
        yield f"{s}.convt.w", (c, c, f, f), "weight"
        yield f"{s}.convt.b", (c,), "zero"
        if not no_local:
            yield f"{s}.fuse.gate.w", (c, c, 1, 1), "weight"
            yield from _bn(f"{s}.fuse.gate.bn", c)
            yield f"{s}.fuse.merge.w", (c, 2 * c, 1, 1), "weight"
        else:
            yield f"{s}.fuse.merge.w", (c, c, 1, 1), "weight"
        yield from _bn(f"{s}.fuse.merge.bn", c)
        if i < 2:
            nxt = spec.stage_dims[i + 1]
            yield f"embed{i + 1}.w", (nxt, c, 3, 3), "weight"
            yield from _bn(f"embed{i + 1}.bn", nxt)
    yield "head.linear.w", (spec.num_classes, spec.stage_dims[2]), "weight"
    yield "head.linear.b", (spec.num_classes,), "zero"


def block_names(spec: Variant) -> list[str]:
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


def is_bn_statistic(name: str) -> bool:
    return name.endswith(".mean") or name.endswith(".var")


def init_params(spec: Variant, ablation: str = "none", seed: int = 0) -> OrderedDict:
    """Seeded weights: truncated normal (std 0.02, clipped at two sigma) for
    weights drawn in contract order from one PCG64 stream, zeros for biases
    and BN shifts, ones for BN scales."""
    rng = np.random.default_rng(seed)
    out: OrderedDict = OrderedDict()
    for name, shape, kind in parameter_entries(spec, ablation):
        if kind == "weight":
            vals = rng.normal(0.0, INIT_STD, size=int(np.prod(shape)))
            out[name] = np.clip(vals, -2 * INIT_STD, 2 * INIT_STD).astype(np.float32).reshape(shape)
        elif kind == "one":
            out[name] = np.ones(shape, dtype=np.float32)
        else:
            out[name] = np.zeros(shape, dtype=np.float32)
    return out

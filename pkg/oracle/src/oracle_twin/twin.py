"""PyTorch twin of the inference engine, used to validate it numerically.

Module structure, parameter shapes and the forward graph mirror the engine
exactly; parameters are generated by the shared seeded recipe and exchanged
through the SBCW container under the contract names.
"""
from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .contract import CONVT_FACTORS, POOLED_HW, Variant, VARIANTS, init_params

BN_EPS = 1e-5


def _bn(c):
    return nn.BatchNorm2d(c, eps=BN_EPS)


class ConvBNAct(nn.Module):
    def __init__(self, cin, cout, stride, act=True):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn = _bn(cout)
        self.act = act

    def forward(self, x):
        x = self.bn(self.conv(x))
        return F.gelu(x) if self.act else x


class InvRes(nn.Module):
    def __init__(self, c, e):
        super().__init__()
        ec = c * e
        self.expand = nn.Conv2d(c, ec, 1, bias=False)
        self.expand_bn = _bn(ec)
        self.dw = nn.Conv2d(ec, ec, 3, padding=1, groups=ec, bias=False)
        self.dw_bn = _bn(ec)
        self.project = nn.Conv2d(ec, c, 1, bias=False)
        self.project_bn = _bn(c)

    def forward(self, x):
        h = F.gelu(self.expand_bn(self.expand(x)))
        h = F.gelu(self.dw_bn(self.dw(h)))
        return x + self.project_bn(self.project(h))


def _to_tokens(x):
    return x.flatten(2).transpose(1, 2)  # [1, C, h, w] -> [1, hw, C]


def _to_map(t, h, w):
    return t.transpose(1, 2).reshape(1, -1, h, w)


class MAttn(nn.Module):
    def __init__(self, c, heads, r):
        super().__init__()
        self.norm = _bn(c)
        self.pw = nn.Conv2d(c, c, 1)
        self.value_norm = _bn(c)
        self.dw = nn.Conv2d(c, c, 3, padding=1, groups=c)
        self.pos_bias = nn.Parameter(torch.zeros(POOLED_HW * POOLED_HW))
        self.linear = nn.Linear(c, c)
        self.ffn0 = nn.Linear(c, r * c)
        self.ffn1 = nn.Linear(r * c, c)
        self.heads = heads

    def forward(self, x):
        _, c, h, w = x.shape
        y_map = self.pw(self.norm(x))
        y_val = F.gelu(self.dw(self.value_norm(y_map))) + y_map
        y = _to_tokens(y_map)
        v = _to_tokens(y_val)
        hw, d = h * w, c // self.heads
        yh = y.reshape(1, hw, self.heads, d).permute(0, 2, 1, 3)
        vh = v.reshape(1, hw, self.heads, d).permute(0, 2, 1, 3)
        scores = yh @ yh.transpose(-2, -1) / math.sqrt(d)
        scores = scores + self.pos_bias[None, None, None, :]  # per-key bias
        attn = scores.softmax(dim=-1)
        o = (attn @ vh).permute(0, 2, 1, 3).reshape(1, hw, c)
        x1 = _to_map(self.linear(o), h, w) + x
        t = _to_tokens(x1)
        return _to_map(self.ffn1(F.gelu(self.ffn0(t))), h, w) + x1


class StdAttn(nn.Module):
    def __init__(self, c, heads):
        super().__init__()
        self.norm = _bn(c)
        self.qkv = nn.Linear(c, 3 * c)
        self.proj = nn.Linear(c, c)
        self.heads = heads

    def forward(self, x):
        _, c, h, w = x.shape
        t = _to_tokens(self.norm(x))
        qkv = self.qkv(t)
        q, k, v = qkv[..., :c], qkv[..., c : 2 * c], qkv[..., 2 * c :]
        hw, d = h * w, c // self.heads
        qh = q.reshape(1, hw, self.heads, d).permute(0, 2, 1, 3)
        kh = k.reshape(1, hw, self.heads, d).permute(0, 2, 1, 3)
        vh = v.reshape(1, hw, self.heads, d).permute(0, 2, 1, 3)
        attn = (qh @ kh.transpose(-2, -1) / math.sqrt(d)).softmax(dim=-1)
        o = (attn @ vh).permute(0, 2, 1, 3).reshape(1, hw, c)
        return _to_map(self.proj(o), h, w) + x


class Stage(nn.Module):
    def __init__(self, spec: Variant, i: int, ablation: str):
        super().__init__()
        c = spec.stage_dims[i]
        self.no_local = ablation == "no-local"
        self.invres = nn.ModuleList(InvRes(c, spec.expansion_ratio)
                                    for _ in range(spec.invres_counts[i]))
        self.mixer = nn.ModuleList(InvRes(c, spec.expansion_ratio)
                                   for _ in range(spec.mixer_blocks))
        if ablation == "std-attn":
            self.attn = nn.ModuleList(StdAttn(c, spec.heads(i))
                                      for _ in range(spec.mattn_counts[i]))
        else:
            self.attn = nn.ModuleList(MAttn(c, spec.heads(i), spec.ffn_ratio)
                                      for _ in range(spec.mattn_counts[i]))
        f = CONVT_FACTORS[i]
        self.convt = nn.ConvTranspose2d(c, c, f, stride=f)
        if not self.no_local:
            self.gate = nn.Conv2d(c, c, 1, bias=False)
            self.gate_bn = _bn(c)
        self.merge = nn.Conv2d(c if self.no_local else 2 * c, c, 1, bias=False)
        self.merge_bn = _bn(c)

    def forward(self, x, stage_name, trace):
        for k, blk in enumerate(self.invres):
            x = blk(x)
            _rec(trace, f"{stage_name}.invres{k}", x)
        g = F.adaptive_avg_pool2d(x, (POOLED_HW, POOLED_HW))
        for blk in self.mixer:
            g = blk(g)
        _rec(trace, f"{stage_name}.mixer", g)
        for k, blk in enumerate(self.attn):
            g = blk(g)
            _rec(trace, f"{stage_name}.mattn{k}", g)
        g = self.convt(g)
        _rec(trace, f"{stage_name}.convt", g)
        if self.no_local:
            out = self.merge_bn(self.merge(g))
        else:
            gate = torch.sigmoid(self.gate_bn(self.gate(g)))
            out = self.merge_bn(self.merge(torch.cat([x * gate, g], dim=1)))
        _rec(trace, f"{stage_name}.fuse", out)
        return out


def _rec(trace, name, x):
    if trace is not None:
        trace[name] = x.detach().numpy().copy()


class TwinModel(nn.Module):
    def __init__(self, spec: Variant, ablation: str = "none"):
        super().__init__()
        self.spec = spec
        self.ablation = ablation
        widths = spec.stem_channels()
        self.stem = nn.ModuleList()
        cin = 3
        for c in widths:
            self.stem.append(ConvBNAct(cin, c, stride=2))
            cin = c
        self.stages = nn.ModuleList(Stage(spec, i, ablation) for i in range(3))
        self.embeds = nn.ModuleList(
            ConvBNAct(spec.stage_dims[i], spec.stage_dims[i + 1], stride=2, act=False)
            for i in range(2)
        )
        self.head = nn.Linear(spec.stage_dims[2], spec.num_classes)

    def forward(self, x, trace=None):
        for conv in self.stem:
            x = conv(x)
        _rec(trace, "stem", x)
        for i, stage in enumerate(self.stages):
            x = stage(x, f"stage{i + 1}", trace)
            if i < 2:
                x = self.embeds[i](x)
                _rec(trace, f"embed{i + 1}", x)
        logits = self.head(x.mean(dim=(2, 3)))
        _rec(trace, "head", logits)
        return logits


# ---------------------------------------------------------------------------
# Contract-name mapping
# ---------------------------------------------------------------------------

def _bn_map(prefix, bn):
    return [
        (f"{prefix}.gamma", bn.weight),
        (f"{prefix}.beta", bn.bias),
        (f"{prefix}.mean", bn.running_mean),
        (f"{prefix}.var", bn.running_var),
    ]


def _invres_map(prefix, m: InvRes):
    return (
        [(f"{prefix}.expand.w", m.expand.weight)]
        + _bn_map(f"{prefix}.expand.bn", m.expand_bn)
        + [(f"{prefix}.dw.w", m.dw.weight)]
        + _bn_map(f"{prefix}.dw.bn", m.dw_bn)
        + [(f"{prefix}.project.w", m.project.weight)]
        + _bn_map(f"{prefix}.project.bn", m.project_bn)
    )


def _attn_map(prefix, m):
    if isinstance(m, StdAttn):
        return (
            _bn_map(f"{prefix}.norm", m.norm)
            + [
                (f"{prefix}.qkv.w", m.qkv.weight),
                (f"{prefix}.qkv.b", m.qkv.bias),
                (f"{prefix}.linear.w", m.proj.weight),
                (f"{prefix}.linear.b", m.proj.bias),
            ]
        )
    return (
        _bn_map(f"{prefix}.pw.norm", m.norm)
        + [(f"{prefix}.pw.w", m.pw.weight), (f"{prefix}.pw.b", m.pw.bias)]
        + _bn_map(f"{prefix}.dw.norm", m.value_norm)
        + [
            (f"{prefix}.dw.w", m.dw.weight),
            (f"{prefix}.dw.b", m.dw.bias),
            (f"{prefix}.bias", m.pos_bias),
            (f"{prefix}.linear.w", m.linear.weight),
            (f"{prefix}.linear.b", m.linear.bias),
            (f"{prefix}.ffn.0.w", m.ffn0.weight),
            (f"{prefix}.ffn.0.b", m.ffn0.bias),
            (f"{prefix}.ffn.1.w", m.ffn1.weight),
            (f"{prefix}.ffn.1.b", m.ffn1.bias),
        ]
    )


def contract_tensors(model: TwinModel) -> "OrderedDict[str, torch.Tensor]":
    """Live views of every parameter/buffer keyed by contract name, in the
    contract's canonical order."""
    pairs = []
    for j, conv in enumerate(model.stem):
        pairs.append((f"stem.conv{j}.w", conv.conv.weight))
        pairs += _bn_map(f"stem.conv{j}.bn", conv.bn)
    for i, stage in enumerate(model.stages):
        s = f"stage{i + 1}"
        for k, blk in enumerate(stage.invres):
            pairs += _invres_map(f"{s}.invres{k}", blk)
        for j, blk in enumerate(stage.mixer):
            pairs += _invres_map(f"{s}.mixer.{j}", blk)
        for k, blk in enumerate(stage.attn):
            pairs += _attn_map(f"{s}.mattn{k}", blk)
        pairs += [(f"{s}.convt.w", stage.convt.weight), (f"{s}.convt.b", stage.convt.bias)]
        if not stage.no_local:
            pairs.append((f"{s}.fuse.gate.w", stage.gate.weight))
            pairs += _bn_map(f"{s}.fuse.gate.bn", stage.gate_bn)
        pairs.append((f"{s}.fuse.merge.w", stage.merge.weight))
        pairs += _bn_map(f"{s}.fuse.merge.bn", stage.merge_bn)
        if i < 2:
            pairs.append((f"embed{i + 1}.w", model.embeds[i].conv.weight))
            pairs += _bn_map(f"embed{i + 1}.bn", model.embeds[i].bn)
    pairs += [("head.linear.w", model.head.weight), ("head.linear.b", model.head.bias)]
    return OrderedDict(pairs)


def load_contract(model: TwinModel, arrays: "dict[str, np.ndarray]") -> None:
    tensors = contract_tensors(model)
    missing = [n for n in tensors if n not in arrays]
    extra = [n for n in arrays if n not in tensors]
    if missing or extra:
        raise ValueError(f"contract mismatch: missing={missing[:5]} extra={extra[:5]}")
    with torch.no_grad():
        for name, t in tensors.items():
            src = np.asarray(arrays[name], dtype=np.float32)
            if tuple(src.shape) != tuple(t.shape):
                raise ValueError(f"{name}: shape {src.shape} != twin {tuple(t.shape)}")
            t.copy_(torch.from_numpy(src.copy()))


def export_contract(model: TwinModel) -> "OrderedDict[str, np.ndarray]":
    return OrderedDict(
        (name, t.detach().numpy().astype(np.float32).copy())
        for name, t in contract_tensors(model).items()
    )


def count_learnable(model: TwinModel) -> int:
    return sum(
        t.numel()
        for name, t in contract_tensors(model).items()
        if not (name.endswith(".mean") or name.endswith(".var"))
    )


def build_twin(variant: str | Variant, ablation: str = "none", seed: int = 0) -> TwinModel:
    spec = VARIANTS[variant] if isinstance(variant, str) else variant
    model = TwinModel(spec, ablation)
    load_contract(model, init_params(spec, ablation, seed))
    model.eval()
    return model

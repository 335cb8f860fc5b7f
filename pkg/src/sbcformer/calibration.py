"""Structural calibration of hyperparameters the variant family leaves open.

The published reference budgets pin total parameters and GMACs per variant
but not the inverted-residual expansion ratio, the FFN ratio, the stem widths
or the head dimension. This module sweeps those knobs through the analytic
counters and reports relative deviations; the shipped defaults are the
configuration minimizing the summed parameter deviation subject to every
variant landing inside the acceptance bands (10% params, 15% MACs).

Run ``python -m sbcformer.calibration`` to print the sweep table.
"""
from __future__ import annotations

from dataclasses import replace

from .model import VARIANTS, AblationFlags, count_gmacs, count_params

REFERENCE_PARAMS = {"XS": 5.6e6, "S": 8.5e6, "B": 13.8e6, "L": 18.5e6}
REFERENCE_GMACS = {"XS": 0.7, "S": 0.9, "B": 1.6, "L": 2.7}
REFERENCE_ABLATED_PARAMS = {"no_local": 13.6e6, "std_attn": 12.8e6}

PARAM_BAND = 0.10
MACS_BAND = 0.15

STEM_MODES = {
    "quarter": lambda c1: (c1 // 4, c1 // 2, c1),
    "half": lambda c1: (c1 // 2, c1, c1),
    "full": lambda c1: (c1, c1, c1),
}
EXPANSION_GRID = (2, 3, 4, 5, 6)
FFN_GRID = (2, 3, 4)


def configured(variant: str, e: int, r: int, stem_mode: str):
    base = VARIANTS[variant]
    return replace(
        base,
        expansion_ratio=e,
        ffn_ratio=r,
        stem_widths=STEM_MODES[stem_mode](base.stage_dims[0]),
    )


def deviations(e, r: int, stem_mode: str) -> dict:
    """Relative param/MAC deviation per variant; e is an int or a per-variant dict."""
    out = {}
    for v in VARIANTS:
        ev = e[v] if isinstance(e, dict) else e
        spec = configured(v, ev, r, stem_mode)
        out[v] = (
            count_params(spec) / REFERENCE_PARAMS[v] - 1.0,
            count_gmacs(spec) / REFERENCE_GMACS[v] - 1.0,
        )
    return out


def within_bands(devs: dict) -> bool:
    return all(abs(p) <= PARAM_BAND and abs(m) <= MACS_BAND for p, m in devs.values())


def sweep_global() -> list:
    """All (stem, r, e) grid points with a single e shared by the variants,
    sorted by summed absolute parameter deviation."""
    rows = []
    for stem_mode in STEM_MODES:
        for r in FFN_GRID:
            for e in EXPANSION_GRID:
                devs = deviations(e, r, stem_mode)
                score = sum(abs(p) for p, _ in devs.values())
                rows.append((score, within_bands(devs), stem_mode, r, e, devs))
    rows.sort(key=lambda t: t[0])
    return rows


def sweep_per_variant(r: int = 2, stem_mode: str = "half") -> dict:
    """Best expansion ratio per variant at fixed r and stem mode."""
    best = {}
    for v in VARIANTS:
        candidates = []
        for e in EXPANSION_GRID:
            spec = configured(v, e, r, stem_mode)
            dev = abs(count_params(spec) / REFERENCE_PARAMS[v] - 1.0)
            candidates.append((dev, e))
        best[v] = min(candidates)[1]
    return best


def shipped_deviations() -> dict:
    """Deviations of the defaults actually shipped in VARIANTS."""
    out = {}
    for v, spec in VARIANTS.items():
        out[v] = (
            count_params(spec) / REFERENCE_PARAMS[v] - 1.0,
            count_gmacs(spec) / REFERENCE_GMACS[v] - 1.0,
        )
    return out


def ablated_deviations() -> dict:
    spec = VARIANTS["B"]
    return {
        "no_local": count_params(spec, AblationFlags(no_local_stream=True))
        / REFERENCE_ABLATED_PARAMS["no_local"] - 1.0,
        "std_attn": count_params(spec, AblationFlags(standard_attention=True))
        / REFERENCE_ABLATED_PARAMS["std_attn"] - 1.0,
    }


def format_table() -> str:
    lines = ["global grid (one expansion ratio for all variants), top 8 by summed |param dev|:"]
    for score, ok, stem_mode, r, e, devs in sweep_global()[:8]:
        cells = "  ".join(
            f"{v}:{p * 100:+6.2f}%/{m * 100:+6.2f}%" for v, (p, m) in devs.items()
        )
        lines.append(f"  stem={stem_mode:7s} r={r} e={e}  in-band={ok}  {cells}")
    lines.append("")
    lines.append("shipped defaults (params dev / macs dev):")
    for v, (p, m) in shipped_deviations().items():
        spec = VARIANTS[v]
        lines.append(
            f"  {v:2s} e={spec.expansion_ratio} r={spec.ffn_ratio} stem={spec.stem_channels()}"
            f"  params {p * 100:+6.2f}%  macs {m * 100:+6.2f}%"
        )
    abl = ablated_deviations()
    lines.append(
        f"  B ablations: no-local {abl['no_local'] * 100:+6.2f}%  "
        f"std-attn {abl['std_attn'] * 100:+6.2f}%"
    )
    return "\n".join(lines)


if __name__ == "__main__":
    print(format_table())

"""Golden bundle generation: seeded weights, a seeded input, and reference
activations at every named block boundary, for cross-implementation parity
verification."""
from __future__ import annotations

import argparse
import json
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from .contract import VARIANTS, block_names
from .sbcw import write_sbcw
from .twin import build_twin, export_contract

DEFAULT_TOL = 1e-4


def _deterministic():
    torch.set_num_threads(1)
    torch.manual_seed(0)
    torch.use_deterministic_algorithms(True)
    torch.backends.mkldnn.enabled = False


def dump_golden(variant: str, ablation: str = "none", seed: int = 0, input_seed: int = 0,
                outdir="golden", tolerance: float = DEFAULT_TOL) -> dict:
    """Write weights.sbcw, golden.sbcw (input + act.* tensors) and
    manifest.json into outdir; returns the manifest."""
    _deterministic()
    spec = VARIANTS[variant]
    model = build_twin(variant, ablation, seed)
    x = np.random.default_rng(input_seed).standard_normal(
        (1, 3, spec.input_hw, spec.input_hw)
    ).astype(np.float32)
    trace: dict = {}
    with torch.no_grad():
        model(torch.from_numpy(x.copy()), trace=trace)
    expected = block_names(spec)
    assert list(trace) == expected, "twin trace order diverged from the contract"

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    weights_path = outdir / "weights.sbcw"
    golden_path = outdir / "golden.sbcw"
    write_sbcw(export_contract(model), weights_path)
    bundle = OrderedDict([("input", x)])
    for name in expected:
        bundle[f"act.{name}"] = trace[name]
    write_sbcw(bundle, golden_path)
    manifest = {
        "variant": variant,
        "ablation": ablation,
        "seed": seed,
        "input_seed": input_seed,
        "tolerance": tolerance,
        "weights": weights_path.name,
        "golden": golden_path.name,
        "layers": expected,
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def export_weights(variant: str, ablation: str = "none", seed: int = 0, out="weights.sbcw"):
    _deterministic()
    model = build_twin(variant, ablation, seed)
    write_sbcw(export_contract(model), out)


def _common_args(p):
    p.add_argument("--model", required=True, choices=sorted(VARIANTS))
    p.add_argument("--ablate", choices=["no-local", "std-attn"], default=None)
    p.add_argument("--seed", type=int, default=0)


def main(argv=None):
    p = argparse.ArgumentParser(description="dump a golden parity bundle")
    _common_args(p)
    p.add_argument("--input-seed", type=int, default=0)
    p.add_argument("--out", default="golden")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    args = p.parse_args(argv)
    manifest = dump_golden(args.model, args.ablate or "none", args.seed,
                           args.input_seed, args.out, args.tol)
    print(json.dumps(manifest, indent=2))
    return 0


def export_main(argv=None):
    p = argparse.ArgumentParser(description="export seeded twin weights")
    _common_args(p)
    p.add_argument("--out", required=True)
    args = p.parse_args(argv)
    export_weights(args.model, args.ablate or "none", args.seed, args.out)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

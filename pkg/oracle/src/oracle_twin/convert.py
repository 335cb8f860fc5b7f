"""Best-effort conversion of externally trained checkpoints into the SBCW
container. Experimental: the published checkpoint layout is unknown until
inspected, so conversion works from (a) exact contract names, (b) this twin's
own module names, or (c) a user-supplied JSON rename map, and reports every
tensor it could not place."""
from __future__ import annotations

import argparse
import json
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from .contract import VARIANTS
from .sbcw import write_sbcw
from .twin import TwinModel, contract_tensors

STATE_KEYS = ("state_dict", "model", "module")
STRIP_PREFIXES = ("module.", "model.")


def _module_name_map(variant: str, ablation: str) -> dict:
    """torch module-path name -> contract name, derived from the twin itself."""
    model = TwinModel(VARIANTS[variant], ablation)
    by_id = {id(t): name for name, t in contract_tensors(model).items()}
    mapping = {}
    for tname, t in list(model.named_parameters()) + list(model.named_buffers()):
        if id(t) in by_id:
            mapping[tname] = by_id[id(t)]
    return mapping


def _flatten_checkpoint(obj) -> dict:
    if isinstance(obj, dict):
        for key in STATE_KEYS:
            if key in obj and isinstance(obj[key], dict):
                return obj[key]
        return obj
    raise ValueError("checkpoint is not a state dictionary")


def _normalize(name: str) -> str:
    for pre in STRIP_PREFIXES:
        if name.startswith(pre):
            return name[len(pre):]
    return name


def convert_checkpoint(path, out, variant: str, ablation: str = "none",
                       rename_map: dict | None = None) -> dict:
    raw = torch.load(path, map_location="cpu", weights_only=False)
    state = {_normalize(k): v for k, v in _flatten_checkpoint(raw).items()}
    targets = contract_tensors(TwinModel(VARIANTS[variant], ablation))
    module_map = _module_name_map(variant, ablation)
    rename_map = rename_map or {}

    mapped: OrderedDict = OrderedDict()
    used = set()
    unmatched_targets = []
    for cname, ref in targets.items():
        src_name = None
        if cname in state:
            src_name = cname
        else:
            for tname, mapped_cname in module_map.items():
                if mapped_cname == cname and tname in state:
                    src_name = tname
                    break
        for user_src, user_dst in rename_map.items():
            if user_dst == cname and user_src in state:
                src_name = user_src
        if src_name is None:
            unmatched_targets.append(cname)
            continue
        arr = np.asarray(state[src_name].detach().cpu().numpy()
                         if torch.is_tensor(state[src_name]) else state[src_name],
                         dtype=np.float32)
        if tuple(arr.shape) != tuple(ref.shape):
            unmatched_targets.append(cname)
            continue
        mapped[cname] = arr
        used.add(src_name)
    unmapped_sources = sorted(set(state) - used)
    report = {
        "variant": variant,
        "ablation": ablation,
        "mapped": len(mapped),
        "targets": len(targets),
        "unmatched_targets": unmatched_targets,
        "unmapped_sources": unmapped_sources,
        "complete": not unmatched_targets,
        "experimental": True,
    }
    if mapped:
        write_sbcw(mapped, out)
    return report


def main(argv=None):
    p = argparse.ArgumentParser(description="convert a trained checkpoint to SBCW (experimental)")
    p.add_argument("--model", required=True, choices=sorted(VARIANTS))
    p.add_argument("--ablate", choices=["no-local", "std-attn"], default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--map", default=None, help="JSON file of source->contract renames")
    p.add_argument("--report", default=None, help="write the conversion report here")
    args = p.parse_args(argv)
    rename_map = json.loads(Path(args.map).read_text()) if args.map else None
    report = convert_checkpoint(args.checkpoint, args.out, args.model,
                                args.ablate or "none", rename_map)
    text = json.dumps(report, indent=2)
    print(text)
    if args.report:
        Path(args.report).write_text(text + "\n")
    return 0 if report["complete"] else 1


if __name__ == "__main__":
    raise SystemExit(main())

"""Command-line entry point.

Subcommands: classify an image, benchmark latency, print structural counts,
verify activations against a golden reference bundle, and export seeded
random weights. Exit codes: 0 success, 1 usage error, 2 data or verification
failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from contextlib import nullcontext

import numpy as np

from . import __version__
from .bench import DEFAULT_RUNS, DEFAULT_WARMUP, mac_report, measure_latency
from .errors import EngineError, InputError
from .kernels import softmax_rows
from .model import (AblationFlags, block_names, build, count_gmacs, count_params,
                    forward, get_variant)
from .preprocess import PreprocessSpec, preprocess_image
from .report import emit_report, report_dict
from .weights import bind, export_random, load

USAGE_EXIT = 1
DATA_EXIT = 2

ABLATIONS = {
    None: AblationFlags(),
    "no-local": AblationFlags(no_local_stream=True),
    "std-attn": AblationFlags(standard_attention=True),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(USAGE_EXIT)


def _det_context(args):
    if getattr(args, "deterministic", False) or getattr(args, "threads", None):
        from threadpoolctl import threadpool_limits

        threads = 1 if getattr(args, "deterministic", False) else args.threads
        return threadpool_limits(limits=threads)
    return nullcontext()


def _load_model(args):
    model = build(args.model, ABLATIONS[args.ablate], init="empty")
    return bind(model, load(args.weights))


def _triple(text: str) -> tuple:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated floats")
    return tuple(parts)


def build_parser() -> _Parser:
    p = _Parser(prog="sbcformer", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, weights_required=False):
        sp.add_argument("--model", required=True, choices=["XS", "S", "B", "L"])
        sp.add_argument("--ablate", choices=["no-local", "std-attn"], default=None)
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--deterministic", action="store_true",
                        help="pin BLAS threads to 1 for bitwise-stable forwards")
        if weights_required is not None:
            sp.add_argument("--weights", required=weights_required)

    sp = sub.add_parser("classify", help="top-5 classification of an image file")
    common(sp, weights_required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--labels", default=None, help="optional text file, one label per line")
    sp.add_argument("--mean", type=_triple, default=None)
    sp.add_argument("--std", type=_triple, default=None)

    sp = sub.add_parser("bench", help="latency protocol: batch 1, warmup, timed runs, mean")
    common(sp, weights_required=False)
    sp.add_argument("--runs", type=int, default=DEFAULT_RUNS)
    sp.add_argument("--warmup", type=int, default=DEFAULT_WARMUP)
    sp.add_argument("--seed", type=int, default=0, help="weight seed when no --weights given")
    sp.add_argument("--out", default=None, help="report file; figures are written alongside")
    sp.add_argument("--format", choices=["json", "csv"], default="json")

    sp = sub.add_parser("count", help="structural audit: parameters and GMACs")
    common(sp, weights_required=None)
    sp.add_argument("--out", default=None)
    sp.add_argument("--format", choices=["json", "csv"], default="json")

    sp = sub.add_parser("verify", help="layer-by-layer comparison against golden activations")
    common(sp, weights_required=True)
    sp.add_argument("--input", required=True, help="container holding tensor 'input'")
    sp.add_argument("--golden", required=True, help="container holding 'act.<layer>' tensors")
    sp.add_argument("--tol", type=float, default=1e-4)

    sp = sub.add_parser("export-random", help="save seeded random weights")
    common(sp, weights_required=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    return p


def cmd_classify(args) -> int:
    model = _load_model(args)
    spec = PreprocessSpec(
        mean=args.mean or PreprocessSpec().mean,
        std=args.std or PreprocessSpec().std,
    )
    x = preprocess_image(args.image, spec)
    with _det_context(args):
        logits = forward(model, x)
    probs = softmax_rows(logits)[0]
    top = np.argsort(probs)[::-1][:5]
    labels = None
    if args.labels:
        labels = [ln.rstrip("\n") for ln in open(args.labels)]
    for rank, idx in enumerate(top, 1):
        name = f"  {labels[idx]}" if labels and idx < len(labels) else ""
        print(f"{rank}. class {idx:4d}  p={probs[idx]:.4f}{name}")
    return 0


def cmd_bench(args) -> int:
    if args.weights:
        model = _load_model(args)
    else:
        model = build(args.model, ABLATIONS[args.ablate], init="random", seed=args.seed)
    threads = 1 if args.deterministic else args.threads
    report = measure_latency(model, runs=args.runs, warmup=args.warmup, threads=threads)
    if args.out:
        files = emit_report(report, args.out, format=args.format)
        for f in files:
            print(f"wrote {f}")
    else:
        print(json.dumps(report_dict(report), indent=2))
    return 0


def cmd_count(args) -> int:
    model = build(args.model, ABLATIONS[args.ablate], init="empty")
    report = mac_report(model)
    params = count_params(model.spec, model.ablation)
    print(f"{args.model}{' ' + args.ablate if args.ablate else ''}: "
          f"params {params / 1e6:.3f}M  "
          f"macs {count_gmacs(model.spec, model.ablation):.3f} GMACs")
    if args.out:
        for f in emit_report(report, args.out, format=args.format):
            print(f"wrote {f}")
    return 0


def cmd_verify(args) -> int:
    model = _load_model(args)
    input_store = load(args.input)
    if "input" not in input_store:
        raise InputError(f"{args.input}: no tensor named 'input'")
    golden = load(args.golden)
    trace: dict = {}
    with _det_context(args):
        forward(model, input_store["input"], trace=trace)
    order = [n for n in block_names(model.spec) if f"act.{n}" in golden]
    stray = [n for n in golden.names() if n.startswith("act.") and n[4:] not in trace]
    if stray:
        raise InputError(f"golden bundle names unknown layers: {stray[:5]}")
    if not order:
        raise InputError(f"{args.golden}: no act.<layer> tensors match this model")
    first_fail = None
    for name in order:
        ref = golden[f"act.{name}"]
        got = trace[name]
        if ref.shape != got.shape:
            print(f"{name:24s} shape mismatch {got.shape} vs {ref.shape}")
            first_fail = first_fail or name
            continue
        diff = float(np.max(np.abs(got - ref)))
        status = "" if diff <= args.tol else "  FAIL"
        print(f"{name:24s} max_abs_diff {diff:.3e}{status}")
        if diff > args.tol and first_fail is None:
            first_fail = name
    if first_fail is not None:
        print(f"verification failed at layer {first_fail} (tol {args.tol:g})")
        return DATA_EXIT
    print(f"verification passed: {len(order)} layers within {args.tol:g}")
    return 0


def cmd_export_random(args) -> int:
    get_variant(args.model)
    export_random(args.model, args.seed, args.out, ABLATIONS[args.ablate])
    print(f"wrote {args.out}")
    return 0


COMMANDS = {
    "classify": cmd_classify,
    "bench": cmd_bench,
    "count": cmd_count,
    "verify": cmd_verify,
    "export-random": cmd_export_random,
}


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()

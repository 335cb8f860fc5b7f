"""Latency measurement and per-block profiling.

The measurement protocol is: batch size 1, a fixed random input generated
once, a warmup of untimed inferences, then 300 timed inferences whose mean is
reported. Timings use the monotonic nanosecond clock and cover the forward
pass only; preprocessing and weight loading sit outside the timed region.
"""
from __future__ import annotations

import os
import platform
import time
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .model import Model, count_macs_by_block, count_params_by_block, forward
from .tensor import DTYPE

DEFAULT_RUNS = 300
DEFAULT_WARMUP = 20


@dataclass
class BlockStat:
    name: str
    mean_ms: float | None
    macs: int
    params: int


@dataclass
class LatencyReport:
    variant: str
    runs: int
    warmup: int
    threads: int
    mean_ms: float
    p50_ms: float
    p95_ms: float
    min_ms: float
    host: dict
    blocks: list = field(default_factory=list)


@dataclass
class MacReport:
    variant: str
    blocks: list
    total_macs: int
    total_params: int


def host_descriptor() -> dict:
    cpu = platform.processor() or platform.machine()
    try:
        with open("/proc/cpuinfo") as f:
            for line in f:
                if line.lower().startswith("model name"):
                    cpu = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return {"cpu": cpu, "os": platform.platform()}


def _thread_context(threads: int | None):
    return threadpool_limits(limits=threads) if threads else nullcontext()


def mac_report(model: Model) -> MacReport:
    """Structural audit: per-block MACs and learnable parameters plus totals."""
    macs = count_macs_by_block(model.spec, model.ablation)
    params = count_params_by_block(model.spec, model.ablation)
    blocks = [
        BlockStat(name=n, mean_ms=None, macs=m, params=params.get(n, 0))
        for n, m in macs.items()
    ]
    return MacReport(
        variant=model.spec.name,
        blocks=blocks,
        total_macs=sum(b.macs for b in blocks),
        total_params=sum(b.params for b in blocks),
    )


def profile_blocks(model, x, reps: int = 3) -> MacReport:
    """Time each named block over `reps` traced passes and attach the
    structural counts. Accepts anything exposing segments()."""
    sums: dict[str, float] = {}
    order: list[str] = []
    for _ in range(max(1, reps)):
        cur = x
        for name, fn in model.segments():
            t0 = time.perf_counter_ns()
            cur = fn(cur)
            dt = (time.perf_counter_ns() - t0) / 1e6
            if name not in sums:
                sums[name] = 0.0
                order.append(name)
            sums[name] += dt
    spec = getattr(model, "spec", None)
    ablation = getattr(model, "ablation", None)
    macs = count_macs_by_block(spec, ablation) if spec is not None else {}
    params = count_params_by_block(spec, ablation) if spec is not None else {}
    blocks = [
        BlockStat(
            name=n,
            mean_ms=sums[n] / max(1, reps),
            macs=macs.get(n, 0),
            params=params.get(n, 0),
        )
        for n in order
    ]
    return MacReport(
        variant=spec.name if spec is not None else "",
        blocks=blocks,
        total_macs=sum(b.macs for b in blocks),
        total_params=sum(b.params for b in blocks),
    )


def measure_latency(model: Model, runs: int = DEFAULT_RUNS, warmup: int = DEFAULT_WARMUP,
                    threads: int | None = None, input_seed: int = 0,
                    profile_reps: int = 3) -> LatencyReport:
    hw = model.spec.input_hw
    rng = np.random.default_rng(input_seed)
    x = rng.standard_normal((1, 3, hw, hw)).astype(DTYPE)
    timings = np.empty(runs, dtype=np.float64)
    with _thread_context(threads):
        for _ in range(warmup):
            forward(model, x)
        for i in range(runs):
            t0 = time.perf_counter_ns()
            forward(model, x)
            timings[i] = (time.perf_counter_ns() - t0) / 1e6
        prof = profile_blocks(model, x, reps=profile_reps) if profile_reps else None
    return LatencyReport(
        variant=model.spec.name,
        runs=runs,
        warmup=warmup,
        threads=threads or (os.cpu_count() or 1),
        mean_ms=float(timings.mean()),
        p50_ms=float(np.percentile(timings, 50)),
        p95_ms=float(np.percentile(timings, 95)),
        min_ms=float(timings.min()),
        host=host_descriptor(),
        blocks=prof.blocks if prof else [],
    )

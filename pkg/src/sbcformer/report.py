"""Report emission: JSON and CSV serializations of benchmark and structural
audit reports, plus per-block figures rendered next to the delimited output.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

from .errors import ConfigError

TIMING_FIELDS = ("mean_ms", "p50_ms", "p95_ms", "min_ms")


def report_dict(report) -> dict:
    return asdict(report)


def emit_report(report, path, format: str = "json", figures: bool = True) -> list:
    """Write a report to `path` and render its per-block figures alongside.
    Returns the list of files written."""
    path = Path(path)
    written = [path]
    if format == "json":
        path.write_text(json.dumps(report_dict(report), indent=2) + "\n")
    elif format == "csv":
        _emit_csv(report, path)
    else:
        raise ConfigError(f"unknown report format {format!r}, expected json or csv")
    if figures:
        written += render_figures(report, path)
    return written


def _emit_csv(report, path: Path) -> None:
    blocks = report.blocks
    timed = any(b.mean_ms is not None for b in blocks)
    cols = ["name"] + (["mean_ms"] if timed else []) + ["macs", "params"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for b in blocks:
            row = [b.name] + ([f"{b.mean_ms:.6f}"] if timed else []) + [b.macs, b.params]
            w.writerow(row)
        total = ["TOTAL"]
        if timed:
            total.append(f"{sum(b.mean_ms or 0.0 for b in blocks):.6f}")
        total += [sum(b.macs for b in blocks), sum(b.params for b in blocks)]
        w.writerow(total)


def parse_report(path) -> dict:
    """Re-read an emitted JSON report; inverse of the json emit path."""
    return json.loads(Path(path).read_text())


def render_figures(report, base_path) -> list[Path]:
    """Render horizontal bar charts of per-block latency and MACs/params as
    PNG files next to `base_path`."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    base = Path(base_path)
    blocks = report.blocks
    if not blocks:
        return []
    written = []
    names = [b.name for b in blocks]
    pos = range(len(names))

    if any(b.mean_ms is not None for b in blocks):
        fig, ax = plt.subplots(figsize=(7, 0.28 * len(names) + 1.2))
        ax.barh(pos, [b.mean_ms or 0.0 for b in blocks], color="#4878cf")
        ax.set_yticks(pos, names, fontsize=7)
        ax.invert_yaxis()
        ax.set_xlabel("mean latency (ms)")
        title = getattr(report, "variant", "") or ""
        ax.set_title(f"{title} per-block latency".strip())
        fig.tight_layout()
        out = base.with_name(base.stem + "_latency.png")
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)

    fig, axes = plt.subplots(1, 2, figsize=(10, 0.28 * len(names) + 1.2), sharey=True)
    axes[0].barh(pos, [b.macs / 1e6 for b in blocks], color="#6acc64")
    axes[0].set_xlabel("MACs (millions)")
    axes[1].barh(pos, [b.params / 1e3 for b in blocks], color="#d65f5f")
    axes[1].set_xlabel("params (thousands)")
    axes[0].set_yticks(pos, names, fontsize=7)
    axes[0].invert_yaxis()
    fig.suptitle(f"{getattr(report, 'variant', '')} per-block structure".strip())
    fig.tight_layout()
    out = base.with_name(base.stem + "_structure.png")
    fig.savefig(out, dpi=120)
    plt.close(fig)
    written.append(out)
    return written

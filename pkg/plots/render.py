#!/usr/bin/env python3
"""Render figures from simulation trace CSVs.

Works purely from the trace file contract: a header row naming
``block``, ``region``, ``m``, per-tier ``tier{j}_size/delay/price/included``
columns, ``revenue``, ``welfare``, ``rejected``, and ``comp{i}_included``,
with inactive-tier cells left blank. Three figure kinds:

- ``delays``: per-tier inclusion delay over time
- ``prices``: per-tier posted price over time
- ``revenue``: per-block revenue, raw plus a trailing moving average

An optional second trace is overlaid dashed for comparison. Region changes
are marked with vertical lines.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KINDS = ("delays", "prices", "revenue")

TIER_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")


class TraceError(Exception):
    """The trace file is missing or does not follow the schema."""


@dataclass(frozen=True)
class TraceData:
    path: str
    columns: dict[str, np.ndarray]
    max_tiers: int

    @property
    def blocks(self) -> np.ndarray:
        return self.columns["block"]

    def tier(self, j: int, field: str) -> np.ndarray:
        return self.columns[f"tier{j}_{field}"]

    def active_tiers(self, field: str) -> list[int]:
        """Tier indices that are live for at least one block."""
        return [
            j for j in range(1, self.max_tiers + 1)
            if np.isfinite(self.tier(j, field)).any()
        ]

    def region_boundaries(self) -> list[float]:
        region = self.columns["region"]
        flips = np.flatnonzero(np.diff(region) != 0)
        return [float(self.blocks[i + 1]) for i in flips]


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    ylabel: str
    title: str


SPECS = {
    "delays": FigureSpec("delays", "inclusion delay (blocks)", "Tier delays"),
    "prices": FigureSpec("prices", "posted price", "Tier prices"),
    "revenue": FigureSpec("revenue", "revenue per block", "Block revenue"),
}


def read_trace(path) -> TraceData:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = list(reader)
    except OSError as exc:
        raise TraceError(f"cannot read trace {path}: {exc}") from exc
    if not header or "block" not in header or "region" not in header:
        raise TraceError(f"{path} is not a trace file (bad header)")
    columns = {}
    for i, name in enumerate(header):
        columns[name] = np.array(
            [float(r[i]) if r[i] != "" else math.nan for r in rows]
        )
    tiers = 0
    while f"tier{tiers + 1}_price" in columns:
        tiers += 1
    if tiers == 0:
        raise TraceError(f"{path} has no tier columns")
    for j in range(1, tiers + 1):
        for field in ("size", "delay", "included"):
            if f"tier{j}_{field}" not in columns:
                raise TraceError(f"{path} is missing tier{j}_{field}")
    if "revenue" not in columns:
        raise TraceError(f"{path} is missing the revenue column")
    return TraceData(path=str(path), columns=columns, max_tiers=tiers)


def moving_average(y: np.ndarray, window: int) -> tuple[np.ndarray, int]:
    """Trailing mean and the index offset of its first defined point."""
    if window <= 1 or window > len(y):
        return np.asarray(y, dtype=float), 0
    kernel = np.full(window, 1.0 / window)
    return np.convolve(y, kernel, mode="valid"), window - 1


def _mark_regions(ax, trace: TraceData) -> None:
    for x in trace.region_boundaries():
        ax.axvline(x, color="0.8", linewidth=0.8, zorder=0)


def _plot_tier_lines(ax, trace: TraceData, field: str, dashed: bool, tag: str) -> None:
    # NaN cells break the line where the tier is inactive.
    style = {"linestyle": "--", "alpha": 0.7} if dashed else {}
    for j in trace.active_tiers(field):
        label = f"{tag}tier {j}"
        color = TIER_COLORS[(j - 1) % len(TIER_COLORS)]
        ax.plot(trace.blocks, trace.tier(j, field), label=label,
                color=color, linewidth=1.0, **style)


def _plot_revenue(ax, trace: TraceData, smooth: int, dashed: bool, tag: str) -> None:
    y = trace.columns["revenue"]
    raw_style = {"linestyle": "--"} if dashed else {}
    ax.plot(trace.blocks, y, label=f"{tag}revenue", color="0.55" if dashed else "#1f77b4",
            linewidth=0.6, alpha=0.35, **raw_style)
    avg, offset = moving_average(y, smooth)
    if offset:
        ax.plot(trace.blocks[offset:], avg, label=f"{tag}mean over {smooth}",
                color="0.3" if dashed else "#d62728",
                linewidth=1.4, linestyle="--" if dashed else "-")


def build_figure(kind: str, trace: TraceData, baseline: TraceData | None = None,
                 smooth: int = 50):
    if kind not in SPECS:
        raise ValueError(f"unknown figure kind {kind!r}")
    spec = SPECS[kind]
    fig, ax = plt.subplots(figsize=(10.0, 4.5))
    _mark_regions(ax, trace)
    if kind == "revenue":
        _plot_revenue(ax, trace, smooth, dashed=False, tag="")
        if baseline is not None:
            _plot_revenue(ax, baseline, smooth, dashed=True, tag="baseline ")
    else:
        field = "delay" if kind == "delays" else "price"
        _plot_tier_lines(ax, trace, field, dashed=False, tag="")
        if baseline is not None:
            _plot_tier_lines(ax, baseline, field, dashed=True, tag="baseline ")
    ax.set_xlabel("block")
    ax.set_ylabel(spec.ylabel)
    ax.set_title(spec.title)
    ax.margins(x=0.01)
    ax.grid(True, alpha=0.25)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return fig


def render(kind: str, trace_path, out_path, baseline_path=None, smooth: int = 50) -> Path:
    trace = read_trace(trace_path)
    baseline = read_trace(baseline_path) if baseline_path else None
    fig = build_figure(kind, trace, baseline, smooth)
    out = Path(out_path)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render.py", description="Render a figure from a simulation trace CSV."
    )
    parser.add_argument("--kind", required=True, choices=KINDS,
                        help="which figure to draw")
    parser.add_argument("--trace", required=True, help="trace CSV to plot")
    parser.add_argument("--baseline", default=None,
                        help="second trace CSV overlaid for comparison")
    parser.add_argument("--out", required=True, help="image file to write")
    parser.add_argument("--smooth", type=int, default=50,
                        help="revenue moving-average window in blocks")
    args = parser.parse_args(argv)
    if args.smooth < 1:
        print("--smooth must be at least 1", file=sys.stderr)
        return 2
    try:
        out = render(args.kind, args.trace, args.out, args.baseline, args.smooth)
    except TraceError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Chart verification helpers: load the render script, recompute every
plotted series straight from the CSV, and pull the drawn series back out
of a matplotlib figure for exact comparison."""

from __future__ import annotations

import csv
import importlib.util
import re
import sys
from pathlib import Path

import numpy as np

RENDER_PATH = Path(__file__).parent.parent / "plots" / "render.py"


def load_render():
    spec = importlib.util.spec_from_file_location("bench_render", RENDER_PATH)
    module = importlib.util.module_from_spec(spec)
    sys.modules["bench_render"] = module
    spec.loader.exec_module(module)
    return module


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        raw = list(csv.DictReader(fh))
    rows = []
    for r in raw:
        rows.append({
            "scenario": r["scenario"],
            "cycle": int(r["cycle"]),
            "morphology_id": int(r["morphology_id"]),
            "mean_return": float(r["mean_return"]),
            "t_generate_ns": int(r["t_generate_ns"]),
            "t_optimize_ns": int(r["t_optimize_ns"]),
            "theta_version": int(r["theta_version"]),
        })
    return rows


def scenarios_in_order(rows):
    seen = {}
    for r in rows:
        seen.setdefault(r["scenario"], None)
    return list(seen)


def expected_curves(rows):
    """scenario -> (cycles, per-cycle mean of mean_return)"""
    out = {}
    for scenario in scenarios_in_order(rows):
        mine = [r for r in rows if r["scenario"] == scenario]
        cycles = sorted({r["cycle"] for r in mine})
        means = [float(np.mean([r["mean_return"] for r in mine
                                if r["cycle"] == c])) for c in cycles]
        out[scenario] = (cycles, means)
    return out


def expected_breakdown(rows):
    """(scenarios, generate seconds, optimize seconds)"""
    scenarios = scenarios_in_order(rows)
    gen = [sum(r["t_generate_ns"] for r in rows
               if r["scenario"] == s) / 1e9 for s in scenarios]
    opt = [sum(r["t_optimize_ns"] for r in rows
               if r["scenario"] == s) / 1e9 for s in scenarios]
    return scenarios, gen, opt


def expected_timeline(rows):
    """Per-row (morphology_id, (start, length) generate span, (start,
    length) optimize span) for the (scenario, cycle) group holding the
    most morphologies, laid end to end in update order."""
    groups = {}
    for r in rows:
        groups.setdefault((r["scenario"], r["cycle"]), []).append(r)
    if not groups:
        return []
    best = max(groups, key=lambda k: len(groups[k]))
    ordered = sorted(groups[best], key=lambda r: r["theta_version"])
    spans = []
    start = 0.0
    for r in ordered:
        gen = r["t_generate_ns"] / 1e9
        opt = r["t_optimize_ns"] / 1e9
        spans.append((r["morphology_id"], (start, gen), (start + gen, opt)))
        start += gen + opt
    return spans


def expected_scaling(rows):
    """Sorted (morphology count, cycle-total seconds), warm-up excluded."""
    pattern = re.compile(r"multi_mem_n(\d+)\Z")
    groups = {}
    for r in rows:
        m = pattern.fullmatch(r["scenario"])
        if m is None or r["cycle"] == 0:
            continue
        key = (int(m.group(1)), r["cycle"])
        groups[key] = groups.get(key, 0) + r["t_generate_ns"] + r["t_optimize_ns"]
    return [(n, ns / 1e9) for (n, _), ns in sorted(groups.items())]


def extract_curves(fig):
    ax = fig.axes[0]
    return {line.get_label(): (list(line.get_xdata()), list(line.get_ydata()))
            for line in ax.lines}


def extract_breakdown(fig):
    """The generate rectangles come first, then the optimize ones."""
    ax = fig.axes[0]
    labels = [t.get_text() for t in ax.get_xticklabels()]
    half = len(ax.patches) // 2
    gen = [p.get_height() for p in ax.patches[:half]]
    opt = [p.get_height() for p in ax.patches[half:]]
    bottoms = [p.get_y() for p in ax.patches[half:]]
    return labels, gen, opt, bottoms


def extract_timeline(fig):
    """Each row draws its generate rectangle, then its optimize one."""
    ax = fig.axes[0]
    labels = [t.get_text() for t in ax.get_yticklabels()]
    patches = ax.patches
    spans = []
    for i in range(0, len(patches), 2):
        gen, opt = patches[i], patches[i + 1]
        spans.append((labels[i // 2],
                      (gen.get_x(), gen.get_width()),
                      (opt.get_x(), opt.get_width())))
    return spans


def extract_scaling(fig):
    ax = fig.axes[0]
    if not ax.collections:
        return []
    return [(float(x), float(y)) for x, y in ax.collections[0].get_offsets()]

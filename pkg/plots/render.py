#!/usr/bin/env python3
"""Render benchmark charts from the training harness's bench.csv.

Reads only the documented CSV schema (the bench verb's output); the CSV
is this script's whole interface to the training code.  Four kinds:

  learning_curves    mean return per cycle, one line per scenario
  time_breakdown     stacked generate/optimize time per scenario
  pipeline_timeline  per-morphology phase spans within one cycle,
                     laid end to end in update order
  scaling_fit        total cycle time against morphology count, with
                     the least-squares line and R^2

Usage: render.py --kind <kind> --in <csv> --out <png>
Exit codes: 0 ok, 1 bad input (schema mismatch names the offending
column), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import re
import sys

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Patch, Rectangle  # noqa: E402

BENCH_COLUMNS = [
    "scenario", "cycle", "morphology_id", "episodes", "mean_return",
    "t_generate_ns", "t_optimize_ns", "param_count", "hidden_mem_bytes",
    "theta_version",
]
_INT_COLUMNS = {name for name in BENCH_COLUMNS
                if name not in ("scenario", "mean_return")}
_SCALING_RE = re.compile(r"multi_mem_n(\d+)\Z")

AXIS_NOTE = "desk-scale GaitChain"


class SchemaError(Exception):
    """Input CSV does not match the documented bench schema."""


def _check_header(header: list[str]) -> None:
    for name in BENCH_COLUMNS:
        if name not in header:
            raise SchemaError(f"missing column {name!r}")
    for name in header:
        if name not in BENCH_COLUMNS:
            raise SchemaError(f"unexpected column {name!r}")
    for got, want in zip(header, BENCH_COLUMNS):
        if got != want:
            raise SchemaError(f"misplaced column {got!r} (want order "
                              f"{','.join(BENCH_COLUMNS)})")


def read_rows(path: str) -> list[dict]:
    """Parse a bench CSV, checking the header exactly and coercing types.
    Raises SchemaError naming the offending column on any mismatch."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError("missing column 'scenario' (file is empty)")
        _check_header(header)
        rows = []
        for raw in reader:
            if len(raw) != len(BENCH_COLUMNS):
                raise SchemaError(
                    f"row {len(rows) + 2} has {len(raw)} fields, "
                    f"want {len(BENCH_COLUMNS)}")
            row = {}
            for name, text in zip(BENCH_COLUMNS, raw):
                try:
                    if name == "scenario":
                        row[name] = text
                    elif name in _INT_COLUMNS:
                        row[name] = int(text)
                    else:
                        row[name] = float(text)
                except ValueError as exc:
                    raise SchemaError(
                        f"column {name!r}: bad value {text!r}") from exc
            rows.append(row)
    return rows


def _scenarios_in_order(rows: list[dict]) -> list[str]:
    seen: dict[str, None] = {}
    for row in rows:
        seen.setdefault(row["scenario"], None)
    return list(seen)


def fig_learning_curves(rows: list[dict]):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for scenario in _scenarios_in_order(rows):
        mine = [r for r in rows if r["scenario"] == scenario]
        cycles = sorted({r["cycle"] for r in mine})
        means = [float(np.mean([r["mean_return"] for r in mine
                                if r["cycle"] == c])) for c in cycles]
        ax.plot(cycles, means, marker="o", label=scenario)
    ax.set_xlabel(f"training cycle ({AXIS_NOTE})")
    ax.set_ylabel("mean discounted episode return")
    ax.set_title("Memory-coupled vs memory-free training")
    if rows:
        ax.legend()
    fig.tight_layout()
    return fig


def fig_time_breakdown(rows: list[dict]):
    # explicit rectangles instead of ax.bar: the bar helper re-derives
    # lengths through its unit machinery, perturbing the last bit, and
    # these charts promise that the figure stores the series verbatim
    fig, ax = plt.subplots(figsize=(7, 4.5))
    scenarios = _scenarios_in_order(rows)
    generate = [sum(r["t_generate_ns"] for r in rows
                    if r["scenario"] == s) / 1e9 for s in scenarios]
    optimize = [sum(r["t_optimize_ns"] for r in rows
                    if r["scenario"] == s) / 1e9 for s in scenarios]
    for i, gen in enumerate(generate):
        ax.add_patch(Rectangle((i - 0.4, 0.0), 0.8, gen, color="tab:blue"))
    for i, opt in enumerate(optimize):
        ax.add_patch(Rectangle((i - 0.4, generate[i]), 0.8, opt,
                               color="tab:orange"))
    ax.set_xticks(np.arange(len(scenarios)))
    ax.set_xticklabels(scenarios, rotation=30, ha="right")
    ax.set_xlabel(f"scenario ({AXIS_NOTE})")
    ax.set_ylabel("total time, seconds")
    ax.set_title("Training time breakdown")
    if rows:
        ax.set_xlim(-0.6, len(scenarios) - 0.4)
        ax.set_ylim(0.0, 1.1 * max(g + o for g, o in zip(generate, optimize)))
        ax.legend(handles=[Patch(color="tab:blue", label="generate (rollout)"),
                           Patch(color="tab:orange",
                                 label="optimize (gradient)")])
    fig.tight_layout()
    return fig


def _busiest_group(rows: list[dict]) -> list[dict]:
    """Rows of the (scenario, cycle) group with the most morphologies,
    ties going to the group seen first."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault((row["scenario"], row["cycle"]), []).append(row)
    if not groups:
        return []
    best = max(groups, key=lambda k: len(groups[k]))
    return sorted(groups[best], key=lambda r: r["theta_version"])


def fig_pipeline_timeline(rows: list[dict]):
    # rectangles for the same reason as fig_time_breakdown
    fig, ax = plt.subplots(figsize=(7, 4.5))
    group = _busiest_group(rows)
    start = 0.0
    for i, row in enumerate(group):
        gen = row["t_generate_ns"] / 1e9
        opt = row["t_optimize_ns"] / 1e9
        ax.add_patch(Rectangle((start, i - 0.4), gen, 0.8, color="tab:blue"))
        ax.add_patch(Rectangle((start + gen, i - 0.4), opt, 0.8,
                               color="tab:orange"))
        start += gen + opt
    ax.set_yticks(range(len(group)))
    ax.set_yticklabels([f"morphology {r['morphology_id']}" for r in group])
    ax.invert_yaxis()
    ax.set_xlabel(f"time within one cycle, seconds ({AXIS_NOTE})")
    ax.set_title("Sequential training pipeline (update order)")
    if group:
        ax.set_xlim(0.0, 1.05 * start)
        ax.set_ylim(len(group) - 0.4, -0.6)
        ax.legend(handles=[Patch(color="tab:blue", label="generate (rollout)"),
                           Patch(color="tab:orange",
                                 label="optimize (gradient)")])
    fig.tight_layout()
    return fig


def fig_scaling_fit(rows: list[dict]):
    # cycle 0 is the warm-up the harness also excludes from its fit
    fig, ax = plt.subplots(figsize=(7, 4.5))
    points: list[tuple[int, float]] = []
    groups: dict[tuple, int] = {}
    for row in rows:
        match = _SCALING_RE.fullmatch(row["scenario"])
        if match is None or row["cycle"] == 0:
            continue
        key = (int(match.group(1)), row["cycle"])
        total = row["t_generate_ns"] + row["t_optimize_ns"]
        groups[key] = groups.get(key, 0) + total
    points = [(n, ns / 1e9) for (n, _), ns in sorted(groups.items())]
    if points:
        xs = np.array([p[0] for p in points], dtype=np.float64)
        ys = np.array([p[1] for p in points], dtype=np.float64)
        ax.scatter(xs, ys, zorder=3, label="measured cycles")
        if len(set(xs)) >= 2:
            slope, intercept = np.polyfit(xs, ys, 1)
            fitted = slope * xs + intercept
            ss_res = float(((ys - fitted) ** 2).sum())
            ss_tot = float(((ys - ys.mean()) ** 2).sum())
            r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
            grid = np.array([xs.min(), xs.max()])
            ax.plot(grid, slope * grid + intercept, color="tab:red",
                    label="least-squares fit")
            ax.annotate(f"$R^2$ = {r_squared:.4f}", xy=(0.05, 0.92),
                        xycoords="axes fraction")
        ax.legend()
    ax.set_xlabel(f"morphologies per cycle ({AXIS_NOTE})")
    ax.set_ylabel("total cycle time, seconds")
    ax.set_title("Training time against morphology count")
    fig.tight_layout()
    return fig


BUILDERS = {
    "learning_curves": fig_learning_curves,
    "time_breakdown": fig_time_breakdown,
    "pipeline_timeline": fig_pipeline_timeline,
    "scaling_fit": fig_scaling_fit,
}


def build_figure(kind: str, csv_path: str):
    return BUILDERS[kind](read_rows(csv_path))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render.py", description="render a benchmark chart from CSV")
    parser.add_argument("--kind", required=True, choices=sorted(BUILDERS))
    parser.add_argument("--in", dest="csv", required=True,
                        help="input bench CSV")
    parser.add_argument("--out", required=True, help="output PNG path")
    args = parser.parse_args(argv)
    try:
        fig = build_figure(args.kind, args.csv)
        fig.savefig(args.out, dpi=120)
        plt.close(fig)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

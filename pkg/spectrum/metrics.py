#!/usr/bin/env python3
"""
Run Metrics

Offline post-processing of a run: latency series, p90 per time bucket (per
node and aggregate), timeouts, the rejection-based downtime window and the
longest gap without decisions. CSV files are the contract; plots are
optional and need matplotlib.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from core.logger import get_logger

BUCKET_MS = 1_000.0
AGGREGATE = "all"


@dataclass
class RunMetrics:
    decided: int = 0
    timeouts: int = 0
    p90: float | None = None
    p90_by_node: dict = field(default_factory=dict)
    downtime: float = 0.0
    max_decide_gap: float = 0.0
    timeouts_by_node: dict = field(default_factory=dict)
    undecided_at_horizon: int = 0


def percentile(values, q=90):
    return float(np.percentile(values, q)) if len(values) else None


def p90_series(history, bucket=BUCKET_MS, node=None):
    """
    Returns:
        list: (bucket_start_ms, p90_ms) for every bucket holding decisions
    """
    buckets = defaultdict(list)
    for t, latency in history.latency_series(node):
        buckets[int(t // bucket) * bucket].append(latency)
    return [(start, percentile(buckets[start])) for start in sorted(buckets)]


def window_p90(history, start, end, node=None):
    """p90 of latencies decided in [start, end), None without samples."""
    values = [lat for t, lat in history.latency_series(node) if start <= t < end]
    return percentile(values)


def timeouts_between(history, start, end, node=None):
    return sum(1 for r in history if node is None or r.node == node
               for t in r.timeouts if start <= t < end)


def downtime_window(trace, end=None):
    """
    Longest total time any node spent rejecting client commands.

    Gates are closed and opened by the stop-and-restart baseline; a gate that
    never reopens counts until `end`.
    """
    closed_at = {}
    totals = defaultdict(float)
    last = 0.0
    for event in trace.of_kind("gate-close", "gate-open"):
        last = max(last, event.t)
        if event.kind == "gate-close":
            closed_at.setdefault(event.node, event.t)
        elif event.node in closed_at:
            totals[event.node] += event.t - closed_at.pop(event.node)
    end = last if end is None else end
    for node, t in closed_at.items():
        totals[node] += max(0.0, end - t)
    return max(totals.values(), default=0.0)


def decide_gap(trace, start, end, nodes=None):
    """Longest interval inside [start, end] with no client decision at some node."""
    times = defaultdict(list)
    for event in trace.of_kind("decide"):
        if start <= event.t <= end:
            times[event.node].append(event.t)
    nodes = sorted(times) if nodes is None else nodes
    worst = 0.0
    for node in nodes:
        points = [start] + times.get(node, []) + [end]
        worst = max(worst, float(np.max(np.diff(points))) if len(points) > 1 else 0.0)
    return worst


def summarize(history, trace, duration, correct_nodes=None):
    nodes = sorted({r.node for r in history})
    latencies = [lat for _, lat in history.latency_series()]
    return RunMetrics(
        decided=history.decided_count(),
        timeouts=history.timeout_count(),
        p90=percentile(latencies),
        p90_by_node={n: percentile([lat for _, lat in history.latency_series(n)]) for n in nodes},
        downtime=downtime_window(trace, duration),
        max_decide_gap=decide_gap(trace, 0.0, duration, correct_nodes) if latencies else 0.0,
        timeouts_by_node={n: timeouts_between(history, 0.0, float("inf"), n) for n in nodes},
        undecided_at_horizon=len(history.at_horizon()),
    )


MARKER_KINDS = ("change-era", "crash", "oracle-trigger", "gate-close", "gate-open")


def emit_metrics(history, trace, directory, plot=False, bucket=BUCKET_MS):
    """
    Write latency.csv, p90.csv, undecided.csv and events.csv into directory,
    and latency.png when plot is set.

    Returns:
        list: Paths written
    """
    logger = get_logger()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []

    path = directory / "latency.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t_ms", "node", "cmd_id", "latency_ms"])
        for r in sorted((r for r in history if r.decided), key=lambda r: r.decided_at):
            writer.writerow([f"{r.decided_at:.3f}", r.node, r.cmd_id, f"{r.latency:.3f}"])
    written.append(path)

    path = directory / "p90.csv"
    nodes = sorted({r.node for r in history})
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["bucket_ms", "node", "p90_ms"])
        for node in nodes + [None]:
            for start, value in p90_series(history, bucket, node):
                writer.writerow([f"{start:.0f}", AGGREGATE if node is None else node, f"{value:.3f}"])
    written.append(path)

    path = directory / "undecided.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["cmd_id", "node", "first_submit_ms", "timeouts", "outcome"])
        for r in sorted((r for r in history if not r.decided), key=lambda r: r.first_submit):
            writer.writerow([r.cmd_id, r.node, f"{r.first_submit:.3f}", len(r.timeouts), r.outcome])
    written.append(path)

    path = directory / "events.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t_ms", "node", "kind", "detail"])
        for event in trace.of_kind(*MARKER_KINDS):
            detail = event.get("target") or event.get("era") or ""
            writer.writerow([f"{event.t:.3f}", "" if event.node is None else event.node,
                             event.kind, detail])
    written.append(path)

    if plot:
        plotted = plot_latency(history, trace, directory / "latency.png", bucket)
        if plotted is not None:
            written.append(plotted)
    logger.debug(f"Wrote {len(written)} metric files to {directory}")
    return written


def plot_latency(history, trace, path, bucket=BUCKET_MS):
    """Per-node p90 over time with switch and crash markers; None without matplotlib."""
    logger = get_logger()
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        logger.warning("matplotlib is not installed, skipping plots")
        return None

    fig, ax = plt.subplots(figsize=(10, 4))
    for node in sorted({r.node for r in history}):
        series = p90_series(history, bucket, node)
        if series:
            xs, ys = zip(*series)
            ax.plot([x / 1000 for x in xs], ys, label=f"node {node}")
    for event in trace.of_kind("change-era", "crash"):
        if event.kind == "change-era" and event.node != 0:
            continue
        style = "--" if event.kind == "change-era" else ":"
        ax.axvline(event.t / 1000, color="grey", linestyle=style, linewidth=0.8)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("p90 latency (ms)")
    ax.legend(loc="upper right", fontsize="small")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)

"""Matplotlib figures rendered next to the delimited reports."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_CATS = ("init", "interrupt", "power", "polling", "other")


def render_run_figures(report, outdir: str) -> list:
    """Per-run commit category breakdown; returns written paths."""
    os.makedirs(outdir, exist_ok=True)
    paths = []
    counts = [report.values.get(f"commit_cat_{c}", 0) for c in _CATS]
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(_CATS, counts, color="#4878a8")
    ax.set_ylabel("commits")
    ax.set_title(f"commit breakdown: {report.label()}")
    fig.tight_layout()
    path = os.path.join(outdir, "commit_categories.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)
    return paths


def render_compare_figures(reports, outdir: str) -> list:
    """Grouped bars for round trips, recording delay, and traffic."""
    os.makedirs(outdir, exist_ok=True)
    labels = [r.label() for r in reports]
    paths = []

    def bar(key, fname, title, scale=1.0, ylabel=None):
        values = [r.values.get(key, 0) * scale for r in reports]
        fig, ax = plt.subplots(figsize=(max(5, 1.4 * len(labels)), 3.2))
        ax.bar(range(len(values)), values, color="#4878a8")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
        ax.set_ylabel(ylabel or key)
        ax.set_title(title)
        fig.tight_layout()
        path = os.path.join(outdir, fname)
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)

    bar("round_trips", "round_trips.png", "network round trips")
    bar("sim_time_us", "recording_delay.png", "simulated recording delay", 1e-6, "seconds")
    bar("bytes_to_device", "bytes_to_device.png", "traffic to device", 1e-3, "KiB")
    return paths

"""Matplotlib rendering for the report-emitting CLI paths.

Every report subcommand can drop a PNG next to its delimited output;
these helpers keep the styling in one place.  The Agg backend is forced
so rendering works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def transfer_figure(report, path) -> None:
    """Bar chart of per-victim success rates for one attack run."""
    victims = [r.victim_id for r in report.results]
    rates = [r.success_rate for r in report.results]
    colors = ["tab:orange" if r.white_box else "tab:blue" for r in report.results]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(victims)), 3.2))
    ax.bar(victims, rates, color=colors)
    ax.set_ylim(0, 1)
    ax.set_ylabel("attack success rate")
    ax.set_title(f"substitute: {report.substitute_id} (n={report.n_images})")
    for i, rate in enumerate(rates):
        ax.text(i, rate + 0.02, f"{rate:.2f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sweep_figure(points, path) -> None:
    """Per-victim and mean success rates across a parameter sweep."""
    labels = [pt.label for pt in points]
    victim_ids = [r.victim_id for r in points[0].report.results]
    xs = np.arange(len(points))
    fig, ax = plt.subplots(figsize=(5, 3.4))
    for vid in victim_ids:
        ax.plot(xs, [pt.report.rate(vid) for pt in points], marker="o", label=vid)
    ax.plot(
        xs,
        [pt.report.mean_rate for pt in points],
        marker="s",
        linestyle="--",
        color="black",
        label="mean",
    )
    ax.set_xticks(xs, labels)
    ax.set_xlabel(points[0].param)
    ax.set_ylabel("attack success rate")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def saliency_figure(panels: dict[str, np.ndarray], path) -> None:
    """Grid of channel-averaged saliency heat maps, one panel per tag."""
    n = len(panels)
    fig, axes = plt.subplots(1, n, figsize=(2.6 * n, 2.8), squeeze=False)
    for ax, (tag, values) in zip(axes[0], panels.items()):
        plane = values.mean(axis=2) if values.ndim == 3 else values
        ax.imshow(plane, cmap="viridis")
        ax.set_title(tag, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def loss_trace_figure(traces: np.ndarray, path) -> None:
    """Mean (and spread) of per-iteration substitute loss while crafting."""
    traces = np.asarray(traces)
    xs = np.arange(1, traces.shape[1] + 1)
    mean = traces.mean(axis=0)
    lo, hi = traces.min(axis=0), traces.max(axis=0)
    fig, ax = plt.subplots(figsize=(4.5, 3))
    ax.fill_between(xs, lo, hi, alpha=0.25)
    ax.plot(xs, mean, marker="o")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

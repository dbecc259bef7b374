"""Figures for the eval and audit subcommands."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def set_style():
    plt.rcParams.update({
        "figure.figsize": (6, 4),
        "figure.dpi": 100,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "font.size": 10,
    })


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_errors(labels, errors, path, alpha=None) -> Path:
    """Box plot of relative errors per norm; ``errors`` is a list of arrays."""
    set_style()
    fig, ax = plt.subplots()
    ax.boxplot([np.asarray(e) for e in errors], tick_labels=list(labels))
    if alpha is not None:
        ax.axhline(alpha, color="tab:red", ls="--", lw=1, label=f"alpha={alpha:g}")
        ax.legend()
    ax.set_ylabel("relative error |est/exact - 1|")
    ax.set_xlabel("norm")
    return _save(fig, path)


def plot_histograms(audit, path) -> Path:
    set_style()
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(6, 5))
    centers = 0.5 * (audit.edges[1:] + audit.edges[:-1])
    width = audit.edges[1] - audit.edges[0]
    ax1.bar(centers, audit.counts_a, width=width, alpha=0.6, label="run A")
    ax1.bar(centers, audit.counts_b, width=width, alpha=0.6, label="run B (neighbour)")
    ax1.set_ylabel("count")
    ax1.legend()
    ax2.plot(centers[audit.checked], audit.ratios[audit.checked], "o", ms=3, label="ratio")
    ax2.plot(centers[audit.checked], audit.bounds[audit.checked], "-", color="tab:red", label="bound")
    ax2.set_ylabel("histogram ratio")
    ax2.set_xlabel("released value")
    ax2.legend()
    return _save(fig, path)


def plot_sensitivity(deltas, path, bound=2.0) -> Path:
    set_style()
    fig, ax = plt.subplots()
    deltas = np.asarray(deltas)
    ax.hist(deltas, bins=np.arange(0, max(deltas.max(initial=0), bound) + 2) - 0.5)
    ax.axvline(bound, color="tab:red", ls="--", label=f"bound {bound:g}")
    ax.set_xlabel("max |estimate change| over coordinates")
    ax.set_ylabel("neighbouring pairs")
    ax.legend()
    return _save(fig, path)

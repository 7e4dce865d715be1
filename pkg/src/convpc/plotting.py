"""Figures written next to the tab-separated reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .model import TERMS  # noqa: E402


def plot_loss_log(rows: list[dict[str, float]], path, weights: dict[str, float] | None = None) -> Path:
    """Per-term training curves (weighted when ``weights`` is given) plus validation Chamfer."""
    path = Path(path)
    it = np.array([r["iteration"] for r in rows])
    fig, (ax, av) = plt.subplots(1, 2, figsize=(11, 4))
    for term in TERMS + ("total",):
        y = np.array([r[term] for r in rows]) * (weights or {}).get(term, 1.0)
        if np.any(y > 0):
            ax.plot(it, np.where(y > 0, y, np.nan), label=term, lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_title("weighted loss terms" if weights else "loss terms")
    ax.legend(fontsize=7)
    val = np.array([r["val_chamfer"] for r in rows])
    keep = np.isfinite(val)
    av.plot(it[keep], val[keep], marker="o")
    av.set_xlabel("iteration")
    av.set_title("validation Chamfer x1000")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_eval(report, path) -> Path:
    """Bar chart of per-shape Chamfer with the mean as a horizontal line."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(report.names) + 2), 3.5))
    x = np.arange(len(report.names))
    ax.bar(x, report.values)
    ax.axhline(report.mean, color="k", ls="--", lw=1, label=f"mean {report.mean:.3f}")
    ax.set_xticks(x)
    ax.set_xticklabels(report.names, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("Chamfer x1000")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path

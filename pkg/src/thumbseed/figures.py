"""Matplotlib renders written next to the delimited reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_METRIC_LABELS = [
    ("co", "center offset [px]"),
    ("rf", "rescaling factor"),
    ("iou", "IoU"),
    ("arm", "aspect mismatch"),
    ("hr", "hit ratio"),
    ("br", "background ratio"),
]


def render_loss_curve(history, path, window: int = 50, batch_size: int = 256) -> None:
    """Raw and windowed total loss plus the per-sample cls term, on a log axis."""
    steps = np.array([s for s, _, _, _ in history])
    total = np.array([t for _, t, _, _ in history])
    cls_term = np.array([c / batch_size for _, _, c, _ in history])
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, total, lw=0.6, alpha=0.35, color="tab:blue", label="total")
    if len(total) >= window:
        kernel = np.ones(window) / window
        smooth = np.convolve(total, kernel, mode="valid")
        ax.plot(steps[window - 1:], smooth, lw=1.5, color="tab:blue",
                label=f"total (window {window})")
    ax.plot(steps, cls_term, lw=0.6, alpha=0.5, color="tab:orange", label="cls / batch")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)


def render_metric_histograms(rows, path) -> None:
    """2×3 panel of per-sample metric distributions."""
    fig, axes = plt.subplots(2, 3, figsize=(10, 6))
    for ax, (key, label) in zip(axes.ravel(), _METRIC_LABELS):
        values = [getattr(r.metrics, key) for r in rows]
        ax.hist(values, bins=30, color="tab:blue", alpha=0.8)
        ax.axvline(float(np.mean(values)), color="tab:red", lw=1.2)
        ax.set_title(label, fontsize=9)
        ax.tick_params(labelsize=7)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)

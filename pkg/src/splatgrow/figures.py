"""Matplotlib figure rendering for report outputs. Headless (Agg) only."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import FormatError  # noqa: E402


def loss_curve_figure(csv_path, out_path) -> None:
    """Plot the streamed loss CSV (iteration, l1, ssim, feat, total, lr)."""
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise FormatError(f"no loss rows in {csv_path}")
    it = np.array([int(r["iteration"]) for r in rows])
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for key, style in (("total", "-"), ("l1", "--"), ("ssim", ":"), ("feat", "-.")):
        ax.plot(it, [float(r[key]) for r in rows], style, label=key)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(loc="upper right")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def iou_bar_figure(labels, values, out_path, title="per-category IoU") -> None:
    labels = list(labels)
    values = [float(v) for v in values]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(labels) + 2), 4.0))
    ax.bar(range(len(labels)), values, color="#4878a8")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("IoU")
    ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def opacity_figure(acc, out_path) -> None:
    """Accumulated-opacity heatmap for a rendered view."""
    acc = np.asarray(acc, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(acc, vmin=0.0, vmax=1.0, cmap="viridis")
    fig.colorbar(im, ax=ax, label="accumulated opacity")
    ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)

"""Matplotlib figure rendering for run telemetry and samples.

These render alongside the delimited outputs: loss curves next to
``losses.csv``, a class-distribution bar chart for inspected datasets,
and a contact sheet of emitted PGM samples.
"""

from __future__ import annotations

import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .data import ClassStats
from .errors import DataError
from .models import EMOTION_NAMES
from .pgm import read_pgm


def read_loss_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Epochs, generator losses and discriminator losses from a run log."""
    epochs, g_losses, d_losses = [], [], []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("epoch"):
                continue
            fields = line.split(",")
            epochs.append(int(fields[0]))
            g_losses.append(float(fields[1]))
            d_losses.append(float(fields[2]))
    if not epochs:
        raise DataError(f"{path}: no loss records")
    return np.array(epochs), np.array(g_losses), np.array(d_losses)


def save_loss_curves(csv_path, out_png) -> Path:
    epochs, g_losses, d_losses = read_loss_csv(csv_path)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, g_losses, label="generator", color="tab:blue")
    ax.plot(epochs, d_losses, label="discriminator", color="tab:red")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_title("Adversarial training losses")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    out_png = Path(out_png)
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def save_class_distribution(stats: ClassStats, out_png) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(stats.counts)), stats.counts, color="tab:gray")
    ax.set_xticks(range(len(stats.counts)))
    ax.set_xticklabels(EMOTION_NAMES[: len(stats.counts)], rotation=30, ha="right")
    ax.set_ylabel("images")
    ax.set_title(f"Class distribution (N={stats.total}, imbalance {stats.imbalance_ratio:.2f})")
    for i, count in enumerate(stats.counts):
        ax.text(i, count, str(count), ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    out_png = Path(out_png)
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def save_sample_sheet(samples_dir, out_png, epoch: int | None = None) -> Path:
    """Tile one epoch's emitted PGM samples into a class-by-index grid."""
    samples_dir = Path(samples_dir)
    pattern = re.compile(r"epoch(\d+)_class(\d+)_(\d+)\.pgm$")
    found: dict[int, dict[tuple[int, int], Path]] = {}
    for path in samples_dir.glob("epoch*_class*_*.pgm"):
        match = pattern.search(path.name)
        if match:
            e, c, i = map(int, match.groups())
            found.setdefault(e, {})[(c, i)] = path
    if not found:
        raise DataError(f"{samples_dir}: no epoch sample files")
    epoch = max(found) if epoch is None else epoch
    if epoch not in found:
        raise DataError(f"{samples_dir}: no samples for epoch {epoch}")
    cells = found[epoch]
    n_classes = max(c for c, _ in cells) + 1
    n_idx = max(i for _, i in cells) + 1
    fig, axes = plt.subplots(n_classes, n_idx, figsize=(1.2 * n_idx, 1.2 * n_classes), squeeze=False)
    for c in range(n_classes):
        for i in range(n_idx):
            ax = axes[c][i]
            ax.axis("off")
            path = cells.get((c, i))
            if path is not None:
                ax.imshow(read_pgm(path), cmap="gray", vmin=0, vmax=255)
            if i == 0:
                name = EMOTION_NAMES[c] if c < len(EMOTION_NAMES) else str(c)
                ax.set_ylabel(name)
                ax.axis("on")
                ax.set_xticks([])
                ax.set_yticks([])
    fig.suptitle(f"Epoch {epoch} samples")
    fig.tight_layout()
    out_png = Path(out_png)
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png

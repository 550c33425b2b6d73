"""Figures written next to the CSV/JSON reports (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def ablation_bars(rows: list[str], rank1: np.ndarray, mAP: np.ndarray, path, title: str = "") -> Path:
    """Grouped Rank-1 / mAP bars, one group per ablation row."""
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(rows)), 3.2))
    ax.bar(x - 0.2, 100 * np.asarray(rank1), width=0.4, label="Rank-1")
    ax.bar(x + 0.2, 100 * np.asarray(mAP), width=0.4, label="mAP")
    ax.set_xticks(x, rows, rotation=30, ha="right")
    ax.set_ylabel("%")
    ax.set_ylim(0, 100)
    ax.legend(loc="lower right")
    ax.set_title(title)
    return _save(fig, path)


def profile_plot(profiles: np.ndarray, targets: np.ndarray, path, holistic: np.ndarray | None = None) -> Path:
    """One panel per part: measured height profile against its target."""
    K, H = profiles.shape
    extra = holistic is not None
    fig, axes = plt.subplots(1, K + extra, figsize=(1.6 * (K + extra), 2.8), sharey=True)
    axes = np.atleast_1d(axes)
    rows = np.arange(H)
    for k in range(K):
        axes[k].barh(rows, profiles[k], color="tab:blue", alpha=0.7)
        axes[k].plot(targets[k], rows, color="tab:red", lw=1.2)
        axes[k].set_title(f"part {k}")
    if extra:
        axes[K].barh(rows, holistic, color="tab:green", alpha=0.7)
        axes[K].plot(np.full(H, 1.0 / H), rows, color="tab:red", lw=1.2)
        axes[K].set_title("holistic")
    axes[0].invert_yaxis()
    axes[0].set_ylabel("row")
    return _save(fig, path)


def attention_heatmap(weights: np.ndarray, path, title: str = "") -> Path:
    """(K, C) matrix of batch-mean attention weights."""
    fig, ax = plt.subplots(figsize=(7, 0.4 * len(weights) + 1.2))
    im = ax.imshow(weights, aspect="auto", cmap="viridis")
    ax.set_xlabel("channel")
    ax.set_ylabel("part")
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    return _save(fig, path)

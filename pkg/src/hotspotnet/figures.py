"""Matplotlib renderings of the text/CSV reports: every report-producing
command drops a PNG next to its delimited output so results are inspectable
without external plotting."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402


def save_epoch_curve(rows: list[tuple[int, float]], path: str) -> str:
    fig, ax = plt.subplots(figsize=(6, 4))
    if rows:
        epochs, maps = zip(*rows)
        ax.plot(epochs, maps, marker="o", lw=1.5, color="tab:red")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mAP@0.5")
    ax.set_ylim(0.0, 1.02)
    ax.grid(alpha=0.3)
    ax.set_title("validation mAP over training")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_pr_curve(pr_points: list[tuple[float, float]], ap: float, path: str) -> str:
    fig, ax = plt.subplots(figsize=(5, 5))
    if pr_points:
        recall, precision = zip(*pr_points)
        ax.step([0.0, *recall], [precision[0], *precision], where="post",
                color="tab:blue")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.set_title(f"precision-recall (AP {ap:.3f})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_stats_heatmaps(center_hist: np.ndarray, size_hist: np.ndarray,
                        path: str) -> str:
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.5))
    for ax, hist, title, xl, yl in (
            (axes[0], center_hist, "box centers", "cx", "cy"),
            (axes[1], size_hist, "box sizes", "w", "h")):
        im = ax.imshow(hist, origin="lower", extent=(0, 1, 0, 1),
                       cmap="inferno", aspect="auto")
        ax.set_title(title)
        ax.set_xlabel(xl)
        ax.set_ylabel(yl)
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_robustness_chart(names: list[str], maps: list[float],
                          deltas: list[float], path: str) -> str:
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    xs = np.arange(len(names))
    ax1.bar(xs, maps, color="tab:orange")
    ax1.set_ylabel("mAP")
    ax1.set_ylim(0, 1.02)
    ax1.grid(axis="y", alpha=0.3)
    ax2.bar(xs, deltas, color="tab:blue")
    ax2.set_ylabel("mean conf delta")
    ax2.axhline(0.0, color="k", lw=0.8)
    ax2.grid(axis="y", alpha=0.3)
    ax2.set_xticks(xs)
    ax2.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path

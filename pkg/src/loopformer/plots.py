"""Figure rendering for the CLI reports.

Each writer takes already-computed rows and saves one PNG next to the
corresponding CSV.  Matplotlib runs on the Agg backend so the CLI works
headless.
"""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .experiments import SweepRow
from .scheduler import StepLog, StrategyRow
from .training import EpochMetrics

_DPI = 150


def save_sweep_curve(path, rows: Sequence[SweepRow]) -> None:
    """Accuracy vs compute ratio; the full-depth reference is the rightmost point."""
    swept = sorted((r for r in rows if r.delta is not None), key=lambda r: r.compute_ratio)
    ref = [r for r in rows if r.delta is None]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(
        [r.compute_ratio for r in swept],
        [r.accuracy for r in swept],
        marker="o",
        label="early exit (varying threshold)",
    )
    for r in swept:
        ax.annotate(f"{r.delta:g}", (r.compute_ratio, r.accuracy), fontsize=7, xytext=(3, 3), textcoords="offset points")
    if ref:
        ax.plot(ref[0].compute_ratio, ref[0].accuracy, marker="*", markersize=14, color="tab:red", linestyle="none", label="full depth")
    ax.set_xlabel("compute ratio")
    ax.set_ylabel("accuracy")
    ax.set_title("Accuracy vs compute tradeoff")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_strategy_report(path, rows: Sequence[StrategyRow]) -> None:
    """Throughput and simulated-time bars per execution strategy."""
    names = [r.strategy for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.bar(names, [r.throughput for r in rows], color="tab:blue")
    ax1.set_ylabel("throughput (samples / time unit)")
    ax1.set_title("Simulated throughput")
    ax2.bar(names, [r.sim_time for r in rows], color="tab:orange")
    ax2.set_ylabel("simulated total time")
    ax2.set_title("Simulated latency")
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_occupancy_timeline(path, logs: Sequence[StepLog]) -> None:
    """Active-slot count per encoder step for the batched strategies."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for log in logs:
        if not log.steps:
            continue
        ax.step(
            [rec.step for rec in log.steps],
            [rec.active for rec in log.steps],
            where="post",
            label=f"{log.strategy} (N={log.n_slots})",
        )
    ax.set_xlabel("encoder step")
    ax.set_ylabel("active slots")
    ax.set_title("Batch occupancy over time")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_attention_heatmap(path, matrix: np.ndarray, tokens: Sequence[str]) -> None:
    """Cumulative start-position attention per layer as a heatmap."""
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(tokens)), 4))
    im = ax.imshow(matrix, aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(tokens)))
    ax.set_xticklabels(tokens, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(matrix.shape[0]))
    ax.set_yticklabels([str(i + 1) for i in range(matrix.shape[0])], fontsize=8)
    ax.set_ylabel("layer")
    ax.set_title("Cumulative attention from sequence start")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_training_curves(path, metrics: Sequence[EpochMetrics]) -> None:
    epochs = [m.epoch for m in metrics]
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(epochs, [m.train_loss for m in metrics], marker="o", color="tab:blue", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(epochs, [m.val_accuracy for m in metrics], marker="s", color="tab:green", label="val accuracy")
    ax2.set_ylabel("validation accuracy", color="tab:green")
    ax2.set_ylim(0, 1.05)
    ax1.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)

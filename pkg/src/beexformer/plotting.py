"""Figures written next to the CSV/JSON report artifacts."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .binarize import (binarize_grad_values, binarize_values, clip_grad_values, clip_values,  # noqa: E402
                       sign_values)

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 10,
    "legend.frameon": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_exit_histogram(report, cfg, path) -> Path:
    """Exit counts per block with the parameters they left uncomputed."""
    saved = report.params_saved_by_exit(cfg)
    exits = sorted(report.histogram)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(exits, [report.histogram[c] for c in exits], color="#4C72B0", label="samples")
        ax.set_xlabel("exit block")
        ax.set_ylabel("samples")
        ax.set_xticks(exits)
        twin = ax.twinx()
        twin.plot(exits, [saved[c] / 1e6 for c in exits], "o-", color="#C44E52", label="params saved")
        twin.set_ylabel("parameters saved (M)")
        twin.grid(False)
        ax.set_title(f"{report.dataset}: mean exit {report.mean_exit:.2f}, "
                     f"FLOPs -{100 * report.reduction:.1f}%")
        return _save(fig, path)


def plot_sweep(reports: Sequence, path) -> Path:
    deltas = [r.delta for r in reports]
    with plt.rc_context(STYLE):
        fig, (left, right) = plt.subplots(1, 2, figsize=(9, 3.6))
        left.semilogx(deltas, [r.metric for r in reports], "o-")
        left.set_xlabel("threshold delta")
        left.set_ylabel(reports[0].metric_name)
        right.semilogx(deltas, [100 * r.reduction for r in reports], "o-", label="nominal")
        right.semilogx(deltas, [100 * r.reduction_adjusted for r in reports], "s--", label="binary-adjusted")
        right.set_xlabel("threshold delta")
        right.set_ylabel("FLOPs reduction (%)")
        right.legend()
        return _save(fig, path)


def plot_binarizers(path, lo: float = -2.0, hi: float = 2.0) -> Path:
    """sign, clip and the polynomial approximation, with their derivatives."""
    r = np.linspace(lo, hi, 801)
    with plt.rc_context(STYLE):
        fig, (left, right) = plt.subplots(1, 2, figsize=(9, 3.6))
        left.plot(r, sign_values(r), label="sign(r)", color="k", lw=1)
        left.plot(r, clip_values(r), label="clip(-1, r, 1)", ls="--")
        left.plot(r, binarize_values(r), label="b(r)")
        left.fill_between(r, clip_values(r), binarize_values(r), alpha=0.15)
        left.legend()
        left.set_xlabel("r")
        right.plot(r, clip_grad_values(r), label="clip'", ls="--")
        right.plot(r, binarize_grad_values(r), label="b'(r)")
        right.fill_between(r, clip_grad_values(r), binarize_grad_values(r), alpha=0.15)
        right.legend()
        right.set_xlabel("r")
        return _save(fig, path)


def plot_training(reports: Sequence, path) -> Path:
    epochs = [r.epoch for r in reports]
    losses = np.array([r.exit_losses for r in reports])
    with plt.rc_context(STYLE):
        fig, (left, right) = plt.subplots(1, 2, figsize=(9, 3.6))
        for i in range(losses.shape[1]):
            left.plot(epochs, losses[:, i], label=f"exit {i + 1}", lw=1)
        left.plot(epochs, [r.train_loss for r in reports], "k-", lw=2, label="mean (soft routing)")
        left.set_xlabel("epoch")
        left.set_ylabel("cross-entropy")
        left.legend()
        right.plot(epochs, [r.dev_metric for r in reports], "o-")
        right.set_xlabel("epoch")
        right.set_ylabel("dev metric")
        return _save(fig, path)


def plot_ablation(rows: Sequence[dict], path) -> Path:
    names = [row["variant"] for row in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(names, [row["metric"] for row in rows], color="#55A868")
        ax.set_ylabel(rows[0].get("metric_name", "metric"))
        ax.set_ylim(0, 1.05)
        for i, row in enumerate(rows):
            ax.annotate(f"{row['metric']:.3f}", (i, row["metric"]), ha="center", va="bottom", fontsize=8)
        ax.tick_params(axis="x", rotation=20)
        return _save(fig, path)

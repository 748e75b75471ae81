"""Headless rendering of report figures to PNG files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .epidemic import infected_fraction


def plot_epidemic_curves(curves: dict, path) -> str:
    """One cumulative-infected line per labeled (days, 4) curve."""
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for label in sorted(curves):
        infected = infected_fraction(np.asarray(curves[label]))
        days = np.arange(1, infected.size + 1)
        ax.plot(days, infected, label=label, linewidth=1.8)
    ax.set_xlabel("day")
    ax.set_ylabel("cumulative infected fraction (I + R)")
    ax.set_ylim(bottom=0.0)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def plot_compartments(curve, path, title: str | None = None) -> str:
    """All four compartment fractions of a single curve over time."""
    curve = np.asarray(curve)
    days = np.arange(1, curve.shape[0] + 1)
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for column, label in enumerate(("S", "E", "I", "R")):
        ax.plot(days, curve[:, column], label=label, linewidth=1.8)
    ax.set_xlabel("day")
    ax.set_ylabel("fraction of nodes")
    ax.set_ylim(0.0, 1.0)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def plot_training_history(history: dict, path) -> str:
    """Training and validation loss per epoch for one or more runs.

    `history` maps run labels to {"train_loss": [...], "val_loss": [...]}.
    """
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for label in sorted(history):
        losses = history[label]
        epochs = np.arange(1, len(losses["train_loss"]) + 1)
        ax.plot(epochs, losses["train_loss"], label=f"{label} train", linewidth=1.4)
        ax.plot(
            epochs, losses["val_loss"], label=f"{label} validation",
            linewidth=1.4, linestyle="--",
        )
    ax.set_xlabel("epoch")
    ax.set_ylabel("binary cross-entropy")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def plot_variant_means(summaries: dict, path) -> str:
    """Mean test AUC with a std whisker per model variant.

    `summaries` maps variant names to {"mean_auc": float, "std_auc": float}.
    """
    labels = sorted(summaries)
    means = [summaries[v]["mean_auc"] for v in labels]
    stds = [summaries[v]["std_auc"] for v in labels]
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    positions = np.arange(len(labels))
    ax.bar(positions, means, yerr=stds, capsize=4, color="#4878b0")
    ax.set_xticks(positions)
    ax.set_xticklabels(labels, rotation=15)
    ax.set_ylabel("test ROC AUC")
    ax.set_ylim(0.0, 1.05)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def ensure_parent(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path

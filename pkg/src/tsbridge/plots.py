"""Figure rendering for run reports and analysis outputs.

Every figure lands next to its delimited (CSV/JSON) counterpart so the
numbers stay scriptable while the pictures stay glanceable.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def weight_curve_figure(rows, path: str | Path) -> None:
    """Dual-weight response to the per-sample prediction loss."""
    losses = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.plot(losses, [r[1] for r in rows], label=r"$\omega_O$ (prediction)", color="tab:blue")
    ax.plot(losses, [r[2] for r in rows], label=r"$\omega_I$ (mutual information)", color="tab:red")
    ax.set_xlabel("per-sample prediction loss")
    ax.set_ylabel("weight")
    ax.set_ylim(0.0, 1.0)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def training_curves_figure(report_epochs, path: str | Path) -> None:
    """Per-epoch train/validation loss and the MI estimate."""
    epochs = range(1, len(report_epochs) + 1)
    fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.2))
    axes[0].plot(epochs, [e.train_loss for e in report_epochs], label="train loss")
    val = [e.val_loss for e in report_epochs]
    if any(v == v for v in val):  # skip all-NaN series
        axes[0].plot(epochs, val, label="validation loss")
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("loss")
    axes[0].legend(frameon=False)
    mi = [e.mi_estimate for e in report_epochs]
    if any(v == v for v in mi):
        axes[1].plot(epochs, mi, color="tab:green")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("MI lower bound")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def forecast_showcase_figure(history, target, prediction, path: str | Path) -> None:
    """One window: input history, ground truth, and the model forecast."""
    L = len(history)
    fig, ax = plt.subplots(figsize=(6.5, 3.2))
    ax.plot(range(L), history, color="tab:gray", label="input")
    ax.plot(range(L, L + len(target)), target, color="tab:blue", label="ground truth")
    ax.plot(range(L, L + len(prediction)), prediction, color="tab:red", label="prediction")
    ax.set_xlabel("time step")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

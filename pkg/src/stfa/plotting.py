"""Figures written next to the JSON/CSV outputs. Uses the Agg backend only."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (4.0, 3.2),
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def roc_figure(points, area: float | None, path: str | Path) -> Path:
    fpr = [p[0] for p in points]
    tpr = [p[1] for p in points]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--")
        label = "ROC" if area is None else f"ROC (AUC = {area:.4f})"
        ax.plot(fpr, tpr, color="C0", lw=1.5, label=label)
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.legend(loc="lower right", frameon=False)
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def loss_figure(log: list[dict], path: str | Path, best_epoch: int | None = None) -> Path:
    epochs = [r["epoch"] for r in log]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(epochs, [r["train_loss"] for r in log], color="C0", lw=1.2, label="train")
        ax.plot(epochs, [r["val_loss"] for r in log], color="C1", lw=1.2, label="validation")
        if best_epoch:
            ax.axvline(best_epoch, color="0.6", lw=0.8, ls=":")
        ax.set_xlabel("epoch")
        ax.set_ylabel("MSE")
        ax.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)
    return Path(path)

"""Figure rendering for CLI report outputs.

Each renderer takes rows already written to a delimited file and drops a
PNG next to it; plotting never touches training state.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def render_training_curve(history: list[dict], path: str | os.PathLike) -> None:
    """Loss per epoch, with validation NDCG on a twin axis when present."""
    epochs = [row["epoch"] for row in history]
    losses = [row["loss"] for row in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, losses, color="tab:blue", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("BPR loss")
    val_pts = [(r["epoch"], r["val_ndcg"]) for r in history if r["val_ndcg"] is not None]
    if val_pts:
        ax2 = ax.twinx()
        ax2.plot(*zip(*val_pts), color="tab:orange", label="val NDCG")
        ax2.set_ylabel("validation NDCG")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_alpha_sweep(
    rows: list[dict], path: str | os.PathLike, k: int = 20
) -> None:
    """NDCG against alpha on a log axis; failed runs are skipped."""
    ok = [r for r in rows if r.get("ndcg") is not None]
    if not ok:
        return
    alphas = [r["alpha"] for r in ok]
    ndcgs = [r["ndcg"] for r in ok]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(alphas, ndcgs, marker="o", color="tab:blue")
    ax.set_xscale("log")
    ax.set_xlabel("alpha")
    ax.set_ylabel(f"NDCG@{k}")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

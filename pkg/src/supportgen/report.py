"""Figure and delimited-table rendering for training and evaluation runs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def write_tsv(rows: list[dict], path: str | Path) -> None:
    """Aligned tab-separated table; missing cells rendered empty."""
    path = Path(path)
    if not rows:
        path.write_text("")
        return
    columns = list(dict.fromkeys(k for row in rows for k in row))
    lines = ["\t".join(columns)]
    for row in rows:
        cells = []
        for c in columns:
            v = row.get(c)
            if v is None:
                cells.append("")
            elif isinstance(v, float):
                cells.append(f"{v:.4f}")
            else:
                cells.append(str(v))
        lines.append("\t".join(cells))
    path.write_text("\n".join(lines) + "\n")


def plot_loss_curve(history: list[dict], path: str | Path) -> None:
    steps = [h["step"] for h in history if "loss" in h]
    losses = [h["loss"] for h in history if "loss" in h]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, losses, lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("training loss")
    ax.set_title("Training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_fusion_weights(history: list[dict], path: str | Path) -> None:
    records = [h for h in history if "lambda" in h]
    if not records:
        return
    steps = [h["step"] for h in records]
    labels = ("context", "demo->ctx", "cog->ctx", "ctx->demo", "ctx->cog")
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, label in enumerate(labels):
        ax.plot(steps, [h["lambda"][i] for h in records], lw=1, label=label)
    ax.set_xlabel("step")
    ax.set_ylabel("fusion weight")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
    ax.set_title("Fusion mixture weights")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_top_n_accuracy(acc_top_n: dict[int, float], path: str | Path) -> None:
    ns = sorted(acc_top_n)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar([str(n) for n in ns], [acc_top_n[n] for n in ns], color="tab:blue")
    ax.set_xlabel("top-n")
    ax.set_ylabel("strategy accuracy (%)")
    ax.set_ylim(0, 100)
    ax.set_title("Top-n strategy accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_sweep(rows: list[dict], metrics: Sequence[str], path: str | Path) -> None:
    """One line per metric across the swept demonstration counts."""
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [row["top_s"] for row in rows]
    for m in metrics:
        if any(row.get(m) is not None for row in rows):
            ax.plot(xs, [row.get(m) for row in rows], marker="o", label=m)
    ax.set_xlabel("retrieved demonstrations (top-s)")
    ax.set_ylabel("score")
    ax.legend(fontsize=8)
    ax.set_title("Effect of demonstration count")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

"""Report figures rendered to files next to the delimited output."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import EvalReport


def save_confusion_figure(report: EvalReport, path) -> str:
    """Heatmap of the confusion matrix with per-cell counts."""
    counts = np.asarray(report.confusion)
    names = report.source_names
    fig, ax = plt.subplots(figsize=(1.2 + 0.7 * len(names), 1.0 + 0.7 * len(names)))
    im = ax.imshow(counts, cmap="Blues")
    ax.set_xticks(range(len(names)), names, rotation=45, ha="right")
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    threshold = counts.max() / 2 if counts.max() else 0.5
    for i in range(len(names)):
        for j in range(len(names)):
            ax.text(
                j,
                i,
                str(int(counts[i, j])),
                ha="center",
                va="center",
                color="white" if counts[i, j] > threshold else "black",
                fontsize=8,
            )
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_title(f"top-1 confusion (F1-macro {report.f1_macro:.3f})")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def save_sweep_figure(axis: str, rows, path) -> str:
    """F1-macro and R@k curves over the swept values."""
    values = [row.value for row in rows]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(values, [row.report.f1_macro for row in rows], "o-", label="F1-macro")
    for k, style in ((1, "s--"), (2, "^--"), (3, "v--")):
        ax.plot(values, [row.report.r_at[k] for row in rows], style, label=f"R@{k}", alpha=0.7)
    if axis == "K" and min(values) > 0 and max(values) / max(min(values), 1e-9) >= 100:
        ax.set_xscale("log")
    ax.set_xlabel(axis)
    ax.set_ylabel("rate")
    ax.set_ylim(0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)

"""Summary figures for evaluated runs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import COLUMN_LABELS, EvalSummary  # noqa: E402

LEXICAL = ("r1", "rl", "meteor")
JUDGED = ("comp", "read", "cp", "pp")


def _grouped_bars(ax, summary: EvalSummary, columns: tuple[str, ...], tasks: list[str]) -> None:
    width = 0.8 / max(len(tasks), 1)
    x = np.arange(len(columns))
    for i, task in enumerate(tasks):
        row = summary.aggregate[task]
        ax.bar(x + (i - (len(tasks) - 1) / 2) * width, [row[c] for c in columns], width, label=task)
    ax.set_xticks(x)
    ax.set_xticklabels([COLUMN_LABELS[c] for c in columns])


def plot_summary(summary: EvalSummary, path: str | Path, title: str | None = None) -> Path:
    """Two panels: lexical overlap (0-1) and judge scores (1-10), bars per task."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tasks = [t for t in summary.aggregate if t != "all"] or list(summary.aggregate)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4), gridspec_kw={"width_ratios": [3, 4]})
    _grouped_bars(ax1, summary, LEXICAL, tasks)
    ax1.set_ylim(0, 1)
    ax1.set_ylabel("F-score")
    ax1.set_title("Lexical overlap")
    _grouped_bars(ax2, summary, JUDGED, tasks)
    ax2.set_ylim(0, 10)
    ax2.set_ylabel("Judge score")
    ax2.set_title("Quality and personalization")
    if tasks:
        ax2.legend(fontsize="small", loc="upper right")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    # fixed metadata keeps the PNG byte-stable across runs
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path

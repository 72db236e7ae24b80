"""Figures written next to the delimited outputs of the CLI report paths."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .mining import MiningResult  # noqa: E402
from .synth import Comparison  # noqa: E402


def _nan(v):
    return float("nan") if v is None else float(v)


def plot_comparison(cmp: Comparison, path: str | Path) -> Path:
    """Selection accuracy per iteration, one line per criterion."""
    rows = cmp.rows()
    it = [r["iteration"] for r in rows]
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    for crit, style in (("full", "o-"), ("ablation", "s--")):
        if crit in cmp.criteria:
            ax.plot(it, [_nan(r[f"acc_{crit}"]) for r in rows], style, label=crit)
    ax.set_xlabel("iteration")
    ax.set_ylabel("selection accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.set_xticks(it)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_metrics(results: Sequence[MiningResult], pool_sizes: Sequence[int], path: str | Path) -> Path:
    """Selections and mean confidence per iteration, with the labeled pool size."""
    it = [r.iteration for r in results]
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(5.5, 5.0), sharex=True)
    top.bar(it, [len(r) for r in results], color="tab:blue", alpha=0.7, label="selected")
    top.plot(it, list(pool_sizes), "k.-", label="labeled pool")
    top.set_ylabel("samples")
    top.legend()
    bottom.plot(it, [_nan(r.mean_confidence) for r in results], "o-", color="tab:green")
    bottom.set_ylabel("mean confidence")
    bottom.set_xlabel("iteration")
    bottom.set_ylim(0.0, 1.05)
    if it:
        bottom.set_xticks(it)
    for ax in (top, bottom):
        ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path

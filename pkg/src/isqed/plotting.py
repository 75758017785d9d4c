"""Figure rendering for experiment reports (headless matplotlib)."""

from __future__ import annotations

import io
from pathlib import Path
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .io import atomic_write  # noqa: E402


def _save(fig, path) -> Path:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return atomic_write(path, buf.getvalue())


def line_plot(
    path,
    series: Mapping[str, tuple[Sequence[float], Sequence[float]]],
    xlabel: str,
    ylabel: str,
    title: str = "",
    hline: Optional[float] = None,
    logy: bool = False,
    steps: bool = False,
) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    for label, (x, y) in series.items():
        if steps:
            ax.step(x, y, where="post", label=label)
        else:
            ax.plot(x, y, marker="o", ms=3, label=label)
    if hline is not None:
        ax.axhline(hline, color="grey", ls="--", lw=1)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def bar_plot(path, categories: Sequence[str], groups: Mapping[str, Sequence[float]], ylabel: str, title: str = "") -> Path:
    """Grouped bars, one group per entry of ``groups``, each normalised to its own maximum."""
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    k = len(groups)
    width = 0.8 / max(k, 1)
    for i, (label, vals) in enumerate(groups.items()):
        top = max(max(vals), 1e-300)
        xs = [c + (i - (k - 1) / 2) * width for c in range(len(categories))]
        ax.bar(xs, [v / top for v in vals], width, label=label)
    ax.set_xticks(range(len(categories)))
    ax.set_xticklabels(categories)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, path)

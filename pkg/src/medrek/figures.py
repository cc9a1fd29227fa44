"""Report figures rendered straight to PNG files.

Pure data-to-file plotting: callers pass already-computed curves,
reports, and classified outcomes. The Agg backend is forced before
pyplot loads so rendering works on headless machines; nothing here
ever opens a window.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .diagnostics import OverlapReport, RetrievalOutcome
from .errors import ValidationError
from .evaluation import MetricReport
from .training import LOSS_COLUMNS

_KIND_STYLE = {
    "correct": ("tab:green", "o"),
    "wrong": ("tab:red", "x"),
    "none": ("tab:gray", "."),
    "false_positive": ("tab:orange", "^"),
}


def _save(fig, path: str) -> str:
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_loss_curve(curve: list[dict], path: str, valid_curve: list[dict] | None = None) -> str:
    """Per-epoch loss components; validation totals overlaid if given."""
    if not curve:
        raise ValidationError("plot_loss_curve: empty curve")
    epochs = [row["epoch"] for row in curve]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name in LOSS_COLUMNS[1:]:
        ax.plot(epochs, [row[name] for row in curve], label=name, linewidth=1.2)
    if valid_curve:
        ax.plot(
            [row["epoch"] for row in valid_curve],
            [row["total"] for row in valid_curve],
            label="valid total", color="black", linestyle="--", linewidth=1.5,
        )
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(ncols=2, fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_metrics_by_batch(reports: list[MetricReport], path: str) -> str:
    """Score degradation as more edits share one knowledge base."""
    if not reports:
        raise ValidationError("plot_metrics_by_batch: no reports")
    ordered = sorted(reports, key=lambda r: r.batch_size)
    sizes = [r.batch_size for r in ordered]
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in ("eff", "gen", "loc", "avg"):
        ax.plot(sizes, [getattr(r, name) for r in ordered], marker="o", label=name)
    ax.set_xlabel("edits per batch")
    ax.set_ylabel("score")
    ax.set_xscale("log")
    ax.set_xticks(sizes, [str(s) for s in sizes])
    ax.set_ylim(0, 105)
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_overlap_bars(reports: list[OverlapReport], path: str) -> str:
    """High-similarity key share per batch size."""
    if not reports:
        raise ValidationError("plot_overlap_bars: no overlap reports")
    ordered = sorted(reports, key=lambda r: r.batch_size)
    labels = [str(r.batch_size) for r in ordered]
    fig, ax = plt.subplots(figsize=(6, 4))
    bars = ax.bar(labels, [r.high_sim_percent for r in ordered], color="tab:blue")
    ax.bar_label(bars, fmt="%.1f")
    ax.set_xlabel("edits per batch")
    ax.set_ylabel(f"keys with cosine > {ordered[0].threshold:g} (%)")
    ax.set_ylim(0, 105)
    return _save(fig, path)


def plot_outcome_scatter(rows: list[RetrievalOutcome], path: str) -> str:
    """Top-similarity ratios per metric; the gate fires above 1."""
    if not rows:
        raise ValidationError("plot_outcome_scatter: no outcome rows")
    metrics = ("eff", "gen", "loc")
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.6), sharey=True)
    for ax, metric in zip(axes, metrics):
        sub = [r for r in rows if r.metric == metric]
        for kind, (color, marker) in _KIND_STYLE.items():
            pts = [r.ratio_top for r in sub if r.kind == kind]
            if pts:
                ax.scatter(range(len(pts)), pts, s=14, c=color, marker=marker, label=kind)
        ax.axhline(1.0, color="black", linewidth=0.8, linestyle=":")
        ax.set_title(metric)
        ax.set_xlabel("query")
        if sub:
            ax.legend(fontsize=7)
    axes[0].set_ylabel("top sim / prototype sim")
    return _save(fig, path)

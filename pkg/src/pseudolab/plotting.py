"""Figure rendering for experiment reports.

Each experiment command renders one PNG next to its CSV/JSON output. Figures
are drawn with the Agg backend and saved with fixed metadata so a re-run
produces byte-identical files.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .results import Aggregate, RunResult

FIG_WIDTH = 6.4
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

plt.rcParams.update(
    {
        "font.size": 9,
        "axes.labelsize": 10,
        "axes.titlesize": 10,
        "legend.fontsize": 8,
        "figure.figsize": (FIG_WIDTH, FIG_WIDTH * GOLDEN),
        "axes.grid": True,
        "grid.alpha": 0.3,
    }
)

_PNG_METADATA = {"Software": "pseudolab"}


def save_figure(fig: plt.Figure, path: Path) -> None:
    fig.savefig(path, dpi=150, bbox_inches="tight", metadata=_PNG_METADATA)
    plt.close(fig)


def _series_by(aggregates: list[Aggregate], x_field: str, label_fields: tuple[str, ...]):
    """Group aggregates into {label: (xs, means, stderrs)} keyed by label_fields."""
    series: dict[str, list[tuple[float, float, float]]] = {}
    for agg in aggregates:
        x = agg.key.get(x_field)
        if x is None:
            continue
        label = " ".join(str(agg.key[f]) for f in label_fields if agg.key.get(f) not in (None, ""))
        series.setdefault(label, []).append((float(x), agg.mean_accuracy, agg.stderr_accuracy))
    out = {}
    for label, points in series.items():
        points.sort()
        xs = [p[0] for p in points]
        means = [p[1] for p in points]
        errs = [p[2] for p in points]
        out[label] = (xs, means, errs)
    return out


def _line_figure(result: RunResult, x_field: str, label_fields: tuple[str, ...], xlabel: str) -> plt.Figure:
    fig, ax = plt.subplots()
    for label, (xs, means, errs) in sorted(_series_by(result.aggregates(), x_field, label_fields).items()):
        ax.errorbar(xs, means, yerr=errs, marker="o", markersize=3, capsize=2, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("test accuracy")
    ax.set_title(result.experiment.replace("_", " "))
    ax.legend(loc="best")
    return fig


def _bar_figure(result: RunResult) -> plt.Figure:
    aggs = [a for a in result.aggregates()]
    labels = [a.key["method"] for a in aggs]
    means = [a.mean_accuracy for a in aggs]
    errs = [a.stderr_accuracy for a in aggs]
    fig, ax = plt.subplots()
    ax.bar(range(len(labels)), means, yerr=errs, capsize=3, color="tab:blue", alpha=0.85)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.set_title(result.experiment.replace("_", " "))
    return fig


def render_figure(result: RunResult, path: Path) -> None:
    """Render the experiment's standard figure to ``path``."""
    kind = result.experiment
    if kind in ("noise_sweep", "ablation", "version_compare"):
        fields = ("method", "version") if kind == "version_compare" else ("method",)
        fig = _line_figure(result, "p_corrupt", fields, "label corruption proportion")
    elif kind == "threshold_sweep":
        fig = _line_figure(
            result, "p_corrupt", ("method", "threshold_config", "percentile"), "label corruption proportion"
        )
    elif kind == "data_efficiency":
        fig = _line_figure(result, "labeled_fraction", ("method",), "labeled data fraction")
    else:  # two_moons, custom_csv: one bar per method
        fig = _bar_figure(result)
    save_figure(fig, path)

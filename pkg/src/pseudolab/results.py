"""Result tables: long-format per-run rows, aggregates, deterministic writers.

Every experiment emits one row per (configuration, seed) run into a single
long-format CSV plus a JSON summary of per-configuration aggregates. Floats
are written with full repr precision so aggregates can be recomputed from the
CSV bit-for-bit, and rows are sorted on a stable key so re-runs produce
byte-identical files regardless of execution order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

CSV_COLUMNS = [
    "experiment",
    "method",
    "p_corrupt",
    "labeled_fraction",
    "version",
    "threshold_config",
    "percentile",
    "seed_index",
    "seed",
    "test_accuracy",
    "pseudo_label_accuracy",
]

GROUP_COLUMNS = [
    "experiment",
    "method",
    "p_corrupt",
    "labeled_fraction",
    "version",
    "threshold_config",
    "percentile",
]


@dataclass(frozen=True)
class RunRow:
    experiment: str
    method: str
    seed_index: int
    seed: int
    test_accuracy: float
    pseudo_label_accuracy: float | None = None
    p_corrupt: float | None = None
    labeled_fraction: float | None = None
    version: str | None = None
    threshold_config: str | None = None
    percentile: float | None = None

    def group_key(self) -> tuple:
        return (
            self.experiment,
            self.method,
            self.p_corrupt,
            self.labeled_fraction,
            self.version,
            self.threshold_config,
            self.percentile,
        )

    def sort_key(self) -> tuple:
        return tuple(_orderable(v) for v in self.group_key()) + (self.seed_index,)

    def to_csv_dict(self) -> dict[str, str]:
        values = {
            "experiment": self.experiment,
            "method": self.method,
            "p_corrupt": _fmt(self.p_corrupt),
            "labeled_fraction": _fmt(self.labeled_fraction),
            "version": self.version or "",
            "threshold_config": self.threshold_config or "",
            "percentile": _fmt(self.percentile),
            "seed_index": str(self.seed_index),
            "seed": str(self.seed),
            "test_accuracy": _fmt(self.test_accuracy),
            "pseudo_label_accuracy": _fmt(self.pseudo_label_accuracy),
        }
        return values


def _fmt(value: float | None) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _orderable(v) -> tuple:
    # None sorts before any concrete value; mixed str/float keys stay comparable
    if v is None:
        return (0, "")
    if isinstance(v, str):
        return (1, v)
    return (2, float(v))


@dataclass(frozen=True)
class Aggregate:
    key: dict
    n_runs: int
    mean_accuracy: float
    stderr_accuracy: float
    mean_pseudo_label_accuracy: float | None


@dataclass
class RunResult:
    """Everything one experiment command produces, before being written out."""

    experiment: str
    spec_echo: dict
    rows: list[RunRow]
    extras: dict = field(default_factory=dict)

    def aggregates(self) -> list[Aggregate]:
        groups: dict[tuple, list[RunRow]] = {}
        for row in self.rows:
            groups.setdefault(row.group_key(), []).append(row)
        out = []
        for key in sorted(groups, key=lambda k: tuple(_orderable(v) for v in k)):
            rows = groups[key]
            accs = [r.test_accuracy for r in rows]
            mean = sum(accs) / len(accs)
            if len(accs) > 1:
                var = sum((a - mean) ** 2 for a in accs) / (len(accs) - 1)
                stderr = math.sqrt(var / len(accs))
            else:
                stderr = 0.0
            pl = [r.pseudo_label_accuracy for r in rows if r.pseudo_label_accuracy is not None]
            out.append(
                Aggregate(
                    key=dict(zip(GROUP_COLUMNS, key)),
                    n_runs=len(rows),
                    mean_accuracy=mean,
                    stderr_accuracy=stderr,
                    mean_pseudo_label_accuracy=sum(pl) / len(pl) if pl else None,
                )
            )
        return out

    def method_means(self, **filters) -> dict[str, float]:
        """Mean accuracy per method among rows matching the given field values."""
        sums: dict[str, list[float]] = {}
        for row in self.rows:
            if all(getattr(row, k) == v for k, v in filters.items()):
                sums.setdefault(row.method, []).append(row.test_accuracy)
        return {m: sum(v) / len(v) for m, v in sums.items()}

    def paired_accuracies(self, method: str, **filters) -> dict[int, float]:
        out = {}
        for row in self.rows:
            if row.method == method and all(getattr(row, k) == v for k, v in filters.items()):
                out[row.seed_index] = row.test_accuracy
        return out


def write_rows_csv(rows: list[RunRow], path: Path) -> None:
    ordered = sorted(rows, key=lambda r: r.sort_key())
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in ordered:
            writer.writerow(row.to_csv_dict())


def write_summary_json(result: RunResult, path: Path) -> None:
    doc = {
        "experiment": result.experiment,
        "spec": result.spec_echo,
        "aggregates": [
            {
                **agg.key,
                "n_runs": agg.n_runs,
                "mean_accuracy": agg.mean_accuracy,
                "stderr_accuracy": agg.stderr_accuracy,
                "mean_pseudo_label_accuracy": agg.mean_pseudo_label_accuracy,
            }
            for agg in result.aggregates()
        ],
        "extras": result.extras,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_rows_csv(path: Path) -> list[dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))

"""Per-sample learning dynamics as running statistics over training checkpoints.

For every probe sample and class the trace keeps the running mean of the
checkpoint probability p, of p*(1-p), and of -log p. The first two yield the
average confidence and the aleatoric uncertainty of any (sample, label) pair;
the third feeds the loss-based baseline selector. Because statistics are kept
per class, a pseudo-label chosen only after training can still be scored.
Nothing about recording reads labels; only extraction does.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .boosting import PROB_CLIP


class NoDynamicsError(RuntimeError):
    """Raised when metrics are requested before any checkpoint was recorded."""


@dataclass
class DynamicsTrace:
    mean_p: np.ndarray  # (n, C) running mean of checkpoint probability
    mean_pq: np.ndarray  # (n, C) running mean of p * (1 - p)
    mean_nll: np.ndarray  # (n, C) running mean of -log(clipped p)
    e_seen: int = 0

    @classmethod
    def empty(cls, n_samples: int, class_count: int) -> "DynamicsTrace":
        shape = (n_samples, class_count)
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape), 0)

    @property
    def n_samples(self) -> int:
        return self.mean_p.shape[0]

    @property
    def class_count(self) -> int:
        return self.mean_p.shape[1]

    def update(self, checkpoint_probs: np.ndarray) -> "DynamicsTrace":
        m = np.asarray(checkpoint_probs, dtype=np.float64)
        if m.shape != self.mean_p.shape:
            raise ValueError(f"checkpoint shape {m.shape} does not match trace {self.mean_p.shape}")
        self.e_seen += 1
        e = self.e_seen
        # incremental mean: mu += (x - mu) / e, stable over long streams
        self.mean_p += (m - self.mean_p) / e
        self.mean_pq += (m * (1.0 - m) - self.mean_pq) / e
        clipped = np.clip(m, PROB_CLIP, 1.0 - PROB_CLIP)
        self.mean_nll += (-np.log(clipped) - self.mean_nll) / e
        return self


def update_running_stats(trace: DynamicsTrace, checkpoint_probs: np.ndarray) -> DynamicsTrace:
    return trace.update(checkpoint_probs)


def confidence(trace: DynamicsTrace, sample_index: int, label: int) -> float:
    """Mean probability assigned to ``label`` across the recorded checkpoints."""
    if trace.e_seen == 0:
        raise NoDynamicsError("no checkpoints recorded")
    return float(trace.mean_p[sample_index, label])


def aleatoric(trace: DynamicsTrace, sample_index: int, label: int) -> float:
    """Mean p*(1-p) at ``label`` across checkpoints; bounded by 0.25."""
    if trace.e_seen == 0:
        raise NoDynamicsError("no checkpoints recorded")
    return float(trace.mean_pq[sample_index, label])


def extract_for_labels(trace: DynamicsTrace, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gather (confidence, aleatoric) vectors at each sample's label coordinate."""
    if trace.e_seen == 0:
        raise NoDynamicsError("no checkpoints recorded")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (trace.n_samples,):
        raise ValueError("labels must be one index per traced sample")
    if labels.min() < 0 or labels.max() >= trace.class_count:
        raise IndexError("label index out of range")
    rows = np.arange(trace.n_samples)
    return trace.mean_p[rows, labels].copy(), trace.mean_pq[rows, labels].copy()


def extract_losses_for_labels(trace: DynamicsTrace, labels: np.ndarray) -> np.ndarray:
    """Mean cross-entropy at each sample's label coordinate over checkpoints."""
    if trace.e_seen == 0:
        raise NoDynamicsError("no checkpoints recorded")
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(trace.n_samples)
    return trace.mean_nll[rows, labels].copy()


@dataclass
class DynamicsRecorder:
    """Checkpoint observer that feeds a trace, with optional window truncation.

    ``skip_checkpoints`` ignores the first checkpoints of the run; the default
    of zero covers the full window, which is the recommended setting. Setting
    ``record_full_stream`` additionally keeps every checkpoint matrix, which
    only the fluctuation baseline needs.
    """

    n_samples: int
    class_count: int
    skip_checkpoints: int = 0
    record_full_stream: bool = False
    trace: DynamicsTrace = field(init=False)
    stream: list[np.ndarray] = field(init=False, default_factory=list)

    def __post_init__(self) -> None:
        self.trace = DynamicsTrace.empty(self.n_samples, self.class_count)

    def __call__(self, checkpoint_index: int, probs: np.ndarray) -> None:
        if checkpoint_index <= self.skip_checkpoints:
            return
        self.trace.update(probs)
        if self.record_full_stream:
            self.stream.append(np.array(probs, copy=True))

    def label_probability_stream(self, labels: np.ndarray) -> np.ndarray:
        """(n, E) matrix of checkpoint probabilities at each sample's label."""
        if not self.record_full_stream or not self.stream:
            raise NoDynamicsError("full stream recording was not enabled")
        labels = np.asarray(labels, dtype=np.int64)
        rows = np.arange(self.n_samples)
        return np.stack([m[rows, labels] for m in self.stream], axis=1)


def trace_to_rows(trace: DynamicsTrace) -> list[dict]:
    rows = []
    for i in range(trace.n_samples):
        row: dict = {"sample_index": i, "checkpoints_seen": trace.e_seen}
        for k in range(trace.class_count):
            row[f"mean_p_{k}"] = float(trace.mean_p[i, k])
            row[f"mean_pq_{k}"] = float(trace.mean_pq[i, k])
        rows.append(row)
    return rows


def export_trace_csv(trace: DynamicsTrace, path: str) -> None:
    rows = trace_to_rows(trace)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def export_trace_json(trace: DynamicsTrace, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(trace_to_rows(trace), fh)

"""Pseudo-label selectors: which unlabeled samples get a label this iteration.

Each selector maps a probability matrix over candidate samples to a batch of
(sample, class) assignments. A sample is assigned at most once, with its
argmax class; the low-probability branch of the threshold rules only matters
for multi-label targets, which this toolkit does not cover.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .boosting import PROB_CLIP
from .data import Dataset

PLABELER_KINDS = ("greedy", "ups", "flexmatch", "sla_lite")


@dataclass(frozen=True)
class PlabelerConfig:
    kind: str = "greedy"
    tau_p: float = 0.8
    tau_n: float = 0.2
    kappa_p: float = 0.2
    kappa_n: float = 0.05
    ensemble_size: int = 10
    flex_base_tau: float = 0.9
    sinkhorn_epsilon: float = 0.05
    sinkhorn_iters: int = 500
    sinkhorn_tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.kind not in PLABELER_KINDS:
            raise ValueError(f"unknown pseudo-labeler kind {self.kind!r}")
        if not self.tau_n < self.tau_p:
            raise ValueError("tau_n must be below tau_p")
        if not self.kappa_n < self.kappa_p:
            raise ValueError("kappa_n must be below kappa_p")
        if self.ensemble_size < 2:
            raise ValueError("ensemble_size must be at least 2")
        if self.sinkhorn_epsilon <= 0 or self.sinkhorn_iters < 1:
            raise ValueError("sinkhorn_epsilon must be positive and sinkhorn_iters >= 1")


@dataclass(frozen=True)
class PseudoLabel:
    index: int  # position within the candidate matrix handed to the selector
    label: int
    iteration: int
    confidence: float


@dataclass(frozen=True)
class PseudoLabelBatch:
    entries: tuple[PseudoLabel, ...]
    method: str

    def __post_init__(self) -> None:
        indices = [e.index for e in self.entries]
        if len(indices) != len(set(indices)):
            raise ValueError("duplicate sample indices in pseudo-label batch")

    def __len__(self) -> int:
        return len(self.entries)

    def indices(self) -> np.ndarray:
        return np.asarray([e.index for e in self.entries], dtype=np.int64)

    def labels(self) -> np.ndarray:
        return np.asarray([e.label for e in self.entries], dtype=np.int64)


def _validate_probs(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("probability matrix must be 2-D")
    return probs


def _batch_from_mask(
    probs: np.ndarray, selected: np.ndarray, iteration: int, method: str
) -> PseudoLabelBatch:
    classes = probs.argmax(axis=1)
    entries = tuple(
        PseudoLabel(int(i), int(classes[i]), iteration, float(probs[i, classes[i]]))
        for i in np.flatnonzero(selected)
    )
    return PseudoLabelBatch(entries, method)


def greedy_select(probs: np.ndarray, config: PlabelerConfig, iteration: int = 0) -> PseudoLabelBatch:
    """Select samples whose argmax probability reaches tau_p."""
    probs = _validate_probs(probs)
    selected = probs.max(axis=1) >= config.tau_p
    return _batch_from_mask(probs, selected, iteration, "greedy")


def ups_select(
    probs: np.ndarray,
    uncertainties: np.ndarray,
    config: PlabelerConfig,
    iteration: int = 0,
) -> PseudoLabelBatch:
    """Greedy selection with an extra gate on predictive uncertainty.

    A sample passes only if its argmax probability reaches tau_p and the
    ensemble standard deviation at that coordinate is at most kappa_p.
    """
    probs = _validate_probs(probs)
    uncertainties = np.asarray(uncertainties, dtype=np.float64)
    if uncertainties.shape != probs.shape:
        raise ValueError("uncertainty matrix shape must match probabilities")
    classes = probs.argmax(axis=1)
    rows = np.arange(probs.shape[0])
    selected = (probs[rows, classes] >= config.tau_p) & (uncertainties[rows, classes] <= config.kappa_p)
    return _batch_from_mask(probs, selected, iteration, "ups")


def flexmatch_thresholds(status_counts: np.ndarray, base_tau: float) -> np.ndarray:
    """Class-dependent thresholds: base_tau scaled by normalized learning status.

    Learning status is the cumulative count of selections per class; it is
    normalized by the best-learned class's count. Before anything has been
    selected every class uses base_tau.
    """
    counts = np.asarray(status_counts, dtype=np.float64)
    top = counts.max()
    if top <= 0:
        return np.full(counts.shape[0], base_tau)
    return base_tau * (counts / top)


def flexmatch_select(
    probs: np.ndarray,
    status_counts: np.ndarray,
    config: PlabelerConfig,
    iteration: int = 0,
) -> PseudoLabelBatch:
    """Select samples whose argmax probability exceeds their class threshold."""
    probs = _validate_probs(probs)
    taus = flexmatch_thresholds(status_counts, config.flex_base_tau)
    classes = probs.argmax(axis=1)
    rows = np.arange(probs.shape[0])
    selected = probs[rows, classes] > taus[classes]
    return _batch_from_mask(probs, selected, iteration, "flexmatch")


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    top = a.max(axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return np.squeeze(top, axis=axis) + np.log(np.exp(a - top).sum(axis=axis))


def sinkhorn_plan(
    probs: np.ndarray,
    class_marginals: np.ndarray,
    epsilon: float,
    max_iters: int,
    tol: float = 1e-6,
) -> tuple[np.ndarray, bool, int]:
    """Entropic transport between samples (uniform rows) and classes.

    Cost is -log of the clipped probabilities. Updates run in the log domain
    so small epsilon stays stable. Returns (plan, converged, iterations); on
    non-convergence the best iterate is returned with a warning.
    """
    probs = _validate_probs(probs)
    b = np.asarray(class_marginals, dtype=np.float64)
    if b.shape != (probs.shape[1],):
        raise ValueError("class_marginals must have one entry per class")
    if (b < 0).any() or b.sum() <= 0:
        raise ValueError("class_marginals must be non-negative with positive total")
    n = probs.shape[0]
    total = b.sum()
    a = np.full(n, total / n)
    cost = -np.log(np.clip(probs, PROB_CLIP, 1.0 - PROB_CLIP))
    log_a = np.log(a)
    with np.errstate(divide="ignore"):
        log_b = np.log(b)
    f = np.zeros(n)
    g = np.zeros(probs.shape[1])
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        m = (-cost + f[:, None] + g[None, :]) / epsilon
        f = f + epsilon * (log_a - _logsumexp(m, axis=1))
        m = (-cost + f[:, None] + g[None, :]) / epsilon
        with np.errstate(invalid="ignore"):
            g = np.where(np.isneginf(log_b), -np.inf, g + epsilon * (log_b - _logsumexp(m, axis=0)))
        plan = np.exp((-cost + f[:, None] + g[None, :]) / epsilon)
        err = max(
            np.abs(plan.sum(axis=1) - a).max(),
            np.abs(plan.sum(axis=0) - b).max(),
        )
        if err < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"transport failed to reach tol={tol} in {max_iters} iterations", RuntimeWarning)
    return np.exp((-cost + f[:, None] + g[None, :]) / epsilon), converged, it


def sinkhorn_allocate(
    probs: np.ndarray,
    class_marginals: np.ndarray,
    config: PlabelerConfig,
    iteration: int = 0,
) -> PseudoLabelBatch:
    """Assign each sample its argmax transport column, then gate on confidence.

    Only assignments whose model probability at the assigned class reaches
    tau_p survive the gate.
    """
    probs = _validate_probs(probs)
    plan, _, _ = sinkhorn_plan(
        probs, class_marginals, config.sinkhorn_epsilon, config.sinkhorn_iters, config.sinkhorn_tol
    )
    assigned = plan.argmax(axis=1)
    rows = np.arange(probs.shape[0])
    keep = probs[rows, assigned] >= config.tau_p
    entries = tuple(
        PseudoLabel(int(i), int(assigned[i]), iteration, float(probs[i, assigned[i]]))
        for i in np.flatnonzero(keep)
    )
    return PseudoLabelBatch(entries, "sla_lite")


def derive_class_marginals(labeled: Dataset, pool_size: int) -> np.ndarray:
    """Empirical class proportions of the labeled set scaled to ``pool_size``."""
    if labeled.labels is None or labeled.n_samples == 0:
        raise ValueError("labeled set must be non-empty and labeled")
    counts = np.bincount(labeled.labels, minlength=labeled.class_count).astype(np.float64)
    if np.count_nonzero(counts) < 2:
        raise ValueError("labeled set holds a single class; marginals are degenerate")
    return counts / counts.sum() * pool_size


def export_batch_csv(batch: PseudoLabelBatch, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_index", "assigned_class", "iteration", "confidence"])
        for e in batch.entries:
            writer.writerow([e.index, e.label, e.iteration, repr(e.confidence)])

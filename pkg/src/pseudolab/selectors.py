"""Sample selectors: map per-sample metrics to keep/reject masks.

The primary selector marks a sample Useful when its average confidence is at
least tau_conf and its aleatoric uncertainty is strictly below tau_al; every
other sample is Harmful. Baseline selectors from the noisy-label literature
(mean-loss ranking, prediction fluctuation counting) and the identity selector
are provided so vanilla pipelines are a configuration, not separate code.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .data import round_half_up

USEFUL: Literal["useful"] = "useful"
HARMFUL: Literal["harmful"] = "harmful"

SELECTOR_KINDS = ("dips", "identity", "small_loss", "fluctuation")


@dataclass(frozen=True)
class FixedThreshold:
    value: float


@dataclass(frozen=True)
class AdaptiveThreshold:
    """Cutoff factor * (max - min) of the candidate aleatoric values.

    ``offset_by_min`` switches to min + factor * (max - min), the alternative
    reading of the adaptive rule.
    """

    factor: float = 0.75
    offset_by_min: bool = False

    def __post_init__(self) -> None:
        if not 0 < self.factor <= 1:
            raise ValueError("adaptive factor must lie in (0, 1]")


@dataclass(frozen=True)
class SelectorConfig:
    kind: str = "dips"
    tau_conf: float = 0.8
    tau_conf_percentile: float | None = None  # resolve tau_conf as this percentile of candidate confidences
    tau_al_policy: FixedThreshold | AdaptiveThreshold = field(default_factory=AdaptiveThreshold)
    keep_fraction: float = 0.8
    smoothing: bool = True
    reject_percentile: float = 80.0

    def __post_init__(self) -> None:
        if self.kind not in SELECTOR_KINDS:
            raise ValueError(f"unknown selector kind {self.kind!r}")
        if not 0.0 <= self.tau_conf <= 1.0:
            raise ValueError("tau_conf must lie in [0, 1]")
        if self.tau_conf_percentile is not None and not 0.0 <= self.tau_conf_percentile <= 1.0:
            raise ValueError("tau_conf_percentile must lie in [0, 1]")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError("keep_fraction must lie in (0, 1]")
        if not 0.0 <= self.reject_percentile <= 100.0:
            raise ValueError("reject_percentile must lie in [0, 100]")


@dataclass(frozen=True)
class Characterization:
    sample_index: int
    verdict: str
    confidence: float
    aleatoric: float


@dataclass
class DipsSelection:
    """Verdicts plus the resolved thresholds and the final keep mask.

    The mask equals the Useful set, topped up by the highest-confidence
    rescue-pool sample of any rescue-pool class that would otherwise be
    unrepresented. Training therefore always sees every originally labeled
    class; rescued samples keep their Harmful verdict. ``al_gate_waived``
    marks candidate sets whose adaptive cutoff fell at or below the least
    uncertain candidate: the range-based rule carries no signal there, so
    the verdict degrades to confidence only.
    """

    characterizations: list[Characterization]
    mask: np.ndarray
    tau_conf: float
    tau_al: float
    rescued: bool = False
    al_gate_waived: bool = False


def adaptive_al_threshold(aleatoric_values: np.ndarray, factor: float) -> float:
    """factor * (max - min) of the given aleatoric values."""
    values = np.asarray(aleatoric_values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot derive an adaptive threshold from no values")
    return float(factor * (values.max() - values.min()))


def resolve_tau_al(aleatoric_values: np.ndarray, policy: FixedThreshold | AdaptiveThreshold) -> float:
    if isinstance(policy, FixedThreshold):
        return policy.value
    base = adaptive_al_threshold(aleatoric_values, policy.factor)
    if policy.offset_by_min:
        return float(np.asarray(aleatoric_values).min()) + base
    return base


def dips_verdicts(
    confidence: np.ndarray, aleatoric: np.ndarray, tau_conf: float, tau_al: float
) -> np.ndarray:
    """Pure verdict rule: Useful iff confidence >= tau_conf and aleatoric < tau_al."""
    return (np.asarray(confidence) >= tau_conf) & (np.asarray(aleatoric) < tau_al)


def dips_select(
    confidence: np.ndarray,
    aleatoric: np.ndarray,
    config: SelectorConfig,
    labels: np.ndarray | None = None,
    rescue_pool: np.ndarray | None = None,
) -> DipsSelection:
    """Characterize candidates and return the Useful mask.

    ``labels`` and ``rescue_pool`` (a boolean mask over candidates, typically
    the originally-labeled ones) drive the non-degeneracy safeguard: any
    class present in the rescue pool that has no Useful member among the
    candidates keeps its single highest-confidence rescue-pool sample. With
    no labels at all, an empty Useful set keeps the top-confidence candidate.
    """
    conf = np.asarray(confidence, dtype=np.float64)
    al = np.asarray(aleatoric, dtype=np.float64)
    if conf.shape != al.shape:
        raise ValueError("confidence and aleatoric vectors must have equal length")
    tau_conf = config.tau_conf
    if config.tau_conf_percentile is not None:
        tau_conf = float(np.quantile(conf, config.tau_conf_percentile))
    tau_al = resolve_tau_al(al, config.tau_al_policy)
    waived = False
    if isinstance(config.tau_al_policy, AdaptiveThreshold) and conf.size and tau_al <= al.min():
        # a cutoff at or below the least uncertain candidate rejects everyone;
        # the spread-based rule is uninformative, fall back to confidence only
        waived = True
        tau_al = np.inf
    useful = dips_verdicts(conf, al, tau_conf, tau_al)
    chars = [
        Characterization(i, USEFUL if u else HARMFUL, float(conf[i]), float(al[i]))
        for i, u in enumerate(useful)
    ]
    mask = useful.copy()
    rescued = False
    if conf.size:
        if labels is None:
            if not mask.any():
                rescued = True
                pool = np.ones(conf.shape[0], dtype=bool) if rescue_pool is None else np.asarray(rescue_pool, dtype=bool)
                if not pool.any():
                    pool = np.ones(conf.shape[0], dtype=bool)
                mask[int(np.argmax(np.where(pool, conf, -np.inf)))] = True
        else:
            labels = np.asarray(labels, dtype=np.int64)
            pool = np.ones(conf.shape[0], dtype=bool) if rescue_pool is None else np.asarray(rescue_pool, dtype=bool)
            if not pool.any():
                pool = np.ones(conf.shape[0], dtype=bool)
            for cls in np.unique(labels[pool]):
                if not (mask & (labels == cls)).any():
                    rescued = True
                    in_class = pool & (labels == cls)
                    mask[int(np.argmax(np.where(in_class, conf, -np.inf)))] = True
    return DipsSelection(chars, mask, tau_conf, tau_al, rescued, waived)


def identity_select(n_candidates: int) -> np.ndarray:
    """Select everything; vanilla pipelines use this selector."""
    return np.ones(n_candidates, dtype=bool)


def small_loss_select(mean_losses: np.ndarray, keep_fraction: float) -> np.ndarray:
    """Keep the round(keep_fraction * n) lowest-loss samples, ties by index."""
    losses = np.asarray(mean_losses, dtype=np.float64)
    if losses.size == 0:
        raise ValueError("no losses to rank")
    if not np.isfinite(losses).all():
        raise ValueError("losses must be finite")
    keep = round_half_up(keep_fraction * losses.size)
    order = np.argsort(losses, kind="stable")
    mask = np.zeros(losses.size, dtype=bool)
    mask[order[:keep]] = True
    return mask


def fluctuation_scores(
    label_prob_stream: np.ndarray,
    confidence: np.ndarray,
    smoothing: bool = True,
) -> np.ndarray:
    """Count correct-to-incorrect flips between adjacent checkpoints.

    A flip at (e, e+1) means the label probability crossed from above 1/2 to
    below 1/2. The count is normalized by the number of adjacent pairs; with
    smoothing on, the score is blended with (1 - confidence) so persistent
    low-confidence samples rank as badly as oscillating ones.
    """
    stream = np.asarray(label_prob_stream, dtype=np.float64)
    if stream.ndim != 2 or stream.shape[1] < 2:
        raise ValueError("stream must cover at least 2 checkpoints")
    flips = (stream[:, :-1] > 0.5) & (stream[:, 1:] < 0.5)
    rate = flips.sum(axis=1) / (stream.shape[1] - 1)
    if smoothing:
        return 0.5 * (rate + (1.0 - np.asarray(confidence, dtype=np.float64)))
    return rate


def fluctuation_select(
    label_prob_stream: np.ndarray,
    confidence: np.ndarray,
    config: SelectorConfig,
) -> np.ndarray:
    """Reject samples whose fluctuation score exceeds the configured percentile."""
    scores = fluctuation_scores(label_prob_stream, confidence, config.smoothing)
    cutoff = np.percentile(scores, config.reject_percentile)
    return scores <= cutoff


def export_characterizations(
    path: str,
    characterizations: Sequence[Characterization],
    provenance: Sequence[str] | None = None,
) -> None:
    """Write one row per candidate: index, provenance, metrics, verdict."""
    rows = []
    for i, ch in enumerate(characterizations):
        rows.append(
            {
                "sample_index": ch.sample_index,
                "provenance": provenance[i] if provenance is not None else "",
                "confidence": ch.confidence,
                "aleatoric": ch.aleatoric,
                "verdict": ch.verdict,
            }
        )
    if path.endswith(".json"):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["sample_index", "provenance", "confidence", "aleatoric", "verdict"])
        writer.writeheader()
        writer.writerows(rows)

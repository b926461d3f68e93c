"""The pseudo-labeling loop with sample characterization and selection.

Each iteration trains a fresh model on the currently selected training set,
records learning dynamics over the whole candidate pool, pseudo-labels the
unlabeled data with the method's batch selector, and then re-selects the next
training set from the full pool of labeled plus pseudo-labeled samples. With
the identity selector and the greedy batch rule this reduces exactly to
vanilla pseudo-labeling; the ablation flags turn selection on or off at
initialization and during iterations independently.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import plabelers, selectors
from .backbones import (
    BackboneConfig,
    DegenerateTrainingError,
    Ensemble,
    Model,
    ensemble_uncertainty,
    predict_proba,
    train_ensemble,
    train_with_checkpoints,
)
from .data import Dataset, Split
from .dynamics import (
    DynamicsRecorder,
    extract_for_labels,
    extract_losses_for_labels,
)
from .plabelers import PlabelerConfig, PseudoLabelBatch
from .seeding import derive_seed
from .selectors import SelectorConfig

VERSIONS = ("grow", "rebuild")

LABELED = 0
PSEUDO = 1
UNASSIGNED = 2

_PROVENANCE_NAMES = {LABELED: "labeled", PSEUDO: "pseudo"}


@dataclass(frozen=True)
class SampleProvenance:
    origin: str  # "labeled" or "pseudo"
    current_label: int
    pseudo_iteration: int  # 0 for labeled samples
    selected_last_round: bool


@dataclass(frozen=True)
class PipelineConfig:
    iterations: int = 5
    plabeler: PlabelerConfig = field(default_factory=PlabelerConfig)
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    dips_at_init: bool = True
    dips_at_iters: bool = True
    version: str = "grow"
    window_skip_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.version not in VERSIONS:
            raise ValueError(f"version must be one of {VERSIONS}")
        if not 0.0 <= self.window_skip_fraction < 1.0:
            raise ValueError("window_skip_fraction must lie in [0, 1)")


@dataclass
class IterationRecord:
    iteration: int
    pool_size: int  # candidate pool the model could draw on at this iteration
    train_size: int  # samples actually trained on
    new_pseudo_labels: int
    test_accuracy: float
    pseudo_label_accuracy: float | None
    verdict_counts: dict[str, dict[str, int]]
    train_indices: np.ndarray  # pool indices used to train this iteration's model
    pseudo_indices: np.ndarray  # unlabeled-relative indices currently pseudo-labeled
    pseudo_labels: np.ndarray
    next_train_indices: np.ndarray  # pool indices selected for the next iteration


@dataclass
class RunHistory:
    config: PipelineConfig
    records: list[IterationRecord] = field(default_factory=list)
    events: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)


@dataclass
class PipelineResult:
    model: Model
    history: RunHistory
    final_characterizations: list[selectors.Characterization] = field(default_factory=list)
    final_provenance: list[SampleProvenance] = field(default_factory=list)


def evaluate(model: Model, test: Dataset) -> float:
    """Fraction of argmax predictions matching the test labels."""
    if test.labels is None:
        raise ValueError("test set must be labeled")
    preds = predict_proba(model, test.features).argmax(axis=1)
    return float(np.mean(preds == test.labels))


def pseudo_label_accuracy(history: RunHistory, ground_truth: np.ndarray) -> list[float | None]:
    """Per-iteration fraction of held pseudo-labels that match the ground truth.

    Iterations holding no pseudo-labels report None rather than a number.
    """
    gt = np.asarray(ground_truth, dtype=np.int64)
    out: list[float | None] = []
    for rec in history.records:
        if rec.pseudo_indices.size == 0:
            out.append(None)
        else:
            out.append(float(np.mean(gt[rec.pseudo_indices] == rec.pseudo_labels)))
    return out


class _PoolState:
    """Provenance-tracking candidate pool: labeled block then unlabeled block."""

    def __init__(self, split: Split):
        self.n_lab = split.labeled.n_samples
        self.n_unlab = split.unlabeled.n_samples
        self.class_count = split.class_count
        self.features = np.vstack([split.labeled.features, split.unlabeled.features])
        self.status = np.full(self.n_lab + self.n_unlab, UNASSIGNED, dtype=np.int8)
        self.status[: self.n_lab] = LABELED
        self.label = np.full(self.n_lab + self.n_unlab, -1, dtype=np.int64)
        self.label[: self.n_lab] = split.labeled.labels
        self.assigned_at = np.zeros(self.n_lab + self.n_unlab, dtype=np.int64)
        self.flex_status = np.zeros(self.class_count, dtype=np.int64)
        # candidate-pool membership: labeled samples dropped by the initial
        # selection leave the growing pool for good; pseudo-labeled samples
        # join it when assigned
        self.member = np.zeros(self.n_lab + self.n_unlab, dtype=bool)
        self.member[: self.n_lab] = True

    @property
    def n_pool(self) -> int:
        return self.n_lab + self.n_unlab

    def set_initial_members(self, labeled_members: np.ndarray) -> None:
        self.member[: self.n_lab] = False
        self.member[labeled_members] = True

    def member_indices(self) -> np.ndarray:
        return np.flatnonzero(self.member)

    def pseudo_unlab_indices(self) -> np.ndarray:
        return np.flatnonzero(self.status[self.n_lab :] == PSEUDO)

    def unassigned_unlab_indices(self) -> np.ndarray:
        return self.n_lab + np.flatnonzero(self.status[self.n_lab :] == UNASSIGNED)

    def reset_for_rebuild(self) -> None:
        pseudo = self.status == PSEUDO
        self.status[pseudo] = UNASSIGNED
        self.label[pseudo] = -1
        self.assigned_at[pseudo] = 0
        self.member[pseudo] = False
        self.member[: self.n_lab] = True

    def apply_batch(self, pool_indices: np.ndarray, batch: PseudoLabelBatch, iteration: int) -> None:
        if len(batch) == 0:
            return
        targets = pool_indices[batch.indices()]
        if (self.status[targets] == PSEUDO).any():
            raise ValueError("batch re-labels an already pseudo-labeled sample")
        self.status[targets] = PSEUDO
        self.label[targets] = batch.labels()
        self.assigned_at[targets] = iteration
        self.member[targets] = True

    def train_dataset(self, pool_indices: np.ndarray) -> Dataset:
        return Dataset(self.features[pool_indices], self.label[pool_indices], self.class_count)


def _verdict_counts(
    members: np.ndarray, mask: np.ndarray, status: np.ndarray
) -> dict[str, dict[str, int]]:
    counts = {"labeled": {"useful": 0, "harmful": 0}, "pseudo": {"useful": 0, "harmful": 0}}
    for pos, pool_idx in enumerate(members):
        bucket = counts[_PROVENANCE_NAMES[int(status[pool_idx])]]
        bucket["useful" if mask[pos] else "harmful"] += 1
    return counts


def _apply_selector(
    config: PipelineConfig,
    members: np.ndarray,
    state: _PoolState,
    recorder: DynamicsRecorder,
) -> tuple[np.ndarray, dict[str, dict[str, int]], list[selectors.Characterization]]:
    """Run the configured selector over the pool members; returns kept pool indices."""
    kind = config.selector.kind
    labels = state.label[members]
    if kind == "identity":
        mask = selectors.identity_select(members.size)
        return members, _verdict_counts(members, mask, state.status), []
    conf_all, al_all = extract_for_labels(recorder.trace, np.where(state.label >= 0, state.label, 0))
    conf, al = conf_all[members], al_all[members]
    chars: list[selectors.Characterization] = []
    if kind == "dips":
        selection = selectors.dips_select(
            conf,
            al,
            config.selector,
            labels=labels,
            rescue_pool=state.status[members] == LABELED,
        )
        mask = selection.mask
        chars = selection.characterizations
    elif kind == "small_loss":
        losses_all = extract_losses_for_labels(recorder.trace, np.where(state.label >= 0, state.label, 0))
        mask = selectors.small_loss_select(losses_all[members], config.selector.keep_fraction)
        if not mask.any():
            mask[int(np.argmin(losses_all[members]))] = True
    elif kind == "fluctuation":
        stream = recorder.label_probability_stream(np.where(state.label >= 0, state.label, 0))
        mask = selectors.fluctuation_select(stream[members], conf, config.selector)
        if not mask.any():
            mask[int(np.argmax(conf))] = True
    else:  # pragma: no cover - kinds validated in SelectorConfig
        raise ValueError(f"unhandled selector kind {kind!r}")
    return members[mask], _verdict_counts(members, mask, state.status), chars


def _pseudo_label(
    config: PipelineConfig,
    state: _PoolState,
    split: Split,
    train_ds: Dataset,
    model: Model,
    iteration: int,
) -> tuple[np.ndarray, PseudoLabelBatch]:
    """Run the batch selector s over the current candidate unlabeled samples."""
    if config.version == "grow":
        candidates = state.unassigned_unlab_indices()
    else:
        candidates = np.arange(state.n_lab, state.n_pool)
    if candidates.size == 0:
        return candidates, PseudoLabelBatch((), config.plabeler.kind)
    probs = predict_proba(model, state.features[candidates])
    kind = config.plabeler.kind
    if kind == "greedy":
        batch = plabelers.greedy_select(probs, config.plabeler, iteration)
    elif kind == "ups":
        ens_backbone = BackboneConfig(
            kind=config.backbone.kind,
            rounds_or_epochs=config.backbone.rounds_or_epochs,
            learning_rate=config.backbone.learning_rate,
            tree_depth=config.backbone.tree_depth,
            min_child_weight=config.backbone.min_child_weight,
            hidden_width=config.backbone.hidden_width,
            batch_size=config.backbone.batch_size,
            seed=derive_seed(config.seed, "ensemble", iteration),
        )
        ensemble: Ensemble = train_ensemble(train_ds, config.plabeler.ensemble_size, ens_backbone)
        unc = ensemble_uncertainty(ensemble, state.features[candidates])
        batch = plabelers.ups_select(probs, unc, config.plabeler, iteration)
    elif kind == "flexmatch":
        batch = plabelers.flexmatch_select(probs, state.flex_status, config.plabeler, iteration)
    elif kind == "sla_lite":
        marginals = plabelers.derive_class_marginals(split.labeled, candidates.size)
        batch = plabelers.sinkhorn_allocate(probs, marginals, config.plabeler, iteration)
    else:  # pragma: no cover
        raise ValueError(f"unhandled pseudo-labeler kind {kind!r}")
    return candidates, batch


def run(split: Split, config: PipelineConfig) -> PipelineResult:
    """Execute the full pseudo-labeling loop and return the final model.

    With selection at initialization, labeled samples rejected by the first
    selection leave the growing candidate pool for good; samples rejected at
    iteration stages stay in the pool and are re-scored every round. The
    rebuilt-pool version restores the full labeled set each iteration.
    Degenerate training sets (a single class after selection) fall back to
    the previous iteration's model and are noted in the history events.
    """
    if split.labeled.labels is None or np.unique(split.labeled.labels).size < 2:
        raise ValueError("labeled part must contain at least two classes")
    state = _PoolState(split)
    probe = Dataset(state.features, None, state.class_count)
    E = config.backbone.rounds_or_epochs
    skip = math.floor(config.window_skip_fraction * E)
    record_stream = config.selector.kind == "fluctuation"
    history = RunHistory(config=config)

    def fresh_recorder() -> DynamicsRecorder:
        return DynamicsRecorder(
            state.n_pool, state.class_count, skip_checkpoints=skip, record_full_stream=record_stream
        )

    def backbone_for(t: int) -> BackboneConfig:
        return BackboneConfig(
            kind=config.backbone.kind,
            rounds_or_epochs=config.backbone.rounds_or_epochs,
            learning_rate=config.backbone.learning_rate,
            tree_depth=config.backbone.tree_depth,
            min_child_weight=config.backbone.min_child_weight,
            hidden_width=config.backbone.hidden_width,
            batch_size=config.backbone.batch_size,
            seed=derive_seed(config.seed, "train", t),
        )

    t_start = time.perf_counter()
    labeled_idx = np.arange(state.n_lab)
    recorder = fresh_recorder()
    model = train_with_checkpoints(state.train_dataset(labeled_idx), probe, backbone_for(0), recorder)
    history.timings["train_initial"] = time.perf_counter() - t_start

    if config.dips_at_init:
        train_idx, verdicts, chars = _apply_selector(config, labeled_idx, state, recorder)
        state.set_initial_members(train_idx)
    else:
        train_idx, verdicts, chars = labeled_idx, _verdict_counts(
            labeled_idx, np.ones(labeled_idx.size, dtype=bool), state.status
        ), []
    history.records.append(
        IterationRecord(
            iteration=0,
            pool_size=int(labeled_idx.size),
            train_size=int(labeled_idx.size),
            new_pseudo_labels=0,
            test_accuracy=evaluate(model, split.test),
            pseudo_label_accuracy=None,
            verdict_counts=verdicts,
            train_indices=labeled_idx.copy(),
            pseudo_indices=np.empty(0, dtype=np.int64),
            pseudo_labels=np.empty(0, dtype=np.int64),
            next_train_indices=train_idx.copy(),
        )
    )

    final_chars = chars
    train_time = 0.0
    for t in range(1, config.iterations + 1):
        pool_members = state.member_indices()
        train_ds = state.train_dataset(train_idx)
        t0 = time.perf_counter()
        try:
            new_recorder = fresh_recorder()
            model = train_with_checkpoints(train_ds, probe, backbone_for(t), new_recorder)
            recorder = new_recorder
        except DegenerateTrainingError as exc:
            history.events.append(f"iteration {t}: {exc}; kept previous model")
        train_time += time.perf_counter() - t0

        test_acc = evaluate(model, split.test)

        if config.version == "rebuild":
            state.reset_for_rebuild()
        try:
            candidates, batch = _pseudo_label(config, state, split, train_ds, model, t)
        except DegenerateTrainingError as exc:
            # an uncertainty ensemble cannot be fit on a degenerate train set
            history.events.append(f"iteration {t}: pseudo-labeling skipped ({exc})")
            candidates, batch = np.empty(0, dtype=np.int64), PseudoLabelBatch((), config.plabeler.kind)
        state.apply_batch(candidates, batch, t)
        if len(batch):
            np.add.at(state.flex_status, batch.labels(), 1)

        members = state.member_indices()
        if config.dips_at_iters:
            next_train, verdicts, chars = _apply_selector(config, members, state, recorder)
        else:
            next_train, verdicts, chars = members, _verdict_counts(
                members, np.ones(members.size, dtype=bool), state.status
            ), []
        if chars:
            final_chars = chars

        pseudo_unlab = state.pseudo_unlab_indices()
        pl_acc = None
        if split.unlabeled_ground_truth is not None and pseudo_unlab.size:
            gt = split.unlabeled_ground_truth[pseudo_unlab]
            pl_acc = float(np.mean(gt == state.label[state.n_lab + pseudo_unlab]))
        history.records.append(
            IterationRecord(
                iteration=t,
                pool_size=int(pool_members.size),
                train_size=int(train_idx.size),
                new_pseudo_labels=len(batch),
                test_accuracy=test_acc,
                pseudo_label_accuracy=pl_acc,
                verdict_counts=verdicts,
                train_indices=train_idx.copy(),
                pseudo_indices=pseudo_unlab.copy(),
                pseudo_labels=state.label[state.n_lab + pseudo_unlab].copy(),
                next_train_indices=next_train.copy(),
            )
        )
        train_idx = next_train
    history.timings["train_iterations"] = train_time

    selected = np.zeros(state.n_pool, dtype=bool)
    selected[train_idx] = True
    provenance = [
        SampleProvenance(
            origin=_PROVENANCE_NAMES[int(state.status[i])],
            current_label=int(state.label[i]),
            pseudo_iteration=int(state.assigned_at[i]),
            selected_last_round=bool(selected[i]),
        )
        for i in state.member_indices()
    ]
    return PipelineResult(model, history, final_chars, provenance)


# --- history export ---------------------------------------------------------


def config_to_dict(config: PipelineConfig) -> dict:
    policy = config.selector.tau_al_policy
    if isinstance(policy, selectors.FixedThreshold):
        policy_dict = {"policy": "fixed", "value": policy.value}
    else:
        policy_dict = {"policy": "adaptive", "factor": policy.factor, "offset_by_min": policy.offset_by_min}
    return {
        "iterations": config.iterations,
        "version": config.version,
        "dips_at_init": config.dips_at_init,
        "dips_at_iters": config.dips_at_iters,
        "window_skip_fraction": config.window_skip_fraction,
        "seed": config.seed,
        "plabeler": {
            "kind": config.plabeler.kind,
            "tau_p": config.plabeler.tau_p,
            "tau_n": config.plabeler.tau_n,
            "kappa_p": config.plabeler.kappa_p,
            "kappa_n": config.plabeler.kappa_n,
            "ensemble_size": config.plabeler.ensemble_size,
            "flex_base_tau": config.plabeler.flex_base_tau,
            "sinkhorn_epsilon": config.plabeler.sinkhorn_epsilon,
            "sinkhorn_iters": config.plabeler.sinkhorn_iters,
        },
        "selector": {
            "kind": config.selector.kind,
            "tau_conf": config.selector.tau_conf,
            "tau_conf_percentile": config.selector.tau_conf_percentile,
            "tau_al": policy_dict,
            "keep_fraction": config.selector.keep_fraction,
            "smoothing": config.selector.smoothing,
            "reject_percentile": config.selector.reject_percentile,
        },
        "backbone": {
            "kind": config.backbone.kind,
            "rounds_or_epochs": config.backbone.rounds_or_epochs,
            "learning_rate": config.backbone.learning_rate,
            "tree_depth": config.backbone.tree_depth,
            "min_child_weight": config.backbone.min_child_weight,
            "hidden_width": config.backbone.hidden_width,
            "batch_size": config.backbone.batch_size,
            "seed": config.backbone.seed,
        },
    }


def history_to_dict(history: RunHistory, include_timings: bool = False) -> dict:
    """Canonical JSON-ready form of a run history.

    Timings are excluded by default so the exported document is bit-identical
    across re-runs of the same configuration.
    """
    out = {
        "config": config_to_dict(history.config),
        "events": list(history.events),
        "iterations": [
            {
                "iteration": rec.iteration,
                "pool_size": rec.pool_size,
                "train_size": rec.train_size,
                "new_pseudo_labels": rec.new_pseudo_labels,
                "test_accuracy": rec.test_accuracy,
                "pseudo_label_accuracy": rec.pseudo_label_accuracy,
                "verdict_counts": rec.verdict_counts,
                "train_indices": rec.train_indices.tolist(),
                "pseudo_indices": rec.pseudo_indices.tolist(),
                "pseudo_labels": rec.pseudo_labels.tolist(),
                "next_train_indices": rec.next_train_indices.tolist(),
            }
            for rec in history.records
        ],
    }
    if include_timings:
        out["timings"] = dict(history.timings)
    return out


def export_history_json(history: RunHistory, path: str, include_timings: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(history_to_dict(history, include_timings=include_timings), fh, indent=2, sort_keys=True)

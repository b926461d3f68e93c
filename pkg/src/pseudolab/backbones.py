"""Backbone facade: iterative classifiers with checkpoint observation.

A backbone is any classifier trained in rounds or epochs whose per-checkpoint
class probabilities on a fixed probe set can be observed while it trains.
Three kinds are provided: gradient-boosted trees (the default for tabular
work), a softmax linear model, and a small MLP, plus seed-varied bootstrap
ensembles for uncertainty estimates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import boosting, sgd
from .data import Dataset

CheckpointObserver = Callable[[int, np.ndarray], None]

BACKBONE_KINDS = ("gradient_boosted_trees", "sgd_linear", "sgd_mlp")


class DegenerateTrainingError(RuntimeError):
    """Training set holds fewer than two classes."""


class NumericTrainingError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "gradient_boosted_trees"
    rounds_or_epochs: int = 100
    learning_rate: float = 0.3
    tree_depth: int = 4
    min_child_weight: float = 1.0
    hidden_width: int = 32
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in BACKBONE_KINDS:
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        if self.rounds_or_epochs < 1:
            raise ValueError("rounds_or_epochs must be at least 1")
        if not np.isfinite(self.learning_rate) or self.learning_rate <= 0:
            raise ValueError("learning_rate must be finite and positive")
        if self.tree_depth < 1 or self.hidden_width < 1 or self.batch_size < 1:
            raise ValueError("tree_depth, hidden_width and batch_size must be positive")
        if self.min_child_weight < 0:
            raise ValueError("min_child_weight must be non-negative")


@dataclass
class Model:
    """A fitted backbone; prediction rows always sum to one."""

    kind: str
    class_count: int
    seed: int
    impl: object
    n_features: int | None = None

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.n_features is not None and X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return self.impl.predict_proba(X)  # type: ignore[attr-defined]


@dataclass
class Ensemble:
    members: list[Model]

    def __post_init__(self) -> None:
        kinds = {m.kind for m in self.members}
        counts = {m.class_count for m in self.members}
        if len(kinds) != 1 or len(counts) != 1:
            raise ValueError("ensemble members must share backbone kind and class_count")

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def class_count(self) -> int:
        return self.members[0].class_count


def train_with_checkpoints(
    train: Dataset,
    probe: Dataset | None,
    config: BackboneConfig,
    observer: CheckpointObserver | None = None,
) -> Model:
    """Train from scratch, invoking ``observer`` after each of the E checkpoints.

    The observer sees the probability matrix of the current checkpoint over
    the probe set; the returned model equals the final checkpoint. Passing
    ``probe=None`` skips checkpoint evaluation entirely (observer must then
    be None too).
    """
    if train.labels is None or train.n_samples == 0:
        raise ValueError("training set must be non-empty and labeled")
    if observer is not None and probe is None:
        raise ValueError("an observer requires a probe set")
    if probe is not None and probe.n_features != train.n_features:
        raise ValueError("probe feature count differs from training set")
    present = np.unique(train.labels)
    if present.size < 2:
        raise DegenerateTrainingError(
            f"training set holds a single class ({int(present[0])}); cannot fit"
        )
    X = train.features
    y = train.labels
    probe_X = None if probe is None else probe.features
    C = train.class_count
    try:
        if config.kind == "gradient_boosted_trees":
            impl = boosting.train_boosted_trees(
                X,
                y,
                C,
                n_rounds=config.rounds_or_epochs,
                learning_rate=config.learning_rate,
                max_depth=config.tree_depth,
                min_child_weight=config.min_child_weight,
                probe=probe_X,
                observer=observer,
            )
        elif config.kind == "sgd_linear":
            impl = sgd.train_linear_sgd(
                X, y, C, config.rounds_or_epochs, config.learning_rate,
                config.batch_size, config.seed, probe=probe_X, observer=observer,
            )
        else:
            impl = sgd.train_mlp_sgd(
                X, y, C, config.rounds_or_epochs, config.learning_rate,
                config.batch_size, config.hidden_width, config.seed,
                probe=probe_X, observer=observer,
            )
    except FloatingPointError as exc:
        raise NumericTrainingError(str(exc)) from exc
    return Model(kind=config.kind, class_count=C, seed=config.seed, impl=impl, n_features=train.n_features)


def predict_proba(model: Model, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    probs = model.predict_proba(X)
    if probs.shape != (X.shape[0], model.class_count):
        raise ValueError("prediction shape mismatch")
    return probs


def _bootstrap_indices(n: int, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # redraw until at least two classes survive the resample
    for _ in range(100):
        idx = rng.integers(0, n, size=n)
        if np.unique(labels[idx]).size >= 2:
            return idx
    return np.arange(n)


def train_ensemble(
    train: Dataset,
    k: int,
    config: BackboneConfig,
    bootstrap: bool = True,
) -> Ensemble:
    """Train ``k`` members with seeds ``config.seed + 0 .. + (k-1)``.

    Bootstrap resampling of the training set gives member diversity for the
    deterministic tree backbone; disable it to get identical tree members.
    """
    if k < 2:
        raise ValueError("ensemble size must be at least 2")
    members = []
    for i in range(k):
        member_seed = config.seed + i
        member_config = BackboneConfig(
            kind=config.kind,
            rounds_or_epochs=config.rounds_or_epochs,
            learning_rate=config.learning_rate,
            tree_depth=config.tree_depth,
            min_child_weight=config.min_child_weight,
            hidden_width=config.hidden_width,
            batch_size=config.batch_size,
            seed=member_seed,
        )
        member_train = train
        if bootstrap:
            rng = np.random.default_rng(member_seed)
            idx = _bootstrap_indices(train.n_samples, train.labels, rng)
            member_train = train.subset(idx)
        members.append(train_with_checkpoints(member_train, None, member_config, None))
    return Ensemble(members)


def ensemble_uncertainty(ensemble: Ensemble, X: np.ndarray) -> np.ndarray:
    """Per-sample, per-class population standard deviation across members."""
    preds = np.stack([predict_proba(m, X) for m in ensemble.members], axis=0)
    return preds.std(axis=0, ddof=0)


# --- serialization ---------------------------------------------------------

_FORMAT = "pseudolab-model"
_VERSION = 1


def _tree_to_lists(tree: boosting.Tree) -> dict:
    return {
        "feature": tree.feature.tolist(),
        "threshold": tree.threshold.tolist(),
        "left": tree.left.tolist(),
        "right": tree.right.tolist(),
        "value": tree.value.tolist(),
    }


def _tree_from_lists(d: dict) -> boosting.Tree:
    return boosting.Tree(
        feature=np.asarray(d["feature"], dtype=np.int32),
        threshold=np.asarray(d["threshold"], dtype=np.float64),
        left=np.asarray(d["left"], dtype=np.int32),
        right=np.asarray(d["right"], dtype=np.int32),
        value=np.asarray(d["value"], dtype=np.float64),
    )


def _binary_to_dict(m: boosting.BinaryBoostedModel) -> dict:
    return {
        "init_margin": m.init_margin,
        "learning_rate": m.learning_rate,
        "trees": [_tree_to_lists(t) for t in m.trees],
    }


def _binary_from_dict(d: dict) -> boosting.BinaryBoostedModel:
    return boosting.BinaryBoostedModel(
        init_margin=float(d["init_margin"]),
        learning_rate=float(d["learning_rate"]),
        trees=[_tree_from_lists(t) for t in d["trees"]],
    )


def model_to_blob(model: Model) -> dict:
    """A JSON-serializable dict whose round trip preserves predictions bit-exactly."""
    blob = {
        "format": _FORMAT,
        "version": _VERSION,
        "kind": model.kind,
        "class_count": model.class_count,
        "seed": model.seed,
        "n_features": model.n_features,
    }
    impl = model.impl
    if isinstance(impl, boosting.BinaryBoostedModel):
        blob["params"] = {"binary": _binary_to_dict(impl)}
    elif isinstance(impl, boosting.OneVsRestBoostedModel):
        blob["params"] = {"one_vs_rest": [_binary_to_dict(m) for m in impl.members]}
    elif isinstance(impl, sgd.LinearSoftmaxModel):
        blob["params"] = {"weights": impl.weights.tolist(), "bias": impl.bias.tolist()}
    elif isinstance(impl, sgd.MlpModel):
        blob["params"] = {
            "w1": impl.w1.tolist(), "b1": impl.b1.tolist(),
            "w2": impl.w2.tolist(), "b2": impl.b2.tolist(),
        }
    else:
        raise TypeError(f"cannot serialize backbone impl {type(impl)!r}")
    return blob


def model_from_blob(blob: dict) -> Model:
    if blob.get("format") != _FORMAT or blob.get("version") != _VERSION:
        raise ValueError("unrecognized model blob header")
    params = blob["params"]
    impl: object
    if "binary" in params:
        impl = _binary_from_dict(params["binary"])
    elif "one_vs_rest" in params:
        impl = boosting.OneVsRestBoostedModel([_binary_from_dict(m) for m in params["one_vs_rest"]])
    elif "weights" in params:
        impl = sgd.LinearSoftmaxModel(
            np.asarray(params["weights"], dtype=np.float64),
            np.asarray(params["bias"], dtype=np.float64),
        )
    else:
        impl = sgd.MlpModel(
            np.asarray(params["w1"], dtype=np.float64),
            np.asarray(params["b1"], dtype=np.float64),
            np.asarray(params["w2"], dtype=np.float64),
            np.asarray(params["b2"], dtype=np.float64),
        )
    n_features = blob.get("n_features")
    return Model(
        kind=blob["kind"],
        class_count=int(blob["class_count"]),
        seed=int(blob["seed"]),
        impl=impl,
        n_features=None if n_features is None else int(n_features),
    )


def save_model(model: Model, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_blob(model), fh)


def load_model(path: str) -> Model:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_blob(json.load(fh))

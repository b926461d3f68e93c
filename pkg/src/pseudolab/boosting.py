"""Gradient-boosted decision trees with per-round checkpoint predictions.

Second-order boosting on the logistic loss: each round fits a regression tree
to the loss gradients with Newton leaf weights w = -G / (H + lambda). Split
search is exact greedy over midpoints, fully vectorized per node, and free of
randomness, so training is bit-reproducible. Binary problems use a single
sigmoid model; multi-class trains one-vs-rest forests round-synchronously so
a checkpoint still means "one boosting round".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

PROB_CLIP = 1e-7  # probabilities clipped to [PROB_CLIP, 1 - PROB_CLIP] before logs


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_loss(margins: np.ndarray, y: np.ndarray) -> float:
    """Mean logistic loss of raw margins against 0/1 targets."""
    p = np.clip(sigmoid(margins), PROB_CLIP, 1.0 - PROB_CLIP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


@dataclass
class Tree:
    """Flat-array binary tree; feature < 0 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0], dtype=np.float64)
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            f = self.feature[node]
            if f < 0:
                out[idx] = self.value[node]
                continue
            go_left = X[idx, f] < self.threshold[node]
            stack.append((self.left[node], idx[go_left]))
            stack.append((self.right[node], idx[~go_left]))
        return out


class _TreeBuilder:
    def __init__(
        self,
        max_depth: int,
        reg_lambda: float,
        min_child_weight: float = 0.0,
        min_gain: float = 1e-12,
    ):
        self.max_depth = max_depth
        self.reg_lambda = reg_lambda
        self.min_child_weight = min_child_weight
        self.min_gain = min_gain
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def _new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def build(self, X: np.ndarray, g: np.ndarray, h: np.ndarray) -> Tree:
        root = self._new_node()
        self._split(root, X, np.arange(X.shape[0]), g, h, depth=0)
        return Tree(
            feature=np.asarray(self.feature, dtype=np.int32),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            left=np.asarray(self.left, dtype=np.int32),
            right=np.asarray(self.right, dtype=np.int32),
            value=np.asarray(self.value, dtype=np.float64),
        )

    def _split(self, node: int, X: np.ndarray, idx: np.ndarray, g: np.ndarray, h: np.ndarray, depth: int) -> None:
        G = g[idx].sum()
        H = h[idx].sum()
        lam = self.reg_lambda
        if depth >= self.max_depth or idx.shape[0] < 2:
            self.value[node] = -G / (H + lam)
            return
        parent_score = G * G / (H + lam)
        best_gain = self.min_gain
        best: tuple[int, float] | None = None
        for f in range(X.shape[1]):
            xs = X[idx, f]
            order = np.argsort(xs, kind="stable")
            xv = xs[order]
            if xv[0] == xv[-1]:
                continue
            cg = np.cumsum(g[idx][order])
            ch = np.cumsum(h[idx][order])
            gl, hl = cg[:-1], ch[:-1]
            gr, hr = G - gl, H - hl
            gain = gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent_score
            gain[xv[1:] == xv[:-1]] = -np.inf
            # children below the hessian floor cannot host a split
            gain[(hl < self.min_child_weight) | (hr < self.min_child_weight)] = -np.inf
            pos = int(np.argmax(gain))
            if gain[pos] > best_gain:
                best_gain = float(gain[pos])
                best = (f, float((xv[pos] + xv[pos + 1]) / 2.0))
        if best is None:
            self.value[node] = -G / (H + lam)
            return
        f, thr = best
        self.feature[node] = f
        self.threshold[node] = thr
        go_left = X[idx, f] < thr
        left = self._new_node()
        right = self._new_node()
        self.left[node] = left
        self.right[node] = right
        self._split(left, X, idx[go_left], g, h, depth + 1)
        self._split(right, X, idx[~go_left], g, h, depth + 1)


@dataclass
class BinaryBoostedModel:
    """Additive logistic model: margin = init_margin + lr * sum(tree predictions)."""

    init_margin: float
    learning_rate: float
    trees: list[Tree]

    def margins(self, X: np.ndarray) -> np.ndarray:
        out = np.full(X.shape[0], self.init_margin, dtype=np.float64)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        p = sigmoid(self.margins(X))
        return np.stack([1.0 - p, p], axis=1)


@dataclass
class OneVsRestBoostedModel:
    """One binary booster per class; probabilities are normalized sigmoids."""

    members: list[BinaryBoostedModel]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        scores = np.stack([sigmoid(m.margins(X)) for m in self.members], axis=1)
        return scores / scores.sum(axis=1, keepdims=True)


def _init_margin(y: np.ndarray) -> float:
    p = float(np.clip(np.mean(y), PROB_CLIP, 1.0 - PROB_CLIP))
    return float(np.log(p / (1.0 - p)))


def train_boosted_trees(
    X: np.ndarray,
    y: np.ndarray,
    class_count: int,
    n_rounds: int,
    learning_rate: float = 0.3,
    max_depth: int = 4,
    reg_lambda: float = 1.0,
    min_child_weight: float = 1.0,
    probe: np.ndarray | None = None,
    observer: Callable[[int, np.ndarray], None] | None = None,
) -> BinaryBoostedModel | OneVsRestBoostedModel:
    """Train for ``n_rounds`` rounds, reporting probe probabilities each round.

    The observer receives (round_index, probe probability matrix) exactly
    ``n_rounds`` times; the matrix has one column per class and rows on the
    probability simplex.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if class_count == 2:
        targets = [y.astype(np.float64)]
    else:
        targets = [(y == c).astype(np.float64) for c in range(class_count)]
    members = [
        BinaryBoostedModel(init_margin=_init_margin(t), learning_rate=learning_rate, trees=[])
        for t in targets
    ]
    f_train = [np.full(X.shape[0], m.init_margin) for m in members]
    f_probe = None
    if probe is not None:
        f_probe = [np.full(probe.shape[0], m.init_margin) for m in members]

    for e in range(1, n_rounds + 1):
        for c, (member, t) in enumerate(zip(members, targets)):
            p = sigmoid(f_train[c])
            g = p - t
            h = p * (1.0 - p)
            tree = _TreeBuilder(max_depth, reg_lambda, min_child_weight).build(X, g, h)
            member.trees.append(tree)
            f_train[c] += learning_rate * tree.predict(X)
            if not np.isfinite(f_train[c]).all():
                raise FloatingPointError(f"non-finite training margin at checkpoint {e}")
            if f_probe is not None:
                f_probe[c] += learning_rate * tree.predict(probe)
        if observer is not None and f_probe is not None:
            if class_count == 2:
                pp = sigmoid(f_probe[0])
                mat = np.stack([1.0 - pp, pp], axis=1)
            else:
                scores = np.stack([sigmoid(fp) for fp in f_probe], axis=1)
                mat = scores / scores.sum(axis=1, keepdims=True)
            observer(e, mat)

    if class_count == 2:
        return members[0]
    return OneVsRestBoostedModel(members)

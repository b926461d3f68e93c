"""Mini-batch SGD classifiers: softmax linear model and one-hidden-layer MLP.

Both expose an analytic loss gradient (checked against finite differences in
the test suite) and emit one checkpoint per epoch. The MLP uses tanh so the
loss surface is smooth everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .boosting import PROB_CLIP


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _one_hot(y: np.ndarray, class_count: int) -> np.ndarray:
    out = np.zeros((y.shape[0], class_count))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def cross_entropy(probs: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(probs[np.arange(y.shape[0]), y], PROB_CLIP, 1.0 - PROB_CLIP)
    return float(-np.mean(np.log(p)))


@dataclass
class LinearSoftmaxModel:
    weights: np.ndarray  # (d, C)
    bias: np.ndarray  # (C,)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return softmax(X @ self.weights + self.bias)


@dataclass
class MlpModel:
    w1: np.ndarray  # (d, hidden)
    b1: np.ndarray
    w2: np.ndarray  # (hidden, C)
    b2: np.ndarray

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        hidden = np.tanh(X @ self.w1 + self.b1)
        return softmax(hidden @ self.w2 + self.b2)


def linear_loss_and_grad(
    weights: np.ndarray, bias: np.ndarray, X: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy and its exact gradient for the linear model."""
    probs = softmax(X @ weights + bias)
    delta = (probs - _one_hot(y, weights.shape[1])) / X.shape[0]
    return cross_entropy(probs, y), X.T @ delta, delta.sum(axis=0)


def mlp_loss_and_grad(
    model: MlpModel, X: np.ndarray, y: np.ndarray
) -> tuple[float, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """Mean cross-entropy and exact gradients for all four MLP parameter blocks."""
    a1 = X @ model.w1 + model.b1
    hidden = np.tanh(a1)
    probs = softmax(hidden @ model.w2 + model.b2)
    n = X.shape[0]
    delta2 = (probs - _one_hot(y, model.w2.shape[1])) / n
    gw2 = hidden.T @ delta2
    gb2 = delta2.sum(axis=0)
    delta1 = (delta2 @ model.w2.T) * (1.0 - hidden**2)
    gw1 = X.T @ delta1
    gb1 = delta1.sum(axis=0)
    return cross_entropy(probs, y), (gw1, gb1, gw2, gb2)


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def train_linear_sgd(
    X: np.ndarray,
    y: np.ndarray,
    class_count: int,
    epochs: int,
    learning_rate: float,
    batch_size: int,
    seed: int,
    probe: np.ndarray | None = None,
    observer: Callable[[int, np.ndarray], None] | None = None,
) -> LinearSoftmaxModel:
    rng = np.random.default_rng(seed)
    model = LinearSoftmaxModel(np.zeros((X.shape[1], class_count)), np.zeros(class_count))
    for e in range(1, epochs + 1):
        for batch in _epoch_batches(X.shape[0], batch_size, rng):
            loss, gw, gb = linear_loss_and_grad(model.weights, model.bias, X[batch], y[batch])
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at checkpoint {e}")
            model.weights -= learning_rate * gw
            model.bias -= learning_rate * gb
        if observer is not None and probe is not None:
            observer(e, model.predict_proba(probe))
    return model


def train_mlp_sgd(
    X: np.ndarray,
    y: np.ndarray,
    class_count: int,
    epochs: int,
    learning_rate: float,
    batch_size: int,
    hidden_width: int,
    seed: int,
    probe: np.ndarray | None = None,
    observer: Callable[[int, np.ndarray], None] | None = None,
) -> MlpModel:
    rng = np.random.default_rng(seed)
    d = X.shape[1]
    model = MlpModel(
        w1=rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, hidden_width)),
        b1=np.zeros(hidden_width),
        w2=rng.normal(0.0, 1.0 / np.sqrt(hidden_width), size=(hidden_width, class_count)),
        b2=np.zeros(class_count),
    )
    for e in range(1, epochs + 1):
        for batch in _epoch_batches(X.shape[0], batch_size, rng):
            loss, (gw1, gb1, gw2, gb2) = mlp_loss_and_grad(model, X[batch], y[batch])
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at checkpoint {e}")
            model.w1 -= learning_rate * gw1
            model.b1 -= learning_rate * gb1
            model.w2 -= learning_rate * gw2
            model.b2 -= learning_rate * gb2
        if observer is not None and probe is not None:
            observer(e, model.predict_proba(probe))
    return model

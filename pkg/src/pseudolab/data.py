"""Synthetic dataset generators, label-noise injection, CSV loading, and splits.

All generators are pure functions of their arguments (seed included) and the
datasets they emit are immutable, so they are safe to share across threads.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .seeding import rng_for


def round_half_up(x: float) -> int:
    """Round with ties away from zero (0.5 -> 1), unlike banker's rounding."""
    return int(math.floor(x + 0.5))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """A feature matrix with optional integer class labels.

    Invariants enforced at construction: features are finite and labels (when
    present) lie in ``[0, class_count)``. Boundary splits may carve empty
    parts, so zero samples are representable; training entry points reject
    them separately.
    """

    features: np.ndarray
    labels: np.ndarray | None
    class_count: int
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if not np.isfinite(feats).all():
            raise ValueError("features contain NaN or Inf")
        if self.class_count < 2:
            raise ValueError("class_count must be at least 2")
        object.__setattr__(self, "features", _frozen(feats))
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (feats.shape[0],):
                raise ValueError("labels must be a vector matching n_samples")
            if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
                raise ValueError("labels out of range for class_count")
            object.__setattr__(self, "labels", _frozen(labels))
        if self.feature_names is not None:
            names = tuple(self.feature_names)
            if len(names) != feats.shape[1]:
                raise ValueError("feature_names length mismatch")
            object.__setattr__(self, "feature_names", names)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        labels = None if self.labels is None else self.labels[indices]
        return Dataset(self.features[indices], labels, self.class_count, self.feature_names)

    def without_labels(self) -> "Dataset":
        return Dataset(self.features, None, self.class_count, self.feature_names)

    def with_labels(self, labels: np.ndarray) -> "Dataset":
        return Dataset(self.features, labels, self.class_count, self.feature_names)


@dataclass(frozen=True)
class Split:
    """Labeled/unlabeled/test partition of a classification problem.

    The unlabeled part carries no labels; its ground truth is retained
    separately so synthetic runs can score pseudo-label accuracy.
    """

    labeled: Dataset
    unlabeled: Dataset
    test: Dataset
    seed: int
    unlabeled_ground_truth: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.labeled.labels is None:
            raise ValueError("labeled part must carry labels")
        if self.test.labels is None:
            raise ValueError("test part must carry labels")
        counts = {self.labeled.class_count, self.unlabeled.class_count, self.test.class_count}
        if len(counts) != 1:
            raise ValueError("class_count must agree across split parts")
        if self.unlabeled_ground_truth is not None:
            gt = np.asarray(self.unlabeled_ground_truth, dtype=np.int64)
            if gt.shape != (self.unlabeled.n_samples,):
                raise ValueError("ground truth length mismatch with unlabeled part")
            object.__setattr__(self, "unlabeled_ground_truth", _frozen(gt))

    @property
    def class_count(self) -> int:
        return self.labeled.class_count


@dataclass(frozen=True)
class NoiseReport:
    """Record of which labels were flipped and how."""

    flipped_indices: frozenset[int]
    p_corrupt: float
    seed: int
    original_labels: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]


def generate_two_quadrants(n: int, seed: int) -> Dataset:
    """Two uniform square clusters in opposite quadrants, binary labels.

    Quadrant ``(0,1]x(0,1]`` is class 1 and ``[-1,0)x[-1,0)`` is class 0; each
    sample picks its quadrant with probability 1/2. No sample ever lies on a
    quadrant boundary: zero coordinates are redrawn.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    rng = rng_for(seed, "two_quadrants")
    labels = rng.integers(0, 2, size=n)
    coords = rng.uniform(0.0, 1.0, size=(n, 2))
    # uniform(0, 1) can emit exactly 0.0, which would sit on the boundary
    while True:
        on_boundary = coords == 0.0
        if not on_boundary.any():
            break
        coords[on_boundary] = rng.uniform(0.0, 1.0, size=int(on_boundary.sum()))
    signs = np.where(labels[:, None] == 1, 1.0, -1.0)
    return Dataset(coords * signs, labels, class_count=2, feature_names=("x0", "x1"))


def _moons_points(labels: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    t = rng.uniform(0.0, np.pi, size=labels.shape[0])
    x = np.where(labels == 0, np.cos(t), 1.0 - np.cos(t))
    y = np.where(labels == 0, np.sin(t), 0.5 - np.sin(t))
    pts = np.stack([x, y], axis=1)
    if std > 0:
        pts = pts + rng.normal(0.0, std, size=pts.shape)
    return pts


def generate_two_moons(
    n_labeled_per_class: int,
    n_unlab: int,
    n_test: int,
    std: float,
    seed: int,
) -> Split:
    """Two interleaving half circles with Gaussian perturbation of scale ``std``.

    Class 0 sits on the unit arc centered at the origin, class 1 on the arc
    centered at (1, 0.5); the labeled part holds exactly
    ``n_labeled_per_class`` samples of each class.
    """
    if n_labeled_per_class < 1 or n_unlab < 1 or n_test < 1:
        raise ValueError("all counts must be at least 1")
    if std < 0:
        raise ValueError("std must be non-negative")
    rng = rng_for(seed, "two_moons")
    lab_labels = np.repeat(np.arange(2), n_labeled_per_class)
    lab = Dataset(_moons_points(lab_labels, std, rng), lab_labels, 2, ("x0", "x1"))
    unlab_labels = rng.integers(0, 2, size=n_unlab)
    unlab = Dataset(_moons_points(unlab_labels, std, rng), None, 2, ("x0", "x1"))
    test_labels = rng.integers(0, 2, size=n_test)
    test = Dataset(_moons_points(test_labels, std, rng), test_labels, 2, ("x0", "x1"))
    return Split(lab, unlab, test, seed, unlabeled_ground_truth=unlab_labels)


def inject_symmetric_label_noise(
    labels: np.ndarray,
    p_corrupt: float,
    class_count: int,
    seed: int,
) -> tuple[np.ndarray, NoiseReport]:
    """Flip ``round(p_corrupt * n)`` labels, each to a uniformly chosen other class.

    Indices are drawn uniformly without replacement; every flipped label is
    guaranteed to differ from its original.
    """
    if not 0.0 <= p_corrupt < 0.5:
        raise ValueError("p_corrupt must lie in [0, 0.5)")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= class_count):
        raise ValueError("labels out of range for class_count")
    n = labels.shape[0]
    n_flip = round_half_up(p_corrupt * n)
    rng = rng_for(seed, "label_noise")
    flip_idx = rng.choice(n, size=n_flip, replace=False) if n_flip else np.empty(0, dtype=np.int64)
    noisy = labels.copy()
    if n_flip:
        # draw an offset in [1, C) so the new label always differs
        offsets = rng.integers(1, class_count, size=n_flip)
        noisy[flip_idx] = (labels[flip_idx] + offsets) % class_count
    report = NoiseReport(
        flipped_indices=frozenset(int(i) for i in flip_idx),
        p_corrupt=p_corrupt,
        seed=seed,
        original_labels=_frozen(labels.copy()),
    )
    return noisy, report


def _stratified_take(labels: np.ndarray, total: int, rng: np.random.Generator) -> np.ndarray:
    """Pick ``total`` indices whose class proportions track ``labels`` within one sample."""
    n = labels.shape[0]
    classes, counts = np.unique(labels, return_counts=True)
    exact = counts * (total / n)
    base = np.floor(exact).astype(int)
    remainder = exact - base
    short = total - int(base.sum())
    if short:
        # largest-remainder apportionment; ties broken by class index
        order = np.lexsort((classes, -remainder))
        base[order[:short]] += 1
    taken = []
    for cls, k in zip(classes, base):
        members = np.flatnonzero(labels == cls)
        perm = rng.permutation(members.shape[0])
        taken.append(members[perm[:k]])
    return np.sort(np.concatenate(taken)) if taken else np.empty(0, dtype=np.int64)


def split_lab_unlab_test(
    dataset: Dataset,
    lab_fraction: float,
    unlab_fraction: float,
    seed: int,
    test: Dataset | None = None,
) -> Split:
    """Partition ``dataset`` into labeled/unlabeled(/test) parts.

    The labeled part is stratified by class when labels are available. When an
    external ``test`` set is supplied the two fractions may sum to 1 and no
    internal test part is carved out.
    """
    if lab_fraction < 0 or unlab_fraction < 0 or lab_fraction + unlab_fraction > 1 + 1e-12:
        raise ValueError("fractions must be non-negative and sum to at most 1")
    if dataset.labels is None:
        raise ValueError("dataset must be labeled to produce a split")
    n = dataset.n_samples
    n_lab = round_half_up(lab_fraction * n)
    n_unlab = round_half_up(unlab_fraction * n)
    if n_lab + n_unlab > n:
        n_unlab = n - n_lab
    rng = rng_for(seed, "split")
    lab_idx = _stratified_take(dataset.labels, n_lab, rng)
    rest = np.setdiff1d(np.arange(n), lab_idx, assume_unique=True)
    perm = rng.permutation(rest.shape[0])
    unlab_idx = np.sort(rest[perm[:n_unlab]])
    test_idx = np.sort(rest[perm[n_unlab:]])

    labeled = dataset.subset(lab_idx)
    unlab_ds = dataset.subset(unlab_idx)
    gt = unlab_ds.labels
    unlabeled = unlab_ds.without_labels()
    if test is None:
        test = dataset.subset(test_idx)
    elif test_idx.size:
        raise ValueError("external test set given but fractions leave samples unused")
    return Split(labeled, unlabeled, test, seed, unlabeled_ground_truth=gt)


class CsvFormatError(ValueError):
    """Raised when a CSV cell or row cannot be interpreted."""


def load_csv(
    path: str,
    label_column: str | int,
    has_header: bool = True,
) -> tuple[Dataset, dict[str, int] | None]:
    """Load a UTF-8 comma-separated file into a Dataset.

    One column (by header name or zero-based index) holds labels, which must
    parse as integers or map through a categorical dictionary built from the
    order of first appearance. All other cells must be finite numbers. Returns
    the dataset and the string->index label mapping (None for integer labels).
    """
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise CsvFormatError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if r]
    if not rows:
        raise CsvFormatError(f"{path} contains no data rows")

    header: list[str] | None = None
    if has_header:
        header, rows = rows[0], rows[1:]
        if not rows:
            raise CsvFormatError(f"{path} has a header but no data rows")

    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise CsvFormatError(f"row {i} has {len(row)} cells, expected {width}")

    if isinstance(label_column, str):
        if header is None:
            raise CsvFormatError("label column referenced by name but file has no header")
        try:
            label_idx = header.index(label_column)
        except ValueError:
            raise CsvFormatError(f"label column {label_column!r} not found in header") from None
    else:
        label_idx = int(label_column)
        if not 0 <= label_idx < width:
            raise CsvFormatError(f"label column index {label_idx} out of range for {width} columns")

    # first pass: build the categorical dictionary if any label is non-integer
    raw_labels = [row[label_idx].strip() for row in rows]
    mapping: dict[str, int] | None = None
    if not all(_is_int(cell) for cell in raw_labels):
        mapping = {}
        for cell in raw_labels:
            if cell not in mapping:
                mapping[cell] = len(mapping)
        labels = np.array([mapping[cell] for cell in raw_labels], dtype=np.int64)
    else:
        labels = np.array([int(cell) for cell in raw_labels], dtype=np.int64)
        low = labels.min()
        if low != 0:
            labels = labels - low
    class_count = int(labels.max()) + 1
    if class_count < 2:
        raise CsvFormatError("label column holds a single class")

    feat_cols = [j for j in range(width) if j != label_idx]
    features = np.empty((len(rows), len(feat_cols)), dtype=np.float64)
    for i, row in enumerate(rows):
        for out_j, j in enumerate(feat_cols):
            cell = row[j].strip()
            try:
                value = float(cell)
            except ValueError:
                raise CsvFormatError(f"non-numeric feature cell at row {i}, column {j}: {cell!r}") from None
            if not math.isfinite(value):
                raise CsvFormatError(f"non-finite feature cell at row {i}, column {j}: {cell!r}")
            features[i, out_j] = value

    if header is not None:
        names = tuple(header[j] for j in feat_cols)
    else:
        names = tuple(f"f{j}" for j in feat_cols)
    return Dataset(features, labels, class_count, names), mapping


def _is_int(cell: str) -> bool:
    try:
        int(cell)
        return True
    except ValueError:
        return False

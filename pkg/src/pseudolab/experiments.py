"""Experiment harness: paired-seed method comparisons at desk scale.

Every experiment expands into a list of independent run tasks, one per
(configuration, seed index). All methods compared at a given setting and seed
index share the identical data split and noise realization, so differences
are paired. Tasks are pure functions of the experiment spec, which makes the
emitted tables byte-identical across re-runs and across worker counts.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .backbones import BackboneConfig, train_with_checkpoints
from .data import (
    Dataset,
    Split,
    generate_two_moons,
    generate_two_quadrants,
    inject_symmetric_label_noise,
    load_csv,
    round_half_up,
    split_lab_unlab_test,
)
from .pipeline import PipelineConfig, evaluate, run
from .plabelers import PlabelerConfig
from .results import RunResult, RunRow
from .seeding import derive_seed
from .selectors import AdaptiveThreshold, FixedThreshold, SelectorConfig

DEFAULT_NOISE_GRID = (0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45)
DEFAULT_PERCENTILES = (0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65)
DEFAULT_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)

NOISE_SWEEP_METHODS = ("supervised", "pl", "pl+dips", "pl+small_loss", "pl+fluctuation")
ABLATION_METHODS = ("dips", "a1", "a2", "a3")
TWO_MOONS_METHODS = ("supervised", "pl", "pl+dips")
EFFICIENCY_METHODS = ("pl", "pl+dips", "ups", "ups+dips")
CSV_METHODS = (
    "supervised",
    "pl", "pl+dips",
    "ups", "ups+dips",
    "flexmatch", "flexmatch+dips",
    "sla_lite", "sla_lite+dips",
)

THRESHOLD_CONFIGS = {
    "default": (0.8, AdaptiveThreshold()),
    "aggressive": (0.9, FixedThreshold(0.1)),
    "permissive": (0.5, FixedThreshold(0.2)),
}

_PLABELER_BY_BASE = {"pl": "greedy", "ups": "ups", "flexmatch": "flexmatch", "sla_lite": "sla_lite"}
_SELECTOR_BY_SUFFIX = {"dips": "dips", "small_loss": "small_loss", "fluctuation": "fluctuation"}


@dataclass(frozen=True)
class ExperimentSpec:
    """Declarative description of one experiment command."""

    kind: str
    seeds: int = 20
    base_seed: int = 0
    iterations: int = 5
    methods: tuple[str, ...] = ()
    noise_grid: tuple[float, ...] = DEFAULT_NOISE_GRID
    n_pool: int = 1000
    n_test: int = 1000
    lab_fraction: float = 0.1
    unlab_fraction: float = 0.9
    corrupt_unlabeled: bool = False
    backbone_kind: str = "gradient_boosted_trees"
    rounds_or_epochs: int = 100
    backbone_learning_rate: float = 0.3
    tree_depth: int = 4
    min_child_weight: float = 1.0
    tau_p: float = 0.8
    tau_conf: float = 0.8
    tau_al_fixed: float | None = None
    tau_al_factor: float = 0.75
    tau_al_offset_min: bool = False
    keep_fraction: float = 0.8
    reject_percentile: float = 80.0
    hidden_width: int = 32
    batch_size: int = 32
    ensemble_size: int = 10
    versions: tuple[str, ...] = ("grow", "rebuild")
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    efficiency_noise: float = 0.2
    percentiles: tuple[float, ...] = DEFAULT_PERCENTILES
    threshold_labels: tuple[str, ...] = ("default", "aggressive", "permissive")
    moons_labeled_per_class: int = 100
    moons_unlab: int = 800
    moons_test: int = 1000
    moons_std: float = 0.4
    csv_path: str | None = None
    csv_label_column: str | int = -1
    csv_has_header: bool = True
    csv_test_fraction: float = 0.2
    csv_p_corrupt: float = 0.0
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.seeds < 1:
            raise ValueError("at least one seed is required")
        if self.kind in ("noise_sweep", "ablation", "threshold_sweep", "percentile_sweep", "version_compare"):
            if not self.noise_grid:
                raise ValueError("noise grid must be non-empty")
            bad = [p for p in self.noise_grid if not 0.0 <= p < 0.5]
            if bad:
                raise ValueError(f"corruption proportions must lie in [0, 0.5): {bad}")

    def echo(self) -> dict:
        # jobs is a scheduling knob, not part of the experiment's identity
        doc = asdict(self)
        doc.pop("jobs", None)
        return doc


@dataclass(frozen=True)
class _Task:
    method: str
    seed_index: int
    p_corrupt: float | None = None
    labeled_fraction: float | None = None
    version: str = "grow"
    threshold_config: str | None = None
    percentile: float | None = None


def _backbone(spec: ExperimentSpec) -> BackboneConfig:
    return BackboneConfig(
        kind=spec.backbone_kind,
        rounds_or_epochs=spec.rounds_or_epochs,
        learning_rate=spec.backbone_learning_rate,
        tree_depth=spec.tree_depth,
        min_child_weight=spec.min_child_weight,
        hidden_width=spec.hidden_width,
        batch_size=spec.batch_size,
    )


def _default_tau_al(spec: ExperimentSpec) -> FixedThreshold | AdaptiveThreshold:
    if spec.tau_al_fixed is not None:
        return FixedThreshold(spec.tau_al_fixed)
    return AdaptiveThreshold(factor=spec.tau_al_factor, offset_by_min=spec.tau_al_offset_min)


def _parse_method(method: str) -> tuple[str | None, str | None]:
    """Return (plabeler kind, selector kind); (None, None) is the supervised baseline."""
    if method == "supervised":
        return None, None
    base, _, suffix = method.partition("+")
    if base not in _PLABELER_BY_BASE:
        raise ValueError(f"unknown method {method!r}")
    if suffix and suffix not in _SELECTOR_BY_SUFFIX:
        raise ValueError(f"unknown selector suffix in method {method!r}")
    return _PLABELER_BY_BASE[base], _SELECTOR_BY_SUFFIX[suffix] if suffix else None


def _pipeline_config(spec: ExperimentSpec, task: _Task) -> PipelineConfig | None:
    """Translate a task's method string into a full pipeline configuration."""
    if task.method in ABLATION_METHODS:
        plabeler_kind, selector_kind = "greedy", "dips"
        at_init = task.method in ("dips", "a1")
        at_iters = task.method in ("dips", "a2")
    else:
        plabeler_kind, selector_kind = _parse_method(task.method)
        if plabeler_kind is None:
            return None
        at_init = at_iters = selector_kind is not None
        if selector_kind is None:
            selector_kind = "identity"

    tau_conf = spec.tau_conf
    tau_al_policy: FixedThreshold | AdaptiveThreshold = _default_tau_al(spec)
    percentile = None
    if task.threshold_config is not None:
        if task.threshold_config == "percentile":
            percentile = task.percentile
        else:
            tau_conf, tau_al_policy = THRESHOLD_CONFIGS[task.threshold_config]

    selector = SelectorConfig(
        kind=selector_kind,
        tau_conf=tau_conf,
        tau_conf_percentile=percentile,
        tau_al_policy=tau_al_policy,
        keep_fraction=spec.keep_fraction,
        reject_percentile=spec.reject_percentile,
    )
    plabeler = PlabelerConfig(
        kind=plabeler_kind,
        tau_p=spec.tau_p,
        ensemble_size=spec.ensemble_size,
    )
    return PipelineConfig(
        iterations=spec.iterations,
        plabeler=plabeler,
        selector=selector,
        backbone=_backbone(spec),
        dips_at_init=at_init,
        dips_at_iters=at_iters,
        version=task.version,
        seed=derive_seed(spec.base_seed, "pipeline", task.seed_index),
    )


def quadrant_split(spec: ExperimentSpec, seed_index: int, p_corrupt: float) -> Split:
    """Two-quadrant split with injected label noise, paired across methods."""
    pool = generate_two_quadrants(spec.n_pool, derive_seed(spec.base_seed, "data", seed_index))
    test = generate_two_quadrants(spec.n_test, derive_seed(spec.base_seed, "test", seed_index))
    split = split_lab_unlab_test(
        pool,
        spec.lab_fraction,
        spec.unlab_fraction,
        derive_seed(spec.base_seed, "split", seed_index),
        test=test,
    )
    noisy, _ = inject_symmetric_label_noise(
        split.labeled.labels,
        p_corrupt,
        split.class_count,
        derive_seed(spec.base_seed, "noise", seed_index, repr(float(p_corrupt))),
    )
    gt = split.unlabeled_ground_truth
    if spec.corrupt_unlabeled and p_corrupt > 0:
        gt, _ = inject_symmetric_label_noise(
            gt,
            p_corrupt,
            split.class_count,
            derive_seed(spec.base_seed, "unlab_noise", seed_index, repr(float(p_corrupt))),
        )
    return Split(
        split.labeled.with_labels(noisy),
        split.unlabeled,
        split.test,
        split.seed,
        unlabeled_ground_truth=gt,
    )


def nested_labeled_subset(labels: np.ndarray, fraction: float, permutation: np.ndarray) -> np.ndarray:
    """Stratified prefix subset: smaller fractions are nested inside larger ones.

    ``permutation`` fixes a per-seed ordering; per class the first
    round(fraction * n_class) entries (at least one) are taken, so the subset
    at p is contained in the subset at any p' > p.
    """
    labels = np.asarray(labels)
    taken = []
    for cls in np.unique(labels):
        members = permutation[labels[permutation] == cls]
        k = max(1, round_half_up(fraction * members.size))
        taken.append(members[:k])
    return np.sort(np.concatenate(taken))


def _split_for_task(spec: ExperimentSpec, task: _Task) -> Split:
    if spec.kind == "two_moons":
        return generate_two_moons(
            spec.moons_labeled_per_class,
            spec.moons_unlab,
            spec.moons_test,
            spec.moons_std,
            derive_seed(spec.base_seed, "moons", task.seed_index),
        )
    if spec.kind == "custom_csv":
        return _csv_split(spec, task.seed_index)
    p = task.p_corrupt if task.p_corrupt is not None else 0.0
    split = quadrant_split(spec, task.seed_index, p)
    if task.labeled_fraction is not None and task.labeled_fraction < 1.0:
        perm_rng = np.random.default_rng(derive_seed(spec.base_seed, "subset", task.seed_index))
        permutation = perm_rng.permutation(split.labeled.n_samples)
        keep = nested_labeled_subset(split.labeled.labels, task.labeled_fraction, permutation)
        split = Split(
            split.labeled.subset(keep),
            split.unlabeled,
            split.test,
            split.seed,
            unlabeled_ground_truth=split.unlabeled_ground_truth,
        )
    return split


_CSV_CACHE: dict[tuple, Dataset] = {}


def _csv_dataset(spec: ExperimentSpec) -> Dataset:
    key = (spec.csv_path, spec.csv_label_column, spec.csv_has_header)
    if key not in _CSV_CACHE:
        dataset, _ = load_csv(spec.csv_path, spec.csv_label_column, spec.csv_has_header)
        _CSV_CACHE[key] = dataset
    return _CSV_CACHE[key]


def _csv_split(spec: ExperimentSpec, seed_index: int) -> Split:
    dataset = _csv_dataset(spec)
    rest = 1.0 - spec.csv_test_fraction
    split = split_lab_unlab_test(
        dataset,
        spec.lab_fraction * rest,
        spec.unlab_fraction * rest,
        derive_seed(spec.base_seed, "csv_split", seed_index),
    )
    if spec.csv_p_corrupt > 0:
        noisy, _ = inject_symmetric_label_noise(
            split.labeled.labels,
            spec.csv_p_corrupt,
            split.class_count,
            derive_seed(spec.base_seed, "csv_noise", seed_index),
        )
        split = Split(
            split.labeled.with_labels(noisy),
            split.unlabeled,
            split.test,
            split.seed,
            unlabeled_ground_truth=split.unlabeled_ground_truth,
        )
    return split


def _execute(args: tuple[ExperimentSpec, _Task]) -> RunRow | tuple[str, str]:
    spec, task = args
    try:
        split = _split_for_task(spec, task)
        config = _pipeline_config(spec, task)
        if config is None:
            backbone = BackboneConfig(
                kind=spec.backbone_kind,
                rounds_or_epochs=spec.rounds_or_epochs,
                learning_rate=spec.backbone_learning_rate,
                tree_depth=spec.tree_depth,
                min_child_weight=spec.min_child_weight,
                seed=derive_seed(spec.base_seed, "supervised", task.seed_index),
            )
            model = train_with_checkpoints(split.labeled, None, backbone, None)
            accuracy = evaluate(model, split.test)
            pl_acc = None
        else:
            result = run(split, config)
            accuracy = result.history.records[-1].test_accuracy
            pl_acc = result.history.records[-1].pseudo_label_accuracy
        return RunRow(
            experiment=spec.kind,
            method=task.method,
            seed_index=task.seed_index,
            seed=derive_seed(spec.base_seed, "pipeline", task.seed_index),
            test_accuracy=accuracy,
            pseudo_label_accuracy=pl_acc,
            p_corrupt=task.p_corrupt,
            labeled_fraction=task.labeled_fraction,
            version=task.version if spec.kind == "version_compare" and task.method != "supervised" else None,
            threshold_config=task.threshold_config,
            percentile=task.percentile,
        )
    except Exception as exc:  # per-run failures are recorded, the sweep continues
        return (f"{task.method}/seed{task.seed_index}", f"{type(exc).__name__}: {exc}")


def _run_tasks(spec: ExperimentSpec, tasks: list[_Task]) -> tuple[list[RunRow], list[dict]]:
    args = [(spec, t) for t in tasks]
    if spec.jobs > 1:
        try:
            with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
                outcomes = list(pool.map(_execute, args))
        except (OSError, PermissionError) as exc:
            warnings.warn(f"worker pool unavailable ({exc}); running serially", RuntimeWarning)
            outcomes = [_execute(a) for a in args]
    else:
        outcomes = [_execute(a) for a in args]
    rows: list[RunRow] = []
    errors: list[dict] = []
    for out in outcomes:
        if isinstance(out, RunRow):
            rows.append(out)
        else:
            errors.append({"task": out[0], "error": out[1]})
    return rows, errors


def _finish(spec: ExperimentSpec, rows: list[RunRow], errors: list[dict], extras: dict) -> RunResult:
    if errors and not rows:
        raise RuntimeError(f"every run failed; first error: {errors[0]['task']}: {errors[0]['error']}")
    if errors:
        extras = {**extras, "errors": errors}
    return RunResult(experiment=spec.kind, spec_echo=spec.echo(), rows=rows, extras=extras)


# --- experiment commands ----------------------------------------------------


def run_noise_sweep(spec: ExperimentSpec) -> RunResult:
    methods = spec.methods or NOISE_SWEEP_METHODS
    tasks = [
        _Task(method=m, seed_index=s, p_corrupt=p)
        for p in spec.noise_grid
        for m in methods
        for s in range(spec.seeds)
    ]
    rows, errors = _run_tasks(spec, tasks)
    return _finish(spec, rows, errors, {})


def run_ablation(spec: ExperimentSpec) -> RunResult:
    methods = spec.methods or ABLATION_METHODS
    tasks = [
        _Task(method=m, seed_index=s, p_corrupt=p)
        for p in spec.noise_grid
        for m in methods
        for s in range(spec.seeds)
    ]
    rows, errors = _run_tasks(spec, tasks)
    return _finish(spec, rows, errors, {})


def run_threshold_sweep(spec: ExperimentSpec) -> RunResult:
    tasks = []
    fixed_labels = spec.threshold_labels if spec.kind != "percentile_sweep" else ()
    for p in spec.noise_grid:
        for s in range(spec.seeds):
            tasks.append(_Task(method="pl", seed_index=s, p_corrupt=p))
            for label in fixed_labels:
                tasks.append(_Task(method="pl+dips", seed_index=s, p_corrupt=p, threshold_config=label))
            for pct in spec.percentiles:
                tasks.append(
                    _Task(method="pl+dips", seed_index=s, p_corrupt=p, threshold_config="percentile", percentile=pct)
                )
    rows, errors = _run_tasks(spec, tasks)
    result = _finish(spec, rows, errors, {})
    optimal = {}
    for p in spec.noise_grid:
        means = {
            pct: np.mean([r.test_accuracy for r in rows if r.p_corrupt == p and r.percentile == pct])
            for pct in spec.percentiles
            if any(r.p_corrupt == p and r.percentile == pct for r in rows)
        }
        if means:
            optimal[repr(float(p))] = float(max(means, key=means.get))
    result.extras["optimal_percentile_by_noise"] = optimal
    return result


def run_data_efficiency(spec: ExperimentSpec) -> RunResult:
    methods = spec.methods or EFFICIENCY_METHODS
    tasks = [
        _Task(method=m, seed_index=s, p_corrupt=spec.efficiency_noise, labeled_fraction=f)
        for f in spec.fractions
        for m in methods
        for s in range(spec.seeds)
    ]
    rows, errors = _run_tasks(spec, tasks)
    result = _finish(spec, rows, errors, {})

    deltas: dict[str, dict[str, float]] = {}
    crossover: dict[str, float | None] = {}
    for method in methods:
        base = method.partition("+")[0]
        ref_rows = [r.test_accuracy for r in rows if r.method == base and r.labeled_fraction == 1.0]
        if not ref_rows:
            continue
        reference = float(np.mean(ref_rows))
        per_fraction = {}
        for f in spec.fractions:
            accs = [r.test_accuracy for r in rows if r.method == method and r.labeled_fraction == f]
            if accs:
                per_fraction[repr(float(f))] = float(np.mean(accs) - reference)
        deltas[method] = per_fraction
        if "+" in method:
            hit = [f for f in spec.fractions if per_fraction.get(repr(float(f)), -1) >= 0]
            crossover[method] = float(min(hit)) if hit else None
    result.extras["delta_vs_vanilla_at_full"] = deltas
    result.extras["crossover_fraction"] = crossover
    return result


def run_two_moons(spec: ExperimentSpec) -> RunResult:
    methods = spec.methods or TWO_MOONS_METHODS
    tasks = [_Task(method=m, seed_index=s) for m in methods for s in range(spec.seeds)]
    rows, errors = _run_tasks(spec, tasks)
    return _finish(spec, rows, errors, {})


def run_version_compare(spec: ExperimentSpec) -> RunResult:
    methods = spec.methods or ("pl", "pl+dips")
    tasks = []
    for p in spec.noise_grid:
        for s in range(spec.seeds):
            tasks.append(_Task(method="supervised", seed_index=s, p_corrupt=p))
            for version in spec.versions:
                for m in methods:
                    tasks.append(_Task(method=m, seed_index=s, p_corrupt=p, version=version))
    rows, errors = _run_tasks(spec, tasks)
    result = _finish(spec, rows, errors, {})
    gaps = {}
    for version in spec.versions:
        pl = [r.test_accuracy for r in rows if r.method == "pl" and r.version == version]
        sup = [r.test_accuracy for r in rows if r.method == "supervised"]
        if pl and sup:
            gaps[version] = float(np.mean(pl) - np.mean(sup))
    result.extras["pl_minus_supervised_by_version"] = gaps
    return result


def run_csv_experiment(spec: ExperimentSpec) -> RunResult:
    if not spec.csv_path:
        raise ValueError("custom_csv experiment requires a csv_path")
    methods = spec.methods or CSV_METHODS
    tasks = [_Task(method=m, seed_index=s) for m in methods for s in range(spec.seeds)]
    rows, errors = _run_tasks(spec, tasks)
    result = _finish(spec, rows, errors, {})

    def _variance(group: list[str]) -> float | None:
        means = [np.mean([r.test_accuracy for r in rows if r.method == m]) for m in group if any(r.method == m for r in rows)]
        return float(np.var(means)) if len(means) > 1 else None

    vanilla = [m for m in methods if "+" not in m and m != "supervised"]
    boosted = [m for m in methods if m.endswith("+dips")]
    result.extras["method_variance"] = {
        "vanilla": _variance(vanilla),
        "dips": _variance(boosted),
    }
    return result


EXPERIMENTS = {
    "noise_sweep": run_noise_sweep,
    "ablation": run_ablation,
    "threshold_sweep": run_threshold_sweep,
    "percentile_sweep": run_threshold_sweep,
    "data_efficiency": run_data_efficiency,
    "two_moons": run_two_moons,
    "version_compare": run_version_compare,
    "custom_csv": run_csv_experiment,
}


def run_experiment(spec: ExperimentSpec) -> RunResult:
    if spec.kind not in EXPERIMENTS:
        raise ValueError(f"unknown experiment kind {spec.kind!r}")
    return EXPERIMENTS[spec.kind](spec)

"""Pseudo-labeling with learning-dynamics sample characterization and selection."""

from .backbones import (
    BackboneConfig,
    DegenerateTrainingError,
    Ensemble,
    Model,
    NumericTrainingError,
    ensemble_uncertainty,
    load_model,
    predict_proba,
    save_model,
    train_ensemble,
    train_with_checkpoints,
)
from .data import (
    CsvFormatError,
    Dataset,
    NoiseReport,
    Split,
    generate_two_moons,
    generate_two_quadrants,
    inject_symmetric_label_noise,
    load_csv,
    split_lab_unlab_test,
)
from .dynamics import (
    DynamicsRecorder,
    DynamicsTrace,
    NoDynamicsError,
    aleatoric,
    confidence,
    extract_for_labels,
    update_running_stats,
)
from .experiments import ExperimentSpec, run_experiment
from .pipeline import (
    PipelineConfig,
    PipelineResult,
    RunHistory,
    SampleProvenance,
    evaluate,
    pseudo_label_accuracy,
    run,
)
from .plabelers import (
    PlabelerConfig,
    PseudoLabelBatch,
    derive_class_marginals,
    flexmatch_select,
    greedy_select,
    sinkhorn_allocate,
    ups_select,
)
from .selectors import (
    AdaptiveThreshold,
    Characterization,
    FixedThreshold,
    SelectorConfig,
    adaptive_al_threshold,
    dips_select,
    fluctuation_select,
    identity_select,
    small_loss_select,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptiveThreshold",
    "BackboneConfig",
    "Characterization",
    "CsvFormatError",
    "Dataset",
    "DegenerateTrainingError",
    "DynamicsRecorder",
    "DynamicsTrace",
    "Ensemble",
    "ExperimentSpec",
    "FixedThreshold",
    "Model",
    "NoDynamicsError",
    "NoiseReport",
    "NumericTrainingError",
    "PipelineConfig",
    "PipelineResult",
    "PlabelerConfig",
    "PseudoLabelBatch",
    "RunHistory",
    "SampleProvenance",
    "SelectorConfig",
    "Split",
    "adaptive_al_threshold",
    "aleatoric",
    "confidence",
    "derive_class_marginals",
    "dips_select",
    "ensemble_uncertainty",
    "evaluate",
    "extract_for_labels",
    "flexmatch_select",
    "fluctuation_select",
    "generate_two_moons",
    "generate_two_quadrants",
    "greedy_select",
    "identity_select",
    "inject_symmetric_label_noise",
    "load_csv",
    "load_model",
    "predict_proba",
    "pseudo_label_accuracy",
    "run",
    "run_experiment",
    "save_model",
    "sinkhorn_allocate",
    "small_loss_select",
    "split_lab_unlab_test",
    "train_ensemble",
    "train_with_checkpoints",
    "ups_select",
    "update_running_stats",
]

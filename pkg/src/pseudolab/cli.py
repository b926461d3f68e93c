"""Command-line experiment harness.

Each subcommand expands a spec into paired-seed runs and writes three files
into the output directory: ``results.csv`` (one row per run), ``summary.json``
(per-configuration aggregates and experiment extras), and ``figure.png``.
Progress goes to stderr; result files are byte-identical across re-runs and
worker counts. Every flag can also be set through an environment variable
(prefix PSEUDOLAB_) or a ``--config`` file of ``key = value`` lines or JSON.
"""

from __future__ import annotations

import json
import sys
import time
import traceback
from pathlib import Path

import click

from .data import load_csv
from .experiments import (
    DEFAULT_FRACTIONS,
    DEFAULT_NOISE_GRID,
    DEFAULT_PERCENTILES,
    ExperimentSpec,
    run_experiment,
)
from .plotting import render_figure
from .results import write_rows_csv, write_summary_json


def _log(message: str) -> None:
    click.echo(f"[pseudolab] {message}", err=True)


def _parse_config_file(path: str) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return json.loads(text)
    values: dict = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise click.BadParameter(f"line {line_no}: expected key = value, got {line!r}")
        key, _, raw = line.partition("=")
        raw = raw.strip()
        try:
            values[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            values[key.strip()] = raw
    return values


def _load_config(ctx: click.Context, param: click.Parameter, value: str | None):
    if not value:
        return value
    overrides = {k.replace("-", "_"): v for k, v in _parse_config_file(value).items()}
    ctx.default_map = {**(ctx.default_map or {}), **overrides}
    return value


def _floats(_ctx, _param, value: str | None):
    if value is None:
        return None
    try:
        return tuple(float(v) for v in value.split(",") if v.strip())
    except ValueError as exc:
        raise click.BadParameter(f"expected comma-separated numbers: {exc}") from exc


def _strings(_ctx, _param, value: str | None):
    if value is None:
        return None
    return tuple(v.strip() for v in value.split(",") if v.strip())


_COMMON = [
    click.option("--config", callback=_load_config, is_eager=True, expose_value=False,
                 type=click.Path(exists=True, dir_okay=False),
                 help="Key=value or JSON file supplying defaults for any flag."),
    click.option("--out-dir", required=True, type=click.Path(file_okay=False), help="Directory for result files."),
    click.option("--seed", default=0, show_default=True, help="Base seed for all derived randomness."),
    click.option("--seeds", default=None, type=int, help="Number of paired seeds (default per experiment)."),
    click.option("--jobs", default=1, show_default=True, help="Worker processes for independent runs."),
    click.option("--plot/--no-plot", "plot", default=True, show_default=True, help="Render figure.png."),
    click.option("--iterations", default=5, show_default=True, help="Pseudo-labeling iterations T."),
    click.option("--rounds", default=100, show_default=True, help="Backbone boosting rounds / epochs E."),
    click.option("--backbone", default="gradient_boosted_trees", show_default=True,
                 type=click.Choice(["gradient_boosted_trees", "sgd_linear", "sgd_mlp"])),
    click.option("--backbone-learning-rate", default=0.3, show_default=True),
    click.option("--tree-depth", default=4, show_default=True),
    click.option("--tau-p", default=0.8, show_default=True, help="Pseudo-label confidence threshold."),
    click.option("--tau-conf", default=0.8, show_default=True, help="Selector confidence threshold."),
    click.option("--tau-al", "tau_al_fixed", default=None, type=float,
                 help="Fixed aleatoric cutoff; omit for the adaptive span rule."),
    click.option("--tau-al-factor", default=0.75, show_default=True,
                 help="Factor of the adaptive aleatoric cutoff."),
    click.option("--tau-al-offset-min", is_flag=True, default=False,
                 help="Read the adaptive cutoff as min + factor * span."),
    click.option("--keep-fraction", default=0.8, show_default=True,
                 help="Kept fraction for the mean-loss baseline selector."),
    click.option("--reject-percentile", default=80.0, show_default=True,
                 help="Rejection percentile for the fluctuation baseline selector."),
    click.option("--ensemble-size", default=10, show_default=True,
                 help="Members in the uncertainty ensemble."),
    click.option("--hidden-width", default=32, show_default=True, help="MLP hidden width."),
    click.option("--batch-size", default=32, show_default=True, help="SGD mini-batch size."),
    click.option("--min-child-weight", default=1.0, show_default=True,
                 help="Minimum hessian sum per tree leaf."),
    click.option("--methods", callback=_strings, default=None,
                 help="Comma-separated method list overriding the experiment default."),
]


def _common(fn):
    for opt in reversed(_COMMON):
        fn = opt(fn)
    return fn


def _spec_kwargs(kind: str, default_seeds: int, **kw) -> dict:
    seeds = kw.pop("seeds", None)
    return {
        "kind": kind,
        "seeds": seeds if seeds is not None else default_seeds,
        "base_seed": kw.pop("seed"),
        "iterations": kw.pop("iterations"),
        "rounds_or_epochs": kw.pop("rounds"),
        "backbone_kind": kw.pop("backbone"),
        "backbone_learning_rate": kw.pop("backbone_learning_rate"),
        "tree_depth": kw.pop("tree_depth"),
        "tau_p": kw.pop("tau_p"),
        "tau_conf": kw.pop("tau_conf"),
        "tau_al_fixed": kw.pop("tau_al_fixed"),
        "tau_al_factor": kw.pop("tau_al_factor"),
        "tau_al_offset_min": kw.pop("tau_al_offset_min"),
        "keep_fraction": kw.pop("keep_fraction"),
        "reject_percentile": kw.pop("reject_percentile"),
        "ensemble_size": kw.pop("ensemble_size"),
        "hidden_width": kw.pop("hidden_width"),
        "batch_size": kw.pop("batch_size"),
        "min_child_weight": kw.pop("min_child_weight"),
        "methods": kw.pop("methods") or (),
        "jobs": kw.pop("jobs"),
        **kw,
    }


def _execute(spec: ExperimentSpec, out_dir: str, plot: bool) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _log(f"experiment={spec.kind} seeds={spec.seeds} jobs={spec.jobs}")
    started = time.perf_counter()
    result = run_experiment(spec)
    _log(f"completed {len(result.rows)} runs in {time.perf_counter() - started:.1f}s")
    write_rows_csv(result.rows, out / "results.csv")
    write_summary_json(result, out / "summary.json")
    if plot:
        render_figure(result, out / "figure.png")
    _log(f"wrote {out / 'results.csv'}, {out / 'summary.json'}" + (f", {out / 'figure.png'}" if plot else ""))
    errors = result.extras.get("errors")
    if errors:
        _log(f"{len(errors)} run(s) failed; see summary.json extras")


def _fail(exc: Exception) -> None:
    payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    click.echo(json.dumps(payload), err=False)
    if "--debug" in sys.argv:
        traceback.print_exc()
    sys.exit(1)


@click.group(context_settings={"auto_envvar_prefix": "PSEUDOLAB", "show_default": True})
@click.version_option(package_name="pseudolab")
def main() -> None:
    """Pseudo-labeling experiments with learning-dynamics sample selection."""


@main.command("noise-sweep")
@_common
@click.option("--noise-grid", callback=_floats, default=None,
              help=f"Comma-separated corruption levels (default {','.join(map(str, DEFAULT_NOISE_GRID))}).")
@click.option("--corrupt-unlabeled", is_flag=True, default=False,
              help="Also corrupt the hidden unlabeled ground truth.")
def cmd_noise_sweep(out_dir, plot, noise_grid, corrupt_unlabeled, **kw):
    """Method comparison across label-corruption levels on the two-quadrant task."""
    try:
        spec = ExperimentSpec(**_spec_kwargs(
            "noise_sweep", 20, noise_grid=noise_grid or DEFAULT_NOISE_GRID,
            corrupt_unlabeled=corrupt_unlabeled, **kw))
        _execute(spec, out_dir, plot)
    except Exception as exc:
        _fail(exc)


@main.command("ablation")
@_common
@click.option("--noise-grid", callback=_floats, default=None)
def cmd_ablation(out_dir, plot, noise_grid, **kw):
    """Selection-at-init / selection-at-iterations ablation lattice."""
    try:
        spec = ExperimentSpec(**_spec_kwargs(
            "ablation", 20, noise_grid=noise_grid or DEFAULT_NOISE_GRID, **kw))
        _execute(spec, out_dir, plot)
    except Exception as exc:
        _fail(exc)


@main.command("threshold-sweep")
@_common
@click.option("--noise-grid", callback=_floats, default=None)
@click.option("--percentiles", callback=_floats, default=None,
              help=f"Confidence percentile grid (default {','.join(map(str, DEFAULT_PERCENTILES))}).")
def cmd_threshold_sweep(out_dir, plot, noise_grid, percentiles, **kw):
    """Fixed threshold configurations and confidence-percentile grids per noise level."""
    try:
        spec = ExperimentSpec(**_spec_kwargs(
            "threshold_sweep", 20, noise_grid=noise_grid or DEFAULT_NOISE_GRID,
            percentiles=percentiles or DEFAULT_PERCENTILES, **kw))
        _execute(spec, out_dir, plot)
    except Exception as exc:
        _fail(exc)


@main.command("percentile-sweep")
@_common
@click.option("--noise-grid", callback=_floats, default=None)
@click.option("--percentiles", callback=_floats, default=None,
              help=f"Confidence percentile grid (default {','.join(map(str, DEFAULT_PERCENTILES))}).")
def cmd_percentile_sweep(out_dir, plot, noise_grid, percentiles, **kw):
    """Confidence-percentile grid per noise level, reporting the optimal percentile."""
    try:
        spec = ExperimentSpec(**_spec_kwargs(
            "percentile_sweep", 20, noise_grid=noise_grid or DEFAULT_NOISE_GRID,
            percentiles=percentiles or DEFAULT_PERCENTILES, **kw))
        _execute(spec, out_dir, plot)
    except Exception as exc:
        _fail(exc)


@main.command("data-efficiency")
@_common
@click.option("--fractions", callback=_floats, default=None,
              help="Labeled-subset fractions (default 0.1..1.0).")
@click.option("--noise", "efficiency_noise", default=0.2, show_default=True,
              help="Label corruption applied to the labeled part.")
def cmd_data_efficiency(out_dir, plot, fractions, **kw):
    """Accuracy as a function of the labeled-data fraction, nested subsampling."""
    try:
        spec = ExperimentSpec(**_spec_kwargs(
            "data_efficiency", 20, fractions=fractions or DEFAULT_FRACTIONS, **kw))
        _execute(spec, out_dir, plot)
    except Exception as exc:
        _fail(exc)


@main.command("two-moons")
@_common
@click.option("--labeled-per-class", "moons_labeled_per_class", default=100, show_default=True)
@click.option("--unlabeled", "moons_unlab", default=800, show_default=True)
@click.option("--test-size", "moons_test", default=1000, show_default=True)
@click.option("--std", "moons_std", default=0.4, show_default=True)
def cmd_two_moons(out_dir, plot, **kw):
    """Clean-label interleaving half circles comparison."""
    try:
        spec = ExperimentSpec(**_spec_kwargs("two_moons", 10, **kw))
        _execute(spec, out_dir, plot)
    except Exception as exc:
        _fail(exc)


@main.command("version-compare")
@_common
@click.option("--noise-grid", callback=_floats, default=None)
@click.option("--versions", callback=_strings, default=None,
              help="Comma-separated subset of grow,rebuild.")
def cmd_version_compare(out_dir, plot, noise_grid, versions, **kw):
    """Growing vs rebuilt pseudo-label pools across the noise grid."""
    try:
        spec = ExperimentSpec(**_spec_kwargs(
            "version_compare", 20, noise_grid=noise_grid or DEFAULT_NOISE_GRID,
            versions=versions or ("grow", "rebuild"), **kw))
        _execute(spec, out_dir, plot)
    except Exception as exc:
        _fail(exc)


@main.command("run-csv")
@_common
@click.argument("csv_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--label-column", default="-1", show_default=True,
              help="Label column name, or zero-based index (negative counts from the end).")
@click.option("--no-header", is_flag=True, default=False)
@click.option("--test-fraction", "csv_test_fraction", default=0.2, show_default=True)
@click.option("--p-corrupt", "csv_p_corrupt", default=0.0, show_default=True,
              help="Optional symmetric label noise injected into the labeled part.")
def cmd_run_csv(out_dir, plot, csv_path, label_column, no_header, **kw):
    """Apply the labeled/unlabeled/test protocol to a user-supplied CSV dataset."""
    try:
        column: str | int
        try:
            column = int(label_column)
        except ValueError:
            column = label_column
        column = _resolve_column(csv_path, column, not no_header)
        dataset, mapping = load_csv(csv_path, column, not no_header)
        _log(f"loaded {dataset.n_samples} rows, {dataset.n_features} features, {dataset.class_count} classes")
        spec = ExperimentSpec(**_spec_kwargs(
            "custom_csv", 50,
            csv_path=csv_path, csv_label_column=column, csv_has_header=not no_header, **kw))
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if mapping is not None:
            with open(out / "label_mapping.json", "w", encoding="utf-8") as fh:
                json.dump(mapping, fh, indent=2, sort_keys=True)
            _log(f"wrote label dictionary to {out / 'label_mapping.json'}")
        _execute(spec, out_dir, plot)
    except Exception as exc:
        _fail(exc)


def _resolve_column(csv_path: str, column: str | int, has_header: bool) -> str | int:
    if isinstance(column, int) and column < 0:
        import csv as _csv

        with open(csv_path, "r", encoding="utf-8", newline="") as fh:
            width = len(next(_csv.reader(fh)))
        return width + column
    return column


if __name__ == "__main__":
    main()

"""Command-line harness: files, determinism, config layering, failure modes."""

import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from pseudolab.cli import main

FAST_ARGS = ["--seeds", "1", "--rounds", "8", "--iterations", "2", "--methods", "pl,pl+dips"]


@pytest.fixture()
def runner():
    return CliRunner()


def read(path: Path) -> bytes:
    return Path(path).read_bytes()


class TestNoiseSweepCommand:
    def test_writes_results_summary_and_figure(self, runner, tmp_path):
        out = tmp_path / "run"
        result = runner.invoke(main, ["noise-sweep", "--out-dir", str(out), "--noise-grid", "0.3", *FAST_ARGS])
        assert result.exit_code == 0, result.output
        assert (out / "results.csv").exists()
        assert (out / "summary.json").exists()
        assert (out / "figure.png").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["experiment"] == "noise_sweep"
        assert summary["spec"]["seeds"] == 1

    def test_rerun_is_byte_identical(self, runner, tmp_path):
        args = ["noise-sweep", "--noise-grid", "0.25", *FAST_ARGS]
        a, b = tmp_path / "a", tmp_path / "b"
        assert runner.invoke(main, args + ["--out-dir", str(a)]).exit_code == 0
        assert runner.invoke(main, args + ["--out-dir", str(b)]).exit_code == 0
        assert read(a / "results.csv") == read(b / "results.csv")
        assert read(a / "summary.json") == read(b / "summary.json")
        assert read(a / "figure.png") == read(b / "figure.png")

    def test_jobs_flag_does_not_change_outputs(self, runner, tmp_path):
        args = ["noise-sweep", "--noise-grid", "0.3", *FAST_ARGS, "--no-plot"]
        a, b = tmp_path / "serial", tmp_path / "parallel"
        assert runner.invoke(main, args + ["--out-dir", str(a), "--jobs", "1"]).exit_code == 0
        assert runner.invoke(main, args + ["--out-dir", str(b), "--jobs", "2"]).exit_code == 0
        assert read(a / "results.csv") == read(b / "results.csv")
        assert read(a / "summary.json") == read(b / "summary.json")

    def test_no_plot_skips_figure(self, runner, tmp_path):
        out = tmp_path / "noplot"
        result = runner.invoke(
            main, ["noise-sweep", "--out-dir", str(out), "--noise-grid", "0.3", "--no-plot", *FAST_ARGS]
        )
        assert result.exit_code == 0
        assert not (out / "figure.png").exists()

    def test_failure_emits_error_json_and_nonzero_exit(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["noise-sweep", "--out-dir", str(tmp_path / "x"), "--noise-grid", "0.9", *FAST_ARGS],
        )
        assert result.exit_code == 1
        payload = json.loads(result.output.strip().splitlines()[-1])
        assert "error" in payload and payload["error"]["type"]


class TestConfigLayering:
    def test_config_file_supplies_defaults(self, runner, tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text("noise-grid = 0.3\nseeds = 1\nrounds = 8\niterations = 2\nmethods = pl\n")
        out = tmp_path / "cfg_run"
        result = runner.invoke(main, ["noise-sweep", "--config", str(cfg), "--out-dir", str(out)])
        assert result.exit_code == 0, result.output
        summary = json.loads((out / "summary.json").read_text())
        assert summary["spec"]["seeds"] == 1
        assert summary["spec"]["noise_grid"] == [0.3]
        assert summary["spec"]["methods"] == ["pl"]

    def test_json_config_file(self, runner, tmp_path):
        cfg = tmp_path / "exp.json"
        cfg.write_text(json.dumps({"noise-grid": "0.2", "seeds": 1, "rounds": 8, "iterations": 2, "methods": "pl"}))
        out = tmp_path / "json_run"
        result = runner.invoke(main, ["noise-sweep", "--config", str(cfg), "--out-dir", str(out)])
        assert result.exit_code == 0, result.output

    def test_explicit_flag_overrides_config_file(self, runner, tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text("seeds = 7\nnoise-grid = 0.3\nrounds = 8\niterations = 2\nmethods = pl\n")
        out = tmp_path / "override"
        result = runner.invoke(
            main, ["noise-sweep", "--config", str(cfg), "--seeds", "1", "--out-dir", str(out)]
        )
        assert result.exit_code == 0
        assert json.loads((out / "summary.json").read_text())["spec"]["seeds"] == 1

    def test_environment_variable_override(self, runner, tmp_path):
        out = tmp_path / "env_run"
        result = runner.invoke(
            main,
            ["noise-sweep", "--out-dir", str(out), "--noise-grid", "0.3", "--rounds", "8",
             "--iterations", "2", "--methods", "pl"],
            env={"PSEUDOLAB_NOISE_SWEEP_SEEDS": "1"},
        )
        assert result.exit_code == 0, result.output
        assert json.loads((out / "summary.json").read_text())["spec"]["seeds"] == 1


class TestOtherCommands:
    def test_two_moons(self, runner, tmp_path):
        out = tmp_path / "moons"
        result = runner.invoke(
            main,
            ["two-moons", "--out-dir", str(out), "--seeds", "1", "--rounds", "8", "--iterations", "1",
             "--labeled-per-class", "10", "--unlabeled", "30", "--test-size", "40"],
        )
        assert result.exit_code == 0, result.output
        rows = (out / "results.csv").read_text().strip().splitlines()
        assert len(rows) == 1 + 3  # header + supervised/pl/pl+dips

    def test_ablation(self, runner, tmp_path):
        out = tmp_path / "abl"
        result = runner.invoke(
            main, ["ablation", "--out-dir", str(out), "--noise-grid", "0.3", "--seeds", "1",
                   "--rounds", "8", "--iterations", "1"]
        )
        assert result.exit_code == 0, result.output
        rows = (out / "results.csv").read_text().strip().splitlines()
        assert len(rows) == 1 + 4

    def test_threshold_sweep(self, runner, tmp_path):
        out = tmp_path / "thr"
        result = runner.invoke(
            main, ["threshold-sweep", "--out-dir", str(out), "--noise-grid", "0.3", "--seeds", "1",
                   "--rounds", "8", "--iterations", "1", "--percentiles", "0.2,0.5"]
        )
        assert result.exit_code == 0, result.output
        summary = json.loads((out / "summary.json").read_text())
        assert "optimal_percentile_by_noise" in summary["extras"]

    def test_data_efficiency(self, runner, tmp_path):
        out = tmp_path / "eff"
        result = runner.invoke(
            main, ["data-efficiency", "--out-dir", str(out), "--seeds", "1", "--rounds", "8",
                   "--iterations", "1", "--fractions", "0.5,1.0", "--methods", "pl,pl+dips"]
        )
        assert result.exit_code == 0, result.output
        summary = json.loads((out / "summary.json").read_text())
        assert "crossover_fraction" in summary["extras"]

    def test_version_compare(self, runner, tmp_path):
        out = tmp_path / "ver"
        result = runner.invoke(
            main, ["version-compare", "--out-dir", str(out), "--noise-grid", "0.3", "--seeds", "1",
                   "--rounds", "8", "--iterations", "1", "--methods", "pl"]
        )
        assert result.exit_code == 0, result.output
        text = (out / "results.csv").read_text()
        assert "grow" in text and "rebuild" in text


class TestRunCsv:
    def _write_csv(self, path: Path, n=80, string_labels=False):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(n, 2))
        y = (X[:, 0] > 0).astype(int)
        lines = ["f1,f2,target"]
        for row, label in zip(X, y):
            name = ("neg", "pos")[label] if string_labels else str(label)
            lines.append(f"{row[0]},{row[1]},{name}")
        path.write_text("\n".join(lines) + "\n")

    def test_runs_method_grid_on_user_data(self, runner, tmp_path):
        csv_path = tmp_path / "data.csv"
        self._write_csv(csv_path)
        out = tmp_path / "csv_run"
        result = runner.invoke(
            main,
            ["run-csv", str(csv_path), "--label-column", "target", "--out-dir", str(out),
             "--seeds", "1", "--rounds", "8", "--iterations", "1", "--methods", "pl,pl+dips"],
        )
        assert result.exit_code == 0, result.output
        rows = (out / "results.csv").read_text().strip().splitlines()
        assert len(rows) == 3
        summary = json.loads((out / "summary.json").read_text())
        assert "method_variance" in summary["extras"]

    def test_string_labels_emit_dictionary_side_file(self, runner, tmp_path):
        csv_path = tmp_path / "cats.csv"
        self._write_csv(csv_path, string_labels=True)
        out = tmp_path / "cats_run"
        result = runner.invoke(
            main,
            ["run-csv", str(csv_path), "--label-column", "target", "--out-dir", str(out),
             "--seeds", "1", "--rounds", "8", "--iterations", "1", "--methods", "pl"],
        )
        assert result.exit_code == 0, result.output
        mapping = json.loads((out / "label_mapping.json").read_text())
        assert set(mapping) == {"neg", "pos"}

    def test_identical_invocations_identical_outputs(self, runner, tmp_path):
        csv_path = tmp_path / "data.csv"
        self._write_csv(csv_path)
        args = ["run-csv", str(csv_path), "--label-column", "target", "--seeds", "1",
                "--rounds", "8", "--iterations", "1", "--methods", "pl"]
        a, b = tmp_path / "r1", tmp_path / "r2"
        assert runner.invoke(main, args + ["--out-dir", str(a)]).exit_code == 0
        assert runner.invoke(main, args + ["--out-dir", str(b)]).exit_code == 0
        assert read(a / "results.csv") == read(b / "results.csv")
        assert read(a / "figure.png") == read(b / "figure.png")

    def test_negative_label_column_counts_from_end(self, runner, tmp_path):
        csv_path = tmp_path / "data.csv"
        self._write_csv(csv_path)
        out = tmp_path / "neg_col"
        result = runner.invoke(
            main,
            ["run-csv", str(csv_path), "--label-column", "-1", "--out-dir", str(out),
             "--seeds", "1", "--rounds", "8", "--iterations", "1", "--methods", "pl"],
        )
        assert result.exit_code == 0, result.output

    def test_bad_csv_fails_with_error_json(self, runner, tmp_path):
        csv_path = tmp_path / "bad.csv"
        csv_path.write_text("a,b,target\n1,oops,0\n2,3,1\n")
        result = runner.invoke(
            main, ["run-csv", str(csv_path), "--label-column", "target", "--out-dir", str(tmp_path / "o")]
        )
        assert result.exit_code == 1
        payload = json.loads(result.output.strip().splitlines()[-1])
        assert payload["error"]["type"] == "CsvFormatError"

"""Acceptance suite: one test per exit criterion, one printed line each.

Run with ``pytest tests/test_acceptance.py -v -s``. The experiment fixtures
are deterministic, so every assertion here is stable across machines and
re-runs. Directional method comparisons use a one-sided paired t-test at
alpha = 0.05: the claimed inequality stands unless the data refutes it.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest
from click.testing import CliRunner

from pseudolab.backbones import BackboneConfig
from pseudolab.cli import main as cli_main
from pseudolab.data import generate_two_quadrants
from pseudolab.dynamics import DynamicsTrace
from pseudolab.experiments import (
    ExperimentSpec,
    run_ablation,
    run_data_efficiency,
    run_noise_sweep,
    run_two_moons,
)
from pseudolab.pipeline import PipelineConfig, history_to_dict, run as run_pipeline
from pseudolab.plabelers import PlabelerConfig, greedy_select, sinkhorn_plan, ups_select
from pseudolab.selectors import FixedThreshold, SelectorConfig
from pseudolab.sgd import MlpModel, linear_loss_and_grad, mlp_loss_and_grad
from pseudolab.seeding import derive_seed

# one-sided 5% critical values of Student's t by degrees of freedom
T_CRIT_05 = {9: 1.833, 19: 1.729, 29: 1.699, 39: 1.684}


def passes_directional_paired_test(favored: dict, other: dict) -> tuple[bool, float]:
    """True unless ``other`` beats ``favored`` significantly at alpha=0.05."""
    seeds = sorted(set(favored) & set(other))
    diffs = np.array([other[s] - favored[s] for s in seeds])
    if np.allclose(diffs, 0):
        return True, 0.0
    se = diffs.std(ddof=1) / math.sqrt(len(diffs))
    t_stat = float(diffs.mean() / se) if se > 0 else 0.0
    crit = T_CRIT_05.get(len(diffs) - 1, 1.645)
    return t_stat < crit, t_stat


def report(criterion: int, message: str) -> None:
    print(f"\nACCEPTANCE CRITERION {criterion}: PASS - {message}")


@pytest.fixture(scope="module")
def noise_sweep_result():
    started = time.perf_counter()
    spec = ExperimentSpec(kind="noise_sweep", seeds=20, noise_grid=(0.2, 0.3))
    result = run_noise_sweep(spec)
    result.extras["elapsed_seconds"] = time.perf_counter() - started
    return result


@pytest.fixture(scope="module")
def ablation_result():
    spec = ExperimentSpec(kind="ablation", seeds=20, noise_grid=(0.3,))
    return run_ablation(spec)


class TestCriterion1NoiseSweepGap:
    def test_selection_gap_at_30_percent_noise(self, noise_sweep_result):
        means = noise_sweep_result.method_means(p_corrupt=0.3)
        gap = means["pl+dips"] - means["pl"]
        elapsed = noise_sweep_result.extras["elapsed_seconds"]
        assert gap >= 0.10, f"selection gap {gap:.3f} below 10 points (means: {means})"
        assert elapsed < 600, f"noise sweep took {elapsed:.0f}s, over the 10 minute target"
        report(1, f"pl+dips - pl = {gap * 100:+.1f} points at p_corrupt=0.3 "
                  f"({means['pl+dips']:.3f} vs {means['pl']:.3f}), sweep ran in {elapsed:.0f}s")


class TestPseudoLabelAccuracyDirection:
    def test_selection_improves_final_pseudo_label_accuracy(self, noise_sweep_result):
        # paired over 20 seeds at p_corrupt=0.3: held pseudo-labels are at
        # least as accurate with selection as without it, on average
        dips = [r.pseudo_label_accuracy for r in noise_sweep_result.rows
                if r.method == "pl+dips" and r.p_corrupt == 0.3 and r.pseudo_label_accuracy is not None]
        vanilla = [r.pseudo_label_accuracy for r in noise_sweep_result.rows
                   if r.method == "pl" and r.p_corrupt == 0.3 and r.pseudo_label_accuracy is not None]
        assert len(dips) >= 20 and len(vanilla) >= 20
        assert np.mean(dips) >= np.mean(vanilla)


class TestCriterion2SelectorComparison:
    def test_dynamics_selector_not_beaten_by_lnl_baselines(self, noise_sweep_result):
        summary = []
        for p in (0.2, 0.3):
            dips = noise_sweep_result.paired_accuracies("pl+dips", p_corrupt=p)
            for baseline in ("pl+small_loss", "pl+fluctuation"):
                other = noise_sweep_result.paired_accuracies(baseline, p_corrupt=p)
                ok, t_stat = passes_directional_paired_test(dips, other)
                mean_gap = np.mean(list(dips.values())) - np.mean(list(other.values()))
                assert ok, (
                    f"{baseline} significantly exceeds pl+dips at p_corrupt={p} "
                    f"(t={t_stat:.2f}, mean gap {mean_gap:+.3f})"
                )
                summary.append(f"vs {baseline}@{p}: {mean_gap * 100:+.1f}pts (t={t_stat:.2f})")
        report(2, "; ".join(summary))


class TestCriterion3AblationLattice:
    def test_mean_accuracy_ordering(self, ablation_result):
        means = ablation_result.method_means(p_corrupt=0.3)
        assert means["dips"] >= means["a1"], means
        assert means["dips"] >= means["a2"], means
        assert means["a1"] >= means["a3"], means
        assert means["a2"] >= means["a3"], means
        self._lattice_means = means

    def test_a3_history_bit_identical_to_identity_run(self, ablation_result):
        from pseudolab.experiments import quadrant_split

        spec = ExperimentSpec(kind="ablation", seeds=20, noise_grid=(0.3,))
        split = quadrant_split(spec, 0, 0.3)
        seed = derive_seed(spec.base_seed, "pipeline", 0)
        backbone = BackboneConfig()
        a3 = run_pipeline(split, PipelineConfig(
            selector=SelectorConfig(kind="dips"), backbone=backbone,
            dips_at_init=False, dips_at_iters=False, seed=seed))
        identity = run_pipeline(split, PipelineConfig(
            selector=SelectorConfig(kind="identity"), backbone=backbone,
            dips_at_init=False, dips_at_iters=False, seed=seed))

        def signature(history):
            doc = history_to_dict(history)
            return json.dumps({"iterations": doc["iterations"], "events": doc["events"]}, sort_keys=True)

        assert signature(a3.history) == signature(identity.history)
        means = ablation_result.method_means(p_corrupt=0.3)
        report(3, "lattice " + " >= ".join(f"{m}={means[m]:.3f}" for m in ("dips", "a1", "a2", "a3"))
                  + "; a3 history bit-identical to identity run")


class TestCriterion4TwoMoons:
    def test_clean_label_behavior(self):
        spec = ExperimentSpec(kind="two_moons", seeds=10)
        result = run_two_moons(spec)
        means = result.method_means()
        dips_minus_pl = means["pl+dips"] - means["pl"]
        assert 0.0 <= dips_minus_pl <= 0.05, f"selection gain {dips_minus_pl:.3f} outside [0, 0.05] ({means})"
        assert abs(means["supervised"] - means["pl"]) <= 0.015, means
        report(4, f"moons: supervised={means['supervised']:.3f} pl={means['pl']:.3f} "
                  f"pl+dips={means['pl+dips']:.3f}; gain {dips_minus_pl * 100:+.1f}pts within [0, 5]")


class TestCriterion5DataEfficiency:
    def test_crossover_at_or_below_seventy_percent(self):
        spec = ExperimentSpec(
            kind="data_efficiency", seeds=20, efficiency_noise=0.2,
            fractions=(0.3, 0.5, 0.7, 1.0), methods=("pl", "pl+dips"),
        )
        result = run_data_efficiency(spec)
        crossover = result.extras["crossover_fraction"]["pl+dips"]
        assert crossover is not None and crossover <= 0.7, result.extras
        report(5, f"pl+dips matches vanilla-at-full-labels using a {crossover:.0%} labeled fraction")


class TestCriterion6OracleEquivalences:
    def test_running_statistics_match_stored_checkpoints(self):
        rng = np.random.default_rng(0)
        stream = rng.uniform(0.01, 1.0, size=(100, 50, 2))
        stream /= stream.sum(axis=2, keepdims=True)
        trace = DynamicsTrace.empty(50, 2)
        for m in stream:
            trace.update(m)
        assert np.allclose(trace.mean_p, stream.mean(axis=0), atol=1e-12, rtol=0)
        assert np.allclose(trace.mean_pq, (stream * (1 - stream)).mean(axis=0), atol=1e-12, rtol=0)

    def test_metric_ranges_over_ten_thousand_cases(self):
        rng = np.random.default_rng(1)
        p = rng.uniform(size=(30, 10_000, 1))
        stream = np.concatenate([1 - p, p], axis=2)
        trace = DynamicsTrace.empty(10_000, 2)
        for m in stream:
            trace.update(m)
        assert (trace.mean_p >= 0).all() and (trace.mean_p <= 1).all()
        assert (trace.mean_pq >= 0).all() and (trace.mean_pq <= 0.25).all()

    def test_loose_selector_pipeline_matches_identity_and_a3(self):
        from pseudolab.experiments import quadrant_split

        spec = ExperimentSpec(kind="noise_sweep", seeds=1, noise_grid=(0.3,),
                              n_pool=100, n_test=50, lab_fraction=0.3, unlab_fraction=0.7)
        split = quadrant_split(spec, 0, 0.3)
        backbone = BackboneConfig(rounds_or_epochs=10)
        common = dict(iterations=2, backbone=backbone, seed=5)
        loose = run_pipeline(split, PipelineConfig(
            selector=SelectorConfig(kind="dips", tau_conf=0.0, tau_al_policy=FixedThreshold(0.26)), **common))
        identity = run_pipeline(split, PipelineConfig(selector=SelectorConfig(kind="identity"),
                                                      dips_at_init=False, dips_at_iters=False, **common))
        a3 = run_pipeline(split, PipelineConfig(selector=SelectorConfig(kind="dips"),
                                                dips_at_init=False, dips_at_iters=False, **common))
        for a, b in ((loose, identity), (identity, a3)):
            for ra, rb in zip(a.history.records, b.history.records):
                assert np.array_equal(ra.train_indices, rb.train_indices)
                assert np.array_equal(ra.pseudo_indices, rb.pseudo_indices)
                assert np.array_equal(ra.pseudo_labels, rb.pseudo_labels)

    def test_ups_subset_of_greedy_and_equality_at_zero_variance(self):
        rng = np.random.default_rng(2)
        for trial in range(50):
            raw = rng.uniform(0.01, 1, size=(40, 2))
            probs = raw / raw.sum(axis=1, keepdims=True)
            unc = rng.uniform(0, 0.4, size=probs.shape)
            ups = {e.index for e in ups_select(probs, unc, PlabelerConfig()).entries}
            greedy = {e.index for e in greedy_select(probs, PlabelerConfig()).entries}
            assert ups <= greedy
        probs = raw / raw.sum(axis=1, keepdims=True)
        ups_eq = ups_select(probs, np.zeros_like(probs), PlabelerConfig())
        greedy_eq = greedy_select(probs, PlabelerConfig())
        assert [e.index for e in ups_eq.entries] == [e.index for e in greedy_eq.entries]

    def test_sinkhorn_marginals_and_enumeration_oracle(self):
        rng = np.random.default_rng(3)
        raw = rng.uniform(0.05, 1, size=(30, 3))
        probs = raw / raw.sum(axis=1, keepdims=True)
        marginals = np.array([8.0, 12.0, 10.0])
        plan, converged, _ = sinkhorn_plan(probs, marginals, epsilon=0.05, max_iters=500)
        assert converged
        assert np.abs(plan.sum(axis=0) - marginals).max() < 1e-6

        probs4 = np.array([[0.9, 0.1], [0.6, 0.4], [0.3, 0.7], [0.2, 0.8]])
        cost = -np.log(probs4)
        best, best_cost = None, np.inf
        for pattern in itertools.product([0, 1], repeat=4):
            if sum(pattern) != 2:
                continue
            total = sum(cost[i, c] for i, c in enumerate(pattern))
            if total < best_cost:
                best, best_cost = pattern, total
        plan4, _, _ = sinkhorn_plan(probs4, np.array([2.0, 2.0]), epsilon=0.01, max_iters=2000)
        assert plan4.argmax(axis=1).tolist() == list(best)

    def test_sgd_gradients_match_central_differences(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(5, 3))
        y = rng.integers(0, 3, size=5)
        W = rng.normal(scale=0.4, size=(3, 3))
        b = rng.normal(scale=0.2, size=3)
        _, gw, gb = linear_loss_and_grad(W, b, X, y)
        eps = 1e-6
        for grad, param in ((gw, W), (gb, b)):
            flat = param.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up, _, _ = linear_loss_and_grad(W, b, X, y)
                flat[i] = orig - eps
                dn, _, _ = linear_loss_and_grad(W, b, X, y)
                flat[i] = orig
                numeric = (up - dn) / (2 * eps)
                denom = max(abs(numeric) + abs(grad.reshape(-1)[i]), 1e-8)
                assert abs(numeric - grad.reshape(-1)[i]) / denom < 1e-4

        mlp = MlpModel(
            w1=rng.normal(scale=0.4, size=(3, 4)), b1=np.zeros(4),
            w2=rng.normal(scale=0.4, size=(4, 2)), b2=np.zeros(2),
        )
        y2 = rng.integers(0, 2, size=5)
        _, grads = mlp_loss_and_grad(mlp, X, y2)
        for grad, param in zip(grads, (mlp.w1, mlp.b1, mlp.w2, mlp.b2)):
            flat = param.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up, _ = mlp_loss_and_grad(mlp, X, y2)
                flat[i] = orig - eps
                dn, _ = mlp_loss_and_grad(mlp, X, y2)
                flat[i] = orig
                numeric = (up - dn) / (2 * eps)
                denom = max(abs(numeric) + abs(grad.reshape(-1)[i]), 1e-8)
                assert abs(numeric - grad.reshape(-1)[i]) / denom < 1e-4
        report(6, "running-vs-stored 1e-12, metric ranges on 1e4 cases, selector equivalences, "
                  "ups subset/equality, transport marginals 1e-6 + enumeration optimum, gradient checks 1e-4")


class TestCriterion7CliDeterminism:
    def test_every_command_rerun_is_byte_identical(self, tmp_path):
        runner = CliRunner()
        fast = ["--seeds", "1", "--rounds", "8", "--iterations", "1"]
        csv_path = tmp_path / "toy.csv"
        ds = generate_two_quadrants(60, seed=0)
        lines = ["x0,x1,label"] + [f"{r[0]},{r[1]},{l}" for r, l in zip(ds.features, ds.labels)]
        csv_path.write_text("\n".join(lines) + "\n")
        commands = {
            "noise-sweep": ["noise-sweep", "--noise-grid", "0.3", "--methods", "pl,pl+dips", *fast],
            "ablation": ["ablation", "--noise-grid", "0.3", *fast],
            "threshold-sweep": ["threshold-sweep", "--noise-grid", "0.3", "--percentiles", "0.3", *fast],
            "data-efficiency": ["data-efficiency", "--fractions", "0.5,1.0", "--methods", "pl,pl+dips", *fast],
            "two-moons": ["two-moons", "--labeled-per-class", "8", "--unlabeled", "20", "--test-size", "20", *fast],
            "version-compare": ["version-compare", "--noise-grid", "0.3", "--methods", "pl", *fast],
            "run-csv": ["run-csv", str(csv_path), "--label-column", "label", "--methods", "pl", *fast],
        }
        for name, args in commands.items():
            out_a = tmp_path / f"{name}-a"
            out_b = tmp_path / f"{name}-b"
            for out in (out_a, out_b):
                invoked = runner.invoke(cli_main, args + ["--out-dir", str(out)])
                assert invoked.exit_code == 0, f"{name}: {invoked.output}"
            for fname in ("results.csv", "summary.json", "figure.png"):
                assert (out_a / fname).read_bytes() == (out_b / fname).read_bytes(), f"{name}/{fname}"

        out_j1 = tmp_path / "jobs1"
        out_j2 = tmp_path / "jobs2"
        args = commands["noise-sweep"]
        assert runner.invoke(cli_main, args + ["--out-dir", str(out_j1), "--jobs", "1"]).exit_code == 0
        assert runner.invoke(cli_main, args + ["--out-dir", str(out_j2), "--jobs", "2"]).exit_code == 0
        for fname in ("results.csv", "summary.json", "figure.png"):
            assert (out_j1 / fname).read_bytes() == (out_j2 / fname).read_bytes()
        report(7, "all seven commands byte-identical on re-run; outputs independent of --jobs")

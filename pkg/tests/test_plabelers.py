"""Pseudo-label batch selectors and the transport-based allocator."""

import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pseudolab.data import Dataset
from pseudolab.plabelers import (
    PlabelerConfig,
    PseudoLabel,
    PseudoLabelBatch,
    derive_class_marginals,
    flexmatch_select,
    flexmatch_thresholds,
    greedy_select,
    sinkhorn_allocate,
    sinkhorn_plan,
    ups_select,
)


def random_probs(n, C, seed):
    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.01, 1.0, size=(n, C))
    return raw / raw.sum(axis=1, keepdims=True)


class TestGreedy:
    def test_confident_row_selected_with_argmax_class(self):
        batch = greedy_select(np.array([[0.85, 0.15]]), PlabelerConfig(), iteration=2)
        assert len(batch) == 1
        entry = batch.entries[0]
        assert entry.label == 0 and entry.iteration == 2
        assert entry.confidence == pytest.approx(0.85)

    def test_below_threshold_not_selected(self):
        batch = greedy_select(np.array([[0.75, 0.25]]), PlabelerConfig())
        assert len(batch) == 0

    def test_uniform_rows_give_empty_batch(self):
        batch = greedy_select(np.full((10, 2), 0.5), PlabelerConfig())
        assert len(batch) == 0

    def test_threshold_is_inclusive(self):
        batch = greedy_select(np.array([[0.8, 0.2]]), PlabelerConfig())
        assert len(batch) == 1

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(min_value=0.5, max_value=0.99))
    def test_lowering_tau_p_never_removes_samples(self, seed, tau):
        probs = random_probs(30, 3, seed)
        high = {e.index for e in greedy_select(probs, PlabelerConfig(tau_p=tau)).entries}
        low = {e.index for e in greedy_select(probs, PlabelerConfig(tau_p=tau - 0.2)).entries}
        assert high <= low


class TestUps:
    def test_confident_certain_sample_selected(self):
        probs = np.array([[0.9, 0.1]])
        unc = np.array([[0.05, 0.05]])
        batch = ups_select(probs, unc, PlabelerConfig())
        assert len(batch) == 1

    def test_uncertainty_gate_rejects(self):
        probs = np.array([[0.9, 0.1]])
        unc = np.array([[0.3, 0.3]])
        batch = ups_select(probs, unc, PlabelerConfig())
        assert len(batch) == 0

    def test_zero_variance_equals_greedy(self):
        probs = random_probs(50, 2, 1)
        unc = np.zeros_like(probs)
        ups = ups_select(probs, unc, PlabelerConfig())
        greedy = greedy_select(probs, PlabelerConfig())
        assert [e.index for e in ups.entries] == [e.index for e in greedy.entries]
        assert [e.label for e in ups.entries] == [e.label for e in greedy.entries]

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_ups_subset_of_greedy(self, seed):
        probs = random_probs(25, 2, seed)
        unc = np.random.default_rng(seed + 1).uniform(0, 0.4, size=probs.shape)
        ups = {e.index for e in ups_select(probs, unc, PlabelerConfig()).entries}
        greedy = {e.index for e in greedy_select(probs, PlabelerConfig()).entries}
        assert ups <= greedy

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ups_select(np.full((2, 2), 0.5), np.zeros((3, 2)), PlabelerConfig())


class TestFlexmatch:
    def test_equal_counts_equal_greedy_at_base(self):
        probs = random_probs(60, 2, 2)
        batch = flexmatch_select(probs, np.array([7, 7]), PlabelerConfig())
        greedy = greedy_select(probs, PlabelerConfig(tau_p=0.9))
        assert [e.index for e in batch.entries] == [e.index for e in greedy.entries]

    def test_stated_threshold_arithmetic(self):
        taus = flexmatch_thresholds(np.array([10, 5]), 0.9)
        assert taus.tolist() == [0.9, 0.45]
        probs = np.array([[0.5, 0.5001] / np.float64(1.0001)])
        probs = probs / probs.sum(axis=1, keepdims=True)
        batch = flexmatch_select(np.array([[0.4999, 0.5001]]), np.array([10, 5]), PlabelerConfig())
        assert len(batch) == 1 and batch.entries[0].label == 1

    def test_warm_up_all_thresholds_at_base(self):
        taus = flexmatch_thresholds(np.zeros(3), 0.9)
        assert taus.tolist() == [0.9, 0.9, 0.9]

    def test_never_selected_class_keeps_lower_threshold(self):
        # two simulated rounds: class 0 accumulates selections, class 1 never does
        config = PlabelerConfig(kind="flexmatch")
        counts = np.zeros(2)
        probs = np.column_stack([np.linspace(0.91, 0.99, 20), 1 - np.linspace(0.91, 0.99, 20)])
        first = flexmatch_select(probs, counts, config, iteration=1)
        for e in first.entries:
            counts[e.label] += 1
        taus = flexmatch_thresholds(counts, config.flex_base_tau)
        assert counts[0] > 0 and counts[1] == 0
        assert taus[1] < taus[0]
        second = flexmatch_select(np.array([[0.3, 0.7]]), counts, config, iteration=2)
        assert len(second) == 1 and second.entries[0].label == 1


class TestSinkhorn:
    def test_one_hot_probs_recover_argmax_assignment(self):
        probs = np.array([
            [0.97, 0.03],
            [0.96, 0.04],
            [0.05, 0.95],
            [0.02, 0.98],
        ])
        batch = sinkhorn_allocate(probs, np.array([2.0, 2.0]), PlabelerConfig(kind="sla_lite"))
        assert [e.label for e in batch.entries] == [0, 0, 1, 1]

    def test_plan_marginals_satisfied(self):
        probs = random_probs(40, 3, 5)
        marginals = np.array([10.0, 20.0, 10.0])
        plan, converged, _ = sinkhorn_plan(probs, marginals, epsilon=0.05, max_iters=500)
        assert converged
        assert np.abs(plan.sum(axis=0) - marginals).max() < 1e-6
        assert np.abs(plan.sum(axis=1) - 1.0).max() < 1e-6
        assert (plan >= 0).all()

    def test_small_instance_matches_enumeration_oracle(self):
        # exhaustive search over all 16 assignments with column counts (2, 2)
        probs = np.array([
            [0.9, 0.1],
            [0.6, 0.4],
            [0.3, 0.7],
            [0.2, 0.8],
        ])
        cost = -np.log(probs)
        best, best_cost = None, np.inf
        for pattern in itertools.product([0, 1], repeat=4):
            if sum(pattern) != 2:
                continue
            total = sum(cost[i, c] for i, c in enumerate(pattern))
            if total < best_cost:
                best, best_cost = pattern, total
        plan, _, _ = sinkhorn_plan(probs, np.array([2.0, 2.0]), epsilon=0.01, max_iters=2000)
        assert plan.argmax(axis=1).tolist() == list(best)

    def test_confidence_gate_filters_assignments(self):
        probs = np.array([[0.85, 0.15], [0.55, 0.45]])
        batch = sinkhorn_allocate(probs, np.array([2.0, 0.0]), PlabelerConfig(kind="sla_lite"))
        assert [e.index for e in batch.entries] == [0]

    def test_zero_marginals_rejected(self):
        with pytest.raises(ValueError):
            sinkhorn_allocate(random_probs(4, 2, 0), np.zeros(2), PlabelerConfig(kind="sla_lite"))

    def test_non_convergence_warns_and_returns(self):
        probs = random_probs(30, 2, 6)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            plan, converged, _ = sinkhorn_plan(probs, np.array([15.0, 15.0]), epsilon=0.05, max_iters=1)
        assert not converged
        assert any("transport" in str(w.message) for w in caught)
        assert plan.shape == (30, 2)


class TestMarginals:
    def test_balanced_binary(self):
        rng = np.random.default_rng(0)
        ds = Dataset(rng.normal(size=(100, 2)), np.arange(100) % 2, 2)
        marginals = derive_class_marginals(ds, 900)
        assert marginals.tolist() == [450.0, 450.0]

    def test_single_class_error(self):
        ds = Dataset(np.ones((5, 2)), np.zeros(5, dtype=int), 2)
        with pytest.raises(ValueError):
            derive_class_marginals(ds, 100)

    def test_thirty_seventy(self):
        labels = np.array([0] * 30 + [1] * 70)
        ds = Dataset(np.ones((100, 2)), labels, 2)
        assert derive_class_marginals(ds, 100).tolist() == [30.0, 70.0]


class TestBatchInvariants:
    def test_duplicate_indices_rejected(self):
        with pytest.raises(ValueError):
            PseudoLabelBatch((PseudoLabel(0, 0, 1, 0.9), PseudoLabel(0, 1, 1, 0.8)), "greedy")

    def test_config_invariants(self):
        with pytest.raises(ValueError):
            PlabelerConfig(tau_p=0.5, tau_n=0.6)
        with pytest.raises(ValueError):
            PlabelerConfig(kappa_p=0.01, kappa_n=0.05)
        with pytest.raises(ValueError):
            PlabelerConfig(kind="mystery")

    def test_selectors_deterministic(self):
        probs = random_probs(40, 2, 9)
        a = greedy_select(probs, PlabelerConfig())
        b = greedy_select(probs, PlabelerConfig())
        assert a == b

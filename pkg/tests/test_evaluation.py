import math

import numpy as np
import pytest
from scipy.stats import binom

from conftest import GRPO, KAE, ORACLE, RPP, ZERO
from kaebench.baselines import BandwidthRule, BaselineKind
from kaebench.env import TaskSet, make_task
from kaebench.evaluation import (FrozenSnapshot, exact_gradient, exact_objective, exact_value,
                                 exact_values, grad_mse, mc_value, oracle_gradient_mse, paired_se,
                                 snapshot_from_run, suboptimality, sweep_bandwidth, value_mse,
                                 with_prompts)
from kaebench.exceptions import InsufficientSnapshots
from kaebench.history import HistoryStore
from kaebench.kernels import KernelSpec
from kaebench.policy import PolicyParams


def deterministic_policy(task):
    logits = np.zeros((task.m, task.L, task.V))
    for x, ans in enumerate(task.answers):
        logits[x, np.arange(task.L), list(ans[0])] = 60.0
    return PolicyParams(logits)


def diff_se(a, b):
    return math.sqrt(a.se ** 2 + b.se ** 2)


class TestExact:
    def test_uniform_quarter(self):
        task = TaskSet(V=4, L=1, answers=(((2,),),))
        assert exact_value(PolicyParams.zeros(1, 1, 4), task, 0) == pytest.approx(0.25)

    def test_deterministic_hit(self):
        task = make_task("needle", 3, 4, 3, k=2, seed=1)
        theta = deterministic_policy(task)
        assert exact_value(theta, task, 2) == pytest.approx(1.0, abs=1e-12)
        assert suboptimality(theta, task) == pytest.approx(0.0, abs=1e-12)

    def test_parity_uniform(self):
        task = make_task("parity", 1, 2, 2, targets=[1])
        assert exact_value(PolicyParams.zeros(1, 2, 2), task, 0) == pytest.approx(0.5)

    def test_objective_is_weighted_sum(self, rng):
        task = make_task("random", 5, 3, 2, seed=4)
        theta = PolicyParams(rng.standard_normal((5, 2, 3)))
        values = exact_values(theta, task)
        assert np.all((values >= 0) & (values <= 1))
        assert exact_objective(theta, task) == pytest.approx(np.dot(task.prompt_weights, values))

    def test_gradient_hand_example(self):
        task = TaskSet(V=2, L=1, answers=(((0,),),))
        grad = exact_gradient(PolicyParams.zeros(1, 1, 2), task)
        np.testing.assert_allclose(grad[0, 0], [0.25, -0.25], atol=1e-15)

    def test_gradient_of_constant_reward(self, rng):
        task = make_task("random", 2, 3, 2, density=1.0)
        theta = PolicyParams(rng.standard_normal((2, 2, 3)))
        assert np.max(np.abs(exact_gradient(theta, task))) <= 1e-15

    def test_gradient_finite_differences(self, ref_task, rng):
        theta = PolicyParams(rng.standard_normal((16, 3, 4)))
        grad = exact_gradient(theta, ref_task)
        for _ in range(5):
            d = rng.standard_normal(theta.shape)
            h = 1e-5
            fd = (exact_objective(theta.updated(d, h), ref_task)
                  - exact_objective(theta.updated(d, -h), ref_task)) / (2 * h)
            assert abs(fd - np.sum(grad * d)) <= 1e-6 * abs(fd)

    def test_subset_gradient(self, ref_task, rng):
        theta = PolicyParams(rng.standard_normal((16, 3, 4)))
        full = exact_gradient(theta, ref_task)
        part = exact_gradient(theta, ref_task, [3, 7])
        np.testing.assert_allclose(part[3], full[3] * 16 / 2)
        assert np.all(part[0] == 0)

    def test_suboptimality_uniform_needle(self):
        task = make_task("needle", 2, 4, 3, k=1)
        theta = PolicyParams.zeros(2, 3, 4)
        assert suboptimality(theta, task) == pytest.approx(1 - 1 / 64)

    def test_suboptimality_bounds(self, ref_task, rng):
        for _ in range(5):
            theta = PolicyParams(3 * rng.standard_normal((16, 3, 4)))
            assert 0.0 <= suboptimality(theta, ref_task) <= 1.0


class TestMcValue:
    def test_binomial_bound(self, ref_task, rng):
        theta = PolicyParams(rng.standard_normal((16, 3, 4)))
        v = exact_value(theta, ref_task, 0)
        est = mc_value(theta, ref_task, 0, 50_000, np.random.default_rng(3))
        assert abs(est - v) <= 3 * math.sqrt(v * (1 - v) / 50_000)

    def test_constant(self):
        task = make_task("random", 1, 2, 2, density=1.0)
        assert mc_value(PolicyParams.zeros(1, 2, 2), task, 0, 100, np.random.default_rng(0)) == 1.0

    def test_seeded(self, ref_task):
        theta = PolicyParams.zeros(16, 3, 4)
        a = mc_value(theta, ref_task, 1, 500, np.random.default_rng(9))
        assert a == mc_value(theta, ref_task, 1, 500, np.random.default_rng(9))

    def test_convergence_rate(self, ref_task):
        theta = PolicyParams.zeros(16, 3, 4)
        v = exact_value(theta, ref_task, 0)
        rng = np.random.default_rng(11)
        ns = [100, 1000, 10_000]
        errs = [np.mean([abs(mc_value(theta, ref_task, 0, n, rng) - v) for _ in range(100)])
                for n in ns]
        slope = np.polyfit(np.log(ns), np.log(errs), 1)[0]
        assert abs(slope + 0.5) <= 0.15


class TestValueMse:
    def test_constant_task_zero_mse(self):
        task = make_task("random", 3, 2, 2, density=1.0)
        thetas = {i: PolicyParams.zeros(3, 2, 2) for i in range(6)}
        store = HistoryStore()
        for i in range(6):
            store.record(0, i, [1.0] * 4)
        snap = FrozenSnapshot(thetas[0], store, 6, task, G=4, history_thetas=thetas)
        for baseline in (KAE, GRPO, RPP, ORACLE):
            rows = value_mse(snap, baseline, 10)
            assert all(row.mse == 0.0 for row in rows)

    def test_rows_and_aggregate(self, ref_snapshot):
        rows = value_mse(ref_snapshot, GRPO, 20)
        assert [r.prompt for r in rows] == [str(x) for x in range(16)] + ["all"]
        assert rows[-1].mse == pytest.approx(np.mean([r.mse for r in rows[:-1]]))

    def test_bias_variance_decomposition(self, ref_snapshot):
        for row in value_mse(ref_snapshot, KAE, 200, seed=5):
            assert abs(row.mse - row.bias_sq - row.variance) <= 4 * row.se + 1e-15

    def test_grpo_variance_matches_bernoulli(self, ref_snapshot):
        R, G = 500, ref_snapshot.G
        rows = value_mse(ref_snapshot, GRPO, R, seed=2)[:-1]
        values = exact_values(ref_snapshot.theta, ref_snapshot.task)
        expected, se2 = [], []
        for v in values:
            s = np.arange(G)
            pmf = binom.pmf(s, G - 1, v)
            dev2 = (s / (G - 1) - v) ** 2
            expected.append(v * (1 - v) / (G - 1))
            se2.append((np.sum(pmf * dev2 ** 2) - np.sum(pmf * dev2) ** 2) / R)
        measured = np.mean([r.variance for r in rows])
        se = math.sqrt(np.sum(se2)) / len(values)
        assert abs(measured - np.mean(expected)) <= 3 * se

    def test_kae_beats_grpo(self, ref_snapshot):
        for x in ref_snapshot.prompts:
            assert ref_snapshot.store.occurrences(x, 50) >= 5
        kae = value_mse(ref_snapshot, KAE, 500)[-1]
        grpo = value_mse(ref_snapshot, GRPO, 500)[-1]
        assert grpo.mse - kae.mse > 3 * diff_se(kae, grpo)

    def test_same_seed_same_rows(self, ref_snapshot):
        assert value_mse(ref_snapshot, KAE, 30, seed=3) == value_mse(ref_snapshot, KAE, 30, seed=3)

    def test_missing_snapshots(self, ref_snapshot):
        snap = FrozenSnapshot(ref_snapshot.theta, ref_snapshot.store, 50, ref_snapshot.task)
        with pytest.raises(InsufficientSnapshots):
            value_mse(snap, KAE, 5)

    def test_observed_history_mode(self, ref_snapshot):
        snap = with_prompts(ref_snapshot, [0, 1])
        rows = value_mse(snap, KAE, 50, history="observed")
        assert len(rows) == 3 and all(np.isfinite(r.mse) for r in rows)

    def test_too_few_replications(self, ref_snapshot):
        with pytest.raises(ValueError):
            value_mse(ref_snapshot, GRPO, 1)


class TestGradMse:
    def test_oracle_beats_zero_at_uniform_policy(self, ref_task):
        # Every completion has the same score norm under the uniform policy, so
        # the true value is the variance-minimising baseline there.
        snap = FrozenSnapshot(PolicyParams.zeros(16, 3, 4), HistoryStore(), 0, ref_task)
        oracle = grad_mse(snap, ORACLE, 500)
        zero = grad_mse(snap, ZERO, 500)
        assert zero.mse - oracle.mse > 3 * paired_se(zero, oracle)

    def test_paired_se_below_unpaired(self, ref_snapshot):
        kae = grad_mse(ref_snapshot, KAE, 200)
        grpo = grad_mse(ref_snapshot, GRPO, 200)
        assert paired_se(grpo, kae) < diff_se(grpo, kae)

    def test_orderings(self, ref_snapshot):
        kae = grad_mse(ref_snapshot, KAE, 500)
        grpo = grad_mse(ref_snapshot, GRPO, 500)
        rpp = grad_mse(ref_snapshot, RPP, 500)
        assert kae.mse <= grpo.mse + grpo.se
        assert grpo.mse < rpp.mse - 3 * rpp.se

    def test_constant_task(self):
        task = make_task("random", 2, 2, 2, density=1.0)
        thetas = {i: PolicyParams.zeros(2, 2, 2) for i in range(4)}
        snap = FrozenSnapshot(thetas[0], HistoryStore(), 4, task, G=3, history_thetas=thetas)
        for baseline in (KAE, GRPO, RPP, ORACLE):
            assert grad_mse(snap, baseline, 5).mse == 0.0

    def test_oracle_matches_closed_form(self, ref_snapshot):
        row = grad_mse(ref_snapshot, ORACLE, 2000, seed=8)
        exact = oracle_gradient_mse(ref_snapshot.theta, ref_snapshot.task, ref_snapshot.prompts,
                                    ref_snapshot.G)
        assert abs(row.mse - exact) <= 3 * row.se


class TestSweep:
    def test_single_point(self, ref_snapshot):
        rows = sweep_bandwidth(ref_snapshot, [KernelSpec()], [4], 10)
        assert [r["kernel"] for r in rows] == ["triangular", "group_mean_loo", "batch_mean_loo"]
        assert math.isnan(rows[-1]["bandwidth"])

    def test_row_count(self, ref_snapshot):
        rows = sweep_bandwidth(ref_snapshot, [KernelSpec(), KernelSpec("uniform")], [2, 4, 8], 5)
        assert len(rows) == 2 * 3 + 2

    def test_triangular_grid_beats_grpo(self, ref_snapshot):
        rows = sweep_bandwidth(ref_snapshot, [KernelSpec()], [2, 4, 8], 300)
        grpo = next(r for r in rows if r["kernel"] == "group_mean_loo")
        for r in rows[:3]:
            assert r["mse"] < grpo["mse"]

    def test_empty_grid(self, ref_snapshot):
        with pytest.raises(ValueError):
            sweep_bandwidth(ref_snapshot, [], [4], 5)


class TestSnapshotFromRun:
    def test_last_batch(self, snapshot_run, ref_task):
        snap = snapshot_from_run(snapshot_run, ref_task, 50, "last_batch")
        assert snap.prompts == list(snapshot_run.reports[49].prompts)
        assert set(snap.history_thetas) == set(range(50))

    def test_needs_thetas(self, ref_task):
        from kaebench.trainer import TrainConfig, train
        run = train(TrainConfig(steps=3), ref_task)
        with pytest.raises(InsufficientSnapshots):
            snapshot_from_run(run, ref_task, 2)

    def test_store_before_iteration(self, ref_task):
        store = HistoryStore().record(0, 5, [1.0])
        with pytest.raises(ValueError):
            FrozenSnapshot(PolicyParams.zeros(16, 3, 4), store, 5, ref_task)


def test_stone_bandwidth_lookback(ref_snapshot):
    baseline = BaselineKind("kae_nw", bandwidth=BandwidthRule("stone", c=0.2))
    rows = value_mse(ref_snapshot, baseline, 20)
    assert np.isfinite(rows[-1].mse)

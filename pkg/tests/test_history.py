import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kaebench.exceptions import HistoryCorruption
from kaebench.history import (HistoryStore, SamplingSchedule, ScheduleState,
                              effective_sample_size, next_minibatch)


class TestRecord:
    def test_first_record(self):
        store = HistoryStore().record(0, 0, [1, 0])
        assert len(store.records(0)) == 1

    def test_second_record(self):
        store = HistoryStore().record(0, 0, [1, 0]).record(0, 3, [1])
        assert [r.iteration for r in store.records(0)] == [0, 3]

    def test_same_iteration_is_corruption(self):
        store = HistoryStore().record(0, 0, [1, 0])
        with pytest.raises(HistoryCorruption):
            store.record(0, 0, [1])

    @pytest.mark.parametrize("rewards", [[], [1.5], [-0.1], [float("nan")]])
    def test_bad_rewards(self, rewards):
        with pytest.raises(HistoryCorruption):
            HistoryStore().record(0, 0, rewards)

    def test_retention_evicts_old(self):
        store = HistoryStore(retention=2)
        for i in range(5):
            store.record(0, i, [1.0])
        assert [r.iteration for r in store.records(0)] == [2, 3, 4]

    def test_full_precision(self):
        store = HistoryStore().record(0, 0, [1 / 3])
        assert store.records(0)[0].rewards[0] == 1 / 3


class TestPastRecords:
    def test_empty(self):
        assert HistoryStore().past_records(0, 5, 10) == []

    def test_lag_filter(self):
        store = HistoryStore().record(0, 1, [1]).record(0, 2, [0])
        assert store.past_records(0, 4, 2) == [(2, 0.0)]

    def test_flattening(self):
        store = HistoryStore().record(0, 1, [1, 0])
        assert store.past_records(0, 3, 10) == [(1, 1.0), (1, 0.0)]

    def test_excludes_current_iteration(self):
        store = HistoryStore().record(0, 3, [1])
        assert store.past_records(0, 3) == []


class TestEffectiveSampleSize:
    def _store(self, n):
        store = HistoryStore()
        for i in range(n):
            store.record(0, i, [1.0])
        return store

    def test_two_records(self):
        assert effective_sample_size(self._store(2), 0, 4) == 11

    def test_empty_single(self):
        assert effective_sample_size(self._store(0), 0, 1) == 0

    def test_three_single(self):
        assert effective_sample_size(self._store(3), 0, 1) == 3

    @given(st.integers(0, 30), st.integers(1, 8))
    def test_increases_by_G(self, n, G):
        store = self._store(n)
        before = effective_sample_size(store, 0, G)
        store.record(0, n, [0.0] * G)
        assert effective_sample_size(store, 0, G) == before + G


class TestSchedule:
    def test_block_reuse_pattern(self):
        sched = SamplingSchedule("block_reuse", 2, 4, J=2)
        state = sched.initial_state(np.random.default_rng(0))
        batches = []
        for _ in range(4):
            b, state = next_minibatch(sched, state, None)
            batches.append(tuple(b))
        assert batches[0] == batches[1] and batches[2] == batches[3]
        assert set(batches[0]).isdisjoint(batches[2])

    def test_iid_full_batch_is_permutation(self):
        sched = SamplingSchedule("iid", 3, 3)
        b, _ = next_minibatch(sched, sched.initial_state(None), np.random.default_rng(1))
        assert sorted(b) == [0, 1, 2]

    def test_blocks_visited_before_repeat(self):
        # exhaustive over seeds: J=1 visits both halves of the partition first
        for seed in range(50):
            sched = SamplingSchedule("block_reuse", 2, 4, J=1)
            state = sched.initial_state(np.random.default_rng(seed))
            a, state = next_minibatch(sched, state, None)
            b, state = next_minibatch(sched, state, None)
            assert sorted(a + b) == [0, 1, 2, 3]

    def test_iid_inclusion_frequency(self):
        m, B, calls = 10, 3, 10_000
        sched = SamplingSchedule("iid", B, m)
        rng = np.random.default_rng(7)
        state = sched.initial_state(rng)
        counts = np.zeros(m)
        for _ in range(calls):
            b, state = next_minibatch(sched, state, rng)
            counts[b] += 1
        p = B / m
        tol = 3 * math.sqrt(p * (1 - p) / calls)
        assert np.all(np.abs(counts / calls - p) <= tol)

    @given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 4), st.integers(0, 100))
    def test_block_reuse_cycle(self, m, B, J, seed):
        B = min(B, m)
        sched = SamplingSchedule("block_reuse", B, m, J)
        state = sched.initial_state(np.random.default_rng(seed))
        seen = []
        for _ in range(sched.cycle_length):
            b, state = next_minibatch(sched, state, None)
            seen.extend(b)
        assert sorted(seen) == sorted(list(range(m)) * J)

    def test_missing_partition(self):
        sched = SamplingSchedule("block_reuse", 2, 4)
        with pytest.raises(ValueError):
            next_minibatch(sched, ScheduleState(), None)

    def test_invalid(self):
        with pytest.raises(ValueError):
            SamplingSchedule("iid", 5, 4)

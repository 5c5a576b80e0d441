"""Per-prompt reward history and prompt-minibatch schedules."""

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import HistoryCorruption


@dataclass(frozen=True)
class RewardRecord:
    """The G rewards observed for one prompt at one training step."""

    iteration: int
    rewards: tuple

    def __post_init__(self):
        if self.iteration < 0:
            raise HistoryCorruption("record iteration must be nonnegative")
        rewards = tuple(float(z) for z in self.rewards)
        if not rewards:
            raise HistoryCorruption("a reward record needs at least one reward")
        object.__setattr__(self, "rewards", rewards)


class HistoryStore:
    """Chronological reward records per prompt.

    Parameters
    ----------
    retention : int or None
        Records whose iteration is more than ``retention`` steps older than
        the newest recorded step of the same prompt are evicted. ``None``
        keeps everything.
    reward_bounds : (float, float)
        Every stored reward must lie in this closed interval.
    """

    def __init__(self, retention=None, reward_bounds=(0.0, 1.0)):
        if retention is not None and retention < 1:
            raise ValueError("retention must be a positive integer or None")
        self.retention = retention
        self.reward_bounds = tuple(reward_bounds)
        self._records = {}

    def __repr__(self):
        counts = {p: len(r) for p, r in self._records.items()}
        return f"HistoryStore(retention={self.retention}, records={counts})"

    def __eq__(self, other):
        if not isinstance(other, HistoryStore):
            return NotImplemented
        return (self.retention == other.retention
                and self._records == other._records)

    def copy(self):
        new = HistoryStore(self.retention, self.reward_bounds)
        new._records = {p: list(r) for p, r in self._records.items()}
        return new

    @property
    def prompts(self):
        return sorted(self._records)

    def records(self, prompt):
        return tuple(self._records.get(prompt, ()))

    def last_iteration(self, prompt):
        recs = self._records.get(prompt)
        return recs[-1].iteration if recs else None

    def record(self, prompt, iteration, rewards):
        """Append the rewards seen for ``prompt`` at ``iteration``; returns self."""
        iteration = int(iteration)
        last = self.last_iteration(prompt)
        if last is not None and iteration <= last:
            raise HistoryCorruption(
                f"prompt {prompt}: iteration {iteration} is not after last recorded {last}")
        lo, hi = self.reward_bounds
        arr = np.asarray(rewards, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise HistoryCorruption("rewards must be a nonempty 1-d sequence")
        if not np.all(np.isfinite(arr)) or np.any(arr < lo) or np.any(arr > hi):
            raise HistoryCorruption(f"reward outside bounds [{lo}, {hi}]")
        recs = self._records.setdefault(prompt, [])
        recs.append(RewardRecord(iteration, tuple(arr.tolist())))
        if self.retention is not None:
            oldest = iteration - self.retention
            while recs and recs[0].iteration < oldest:
                recs.pop(0)
        return self

    def past_records(self, prompt, current_iter, max_lag=None):
        """Flattened ``(iteration, reward)`` pairs strictly before ``current_iter``.

        Only records with ``current_iter - iteration <= max_lag`` are kept.
        """
        if current_iter < 0:
            raise ValueError("current_iter must be nonnegative")
        out = []
        for rec in self._records.get(prompt, ()):
            lag = current_iter - rec.iteration
            if lag <= 0:
                continue
            if max_lag is not None and lag > max_lag:
                continue
            out.extend((rec.iteration, z) for z in rec.rewards)
        return out

    def past_arrays(self, prompt, current_iter, max_lag=None):
        """Like :meth:`past_records` but as ``(iterations, rewards)`` arrays."""
        pairs = self.past_records(prompt, current_iter, max_lag)
        if not pairs:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        its, zs = zip(*pairs)
        return np.asarray(its, dtype=np.int64), np.asarray(zs, dtype=np.float64)

    def occurrences(self, prompt, current_iter=None):
        recs = self._records.get(prompt, ())
        if current_iter is None:
            return len(recs)
        return sum(1 for r in recs if r.iteration < current_iter)

    def reward_count(self, prompt, current_iter=None):
        recs = self._records.get(prompt, ())
        return sum(len(r.rewards) for r in recs
                   if current_iter is None or r.iteration < current_iter)


def effective_sample_size(store, prompt, G, current_iter=None):
    """``G * past occurrences + (G - 1)`` current leave-one-out samples."""
    if G < 1:
        raise ValueError("G must be >= 1")
    return G * store.occurrences(prompt, current_iter) + (G - 1)


@dataclass(frozen=True)
class SamplingSchedule:
    """How the trainer picks B of the m prompts at every step.

    ``kind="iid"`` draws a fresh uniform subset without replacement each
    call. ``kind="block_reuse"`` shuffles the prompts once, cuts them into
    ``ceil(m / B)`` blocks and serves each block for ``J`` consecutive calls,
    cycling through the blocks. When ``B`` does not divide ``m`` the last
    block is shorter.
    """

    kind: str
    batch_size: int
    prompt_count: int
    J: int = 1

    def __post_init__(self):
        if self.kind not in ("iid", "block_reuse"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 1 <= self.batch_size <= self.prompt_count:
            raise ValueError("schedule requires 1 <= batch_size <= prompt_count")
        if self.J < 1:
            raise ValueError("block_reuse requires J >= 1")

    @property
    def n_blocks(self):
        return math.ceil(self.prompt_count / self.batch_size)

    @property
    def cycle_length(self):
        return self.n_blocks * self.J

    def initial_state(self, rng):
        """Fresh schedule state; block_reuse consumes one shuffle from ``rng``."""
        if self.kind == "iid":
            return ScheduleState(calls=0)
        order = rng.permutation(self.prompt_count)
        blocks = tuple(tuple(int(p) for p in order[i:i + self.batch_size])
                       for i in range(0, self.prompt_count, self.batch_size))
        return ScheduleState(calls=0, blocks=blocks)


@dataclass(frozen=True)
class ScheduleState:
    calls: int = 0
    blocks: tuple = field(default=None)


def next_minibatch(schedule, state, rng):
    """Return ``(prompts, new_state)`` for the next training step."""
    if schedule.kind == "iid":
        prompts = rng.choice(schedule.prompt_count, size=schedule.batch_size, replace=False)
        return [int(p) for p in prompts], ScheduleState(calls=state.calls + 1)
    if state.blocks is None:
        raise ValueError("block_reuse schedule state has no partition; use initial_state")
    block = (state.calls // schedule.J) % len(state.blocks)
    return list(state.blocks[block]), ScheduleState(calls=state.calls + 1, blocks=state.blocks)

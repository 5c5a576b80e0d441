"""Policy-gradient training loop with pluggable value baselines.

One step: pick a minibatch of prompts, sample ``G`` completions per prompt
from the current policy, score them, build leave-one-out baselines, average
``advantage * score`` over the ``B * G`` pairs, take a gradient-ascent step,
and only then append the step's rewards to the history. A step therefore
never sees its own rewards as history; they enter only as the current-group
terms of the kernel baseline.

Degenerate cases fall back instead of failing: a kernel baseline with no
usable history uses the group mean when ``G >= 2`` and no baseline when
``G == 1``; the group and batch means with a single reward use no baseline.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .baselines import BaselineKind, advantages, history_arrays, retention_for, step_values
from .evaluation import exact_objective, exact_values
from .exceptions import NumericalFailure
from .history import HistoryStore, SamplingSchedule, next_minibatch
from .policy import PolicyParams, accumulate_scores, sample_many
from .rng import derive_rng


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of a training run.

    ``lr_kind="inverse"`` uses ``eta_i = beta / (i + 1)`` (iterations start
    at 0); ``"constant"`` uses ``eta``. ``retention="auto"`` keeps just the
    history the baseline can reach (see :func:`~kaebench.baselines.retention_for`).
    """

    steps: int = 100
    B: int = 4
    G: int = 4
    baseline: BaselineKind = field(default_factory=BaselineKind)
    schedule: str = "block_reuse"
    J: int = 10
    lr_kind: str = "inverse"
    eta: float = 1.0
    beta: float = 1.0
    seed: int = 0
    snapshot_steps: tuple = ()
    keep_thetas: bool = False
    retention: object = "auto"
    algorithm: str = ""

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.B < 1 or self.G < 1:
            raise ValueError("B and G must be >= 1")
        if self.lr_kind not in ("constant", "inverse"):
            raise ValueError(f"unknown learning-rate kind {self.lr_kind!r}")
        if self.lr_kind == "inverse" and not self.beta > 0:
            raise ValueError("inverse learning rate needs beta > 0")
        if self.schedule not in ("iid", "block_reuse"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def learning_rate(self, iteration):
        if self.lr_kind == "constant":
            return self.eta
        return self.beta / (iteration + 1)

    def sampling_schedule(self, task):
        return SamplingSchedule(self.schedule, self.B, task.m, self.J)

    @property
    def name(self):
        return self.algorithm or self.baseline.kind


@dataclass
class TrainState:
    """Mutable loop state; :func:`step` advances it in place and returns it."""

    theta: PolicyParams
    store: HistoryStore
    iteration: int
    schedule_state: object
    rngs: dict


@dataclass(frozen=True)
class StepReport:
    iteration: int
    prompts: tuple
    rewards: tuple
    mean_reward: float
    grad_norm: float
    baseline_values: tuple
    baseline_used: tuple
    lr: float


@dataclass
class RunRecord:
    config: TrainConfig
    reports: list
    theta: PolicyParams
    objective: list
    snapshots: dict = field(default_factory=dict)
    thetas: list = None

    @property
    def final_objective(self):
        return self.objective[-1]


def init_state(config, task, theta=None):
    if theta is None:
        theta = PolicyParams.zeros(task.m, task.L, task.V)
    retention = config.retention
    if retention == "auto":
        retention = retention_for(config.baseline, config.steps)
    schedule = config.sampling_schedule(task)
    rngs = {
        "schedule": derive_rng(config.seed, "schedule"),
        "sampling": derive_rng(config.seed, "sampling"),
    }
    return TrainState(theta=theta, store=HistoryStore(retention), iteration=0,
                      schedule_state=schedule.initial_state(rngs["schedule"]), rngs=rngs)


def estimate_gradient(state, batch, config, task):
    """Gradient estimate for a sampled step.

    Parameters
    ----------
    batch : tuple
        ``(prompts, tokens, rewards)`` with shapes ``(B,)``, ``(B, G, L)``
        and ``(B, G)``, drawn under ``state.theta``.

    Returns
    -------
    grad : ndarray, shape (m, L, V)
    values : ndarray, shape (B, G)
        Baseline value used for each completion.
    used : list of str
        Baseline applied per prompt after fallbacks.
    """
    prompts, tokens, rewards = batch
    rewards = np.asarray(rewards, dtype=np.float64)
    B, G = rewards.shape
    baseline = config.baseline
    histories = oracle = None
    if baseline.is_kae:
        histories = [history_arrays(state.store, x, state.iteration) for x in prompts]
    elif baseline.kind == "oracle":
        oracle = exact_values(state.theta, task)[list(prompts)]
    values, used = step_values(baseline, rewards, prompts, state.iteration,
                               histories=histories, oracle=oracle)
    adv = advantages(baseline, rewards, values)
    flat_prompts = np.repeat(np.asarray(prompts, dtype=np.int64), G)
    grad = accumulate_scores(state.theta, flat_prompts,
                             np.asarray(tokens).reshape(B * G, -1), adv.ravel() / (B * G))
    return grad, values, used


def step(state, config, task):
    """Run one training iteration; returns ``(state, report)``."""
    if state.iteration >= config.steps:
        raise ValueError(f"run already finished {config.steps} steps")
    schedule = config.sampling_schedule(task)
    prompts, state.schedule_state = next_minibatch(schedule, state.schedule_state,
                                                   state.rngs["schedule"])
    tokens = sample_many(state.theta, prompts, config.G, state.rngs["sampling"])
    rewards = np.stack([task.rewards(x, tokens[b]) for b, x in enumerate(prompts)])
    grad, values, used = estimate_gradient(state, (prompts, tokens, rewards), config, task)
    grad_norm = float(np.sqrt(np.sum(grad ** 2)))
    lr = config.learning_rate(state.iteration)
    if not math.isfinite(grad_norm):
        raise NumericalFailure(
            f"non-finite gradient at step {state.iteration}",
            {"iteration": state.iteration, "prompts": list(prompts),
             "rewards": rewards.tolist(), "baseline_values": values.tolist()})
    with np.errstate(over="ignore", invalid="ignore"):
        new_logits = state.theta.logits + lr * grad
    if not np.all(np.isfinite(new_logits)):
        raise NumericalFailure(f"non-finite parameters after step {state.iteration}",
                               {"iteration": state.iteration, "lr": lr, "grad_norm": grad_norm})
    i = state.iteration
    state.theta = PolicyParams(new_logits)
    for b, x in enumerate(prompts):
        state.store.record(x, i, rewards[b])
    state.iteration = i + 1
    report = StepReport(
        iteration=i,
        prompts=tuple(int(x) for x in prompts),
        rewards=tuple(tuple(float(z) for z in row) for row in rewards),
        mean_reward=float(rewards.mean()),
        grad_norm=grad_norm,
        baseline_values=tuple(float(v) for v in values.mean(axis=1)),
        baseline_used=tuple(used),
        lr=float(lr),
    )
    return state, report


def train(config, task, theta=None):
    """Run ``config.steps`` iterations from ``theta`` (uniform policy by default)."""
    state = init_state(config, task, theta)
    reports = []
    objective = [exact_objective(state.theta, task)]
    thetas = [state.theta] if config.keep_thetas else None
    snapshots = {}
    wanted = set(config.snapshot_steps)
    if 0 in wanted:
        snapshots[0] = state.theta
    for _ in range(config.steps):
        state, report = step(state, config, task)
        reports.append(report)
        objective.append(exact_objective(state.theta, task))
        if thetas is not None:
            thetas.append(state.theta)
        if state.iteration in wanted:
            snapshots[state.iteration] = state.theta
    return RunRecord(config=config, reports=reports, theta=state.theta, objective=objective,
                     snapshots=snapshots, thetas=thetas)

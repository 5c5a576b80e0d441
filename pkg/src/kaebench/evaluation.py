"""Exact oracles by enumeration and the Monte-Carlo evaluation harnesses.

The harnesses freeze a policy snapshot and a set of prompts, then repeatedly
resample the completions an estimator would see, comparing each estimate
with the exact quantity computed by enumerating every completion:

* :func:`value_mse` -- error of each baseline's value estimate for a fixed
  leave-out slot, per prompt and averaged over prompts.
* :func:`grad_mse` -- squared distance between a full-step gradient estimate
  and the exact gradient of the same prompts.
* :func:`sweep_bandwidth` -- :func:`value_mse` of the kernel baseline over a
  grid of kernels and windows, with the group-mean and batch-mean rows as
  references.

Kernel baselines also depend on past rewards. Those are resampled at the
iterations where the prompt really was observed (within the kernel's reach),
each from the policy that was current at that iteration.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import BaselineKind, BandwidthRule, advantages, resolve_bandwidth, step_values
from .exceptions import InsufficientSnapshots
from .history import HistoryStore
from .kernels import max_lag
from .policy import accumulate_scores, sample_many
from .rng import derive_rng


def _completion_log_probs(theta, task, prompts=None):
    comps = task.completions()
    lp = theta.log_probs()
    if prompts is not None:
        lp = lp[np.asarray(prompts)]
    # lp[:, t, comps[:, t]] summed over t -> (n_prompts, N)
    per_pos = lp[:, np.arange(task.L)[None, :], comps]
    return comps, per_pos.sum(axis=-1)


def completion_probs(theta, task, prompt):
    """Probability of every enumerated completion for ``prompt``."""
    _, lp = _completion_log_probs(theta, task, [prompt])
    return np.exp(lp[0])


def exact_values(theta, task):
    """Exact value of every prompt, shape ``(m,)``."""
    _, lp = _completion_log_probs(theta, task)
    return np.sum(np.exp(lp) * task.reward_table, axis=1)


def exact_value(theta, task, prompt):
    _, lp = _completion_log_probs(theta, task, [prompt])
    return float(np.dot(np.exp(lp[0]), task.reward_table[prompt]))


def exact_objective(theta, task):
    """``J(theta) = sum_x w_x V(x)``."""
    return float(np.dot(task.prompt_weights, exact_values(theta, task)))


def optimal_objective(task):
    """Supremum of J over the tabular policy class (every prompt has an answer)."""
    return float(np.dot(task.prompt_weights, task.reward_table.max(axis=1)))


def suboptimality(theta, task):
    return optimal_objective(task) - exact_objective(theta, task)


def prompt_gradient(theta, task, prompt):
    """Gradient of ``V(prompt)`` w.r.t. ``logits[prompt]``, shape ``(L, V)``."""
    comps, lp = _completion_log_probs(theta, task, [prompt])
    pr = np.exp(lp[0]) * task.reward_table[prompt]
    value = pr.sum()
    out = np.stack([np.bincount(comps[:, t], weights=pr, minlength=task.V)
                    for t in range(task.L)])
    return out - value * theta.probs(prompt)


def exact_gradient(theta, task, prompts=None):
    """Exact policy gradient.

    With ``prompts=None`` this is ``grad J = sum_x w_x grad V(x)``. Given a
    minibatch it is ``(1/B) sum_b grad V(prompts[b])``, the expectation of a
    step's gradient estimate when the prompts are held fixed.
    """
    out = np.zeros(theta.shape)
    if prompts is None:
        for x, w in enumerate(task.prompt_weights):
            if w:
                out[x] = w * prompt_gradient(theta, task, x)
        return out
    prompts = list(prompts)
    for x in prompts:
        out[x] += prompt_gradient(theta, task, x) / len(prompts)
    return out


def oracle_gradient_mse(theta, task, prompts, G):
    """Exact MSE of the step gradient estimate that uses the true values.

    The ``B * G`` terms ``(Z - V) * score`` are independent with mean
    ``grad V``, so the MSE is ``sum_b G * (E||(Z-V) s||^2 - ||grad V_b||^2) / (BG)^2``.
    """
    B = len(prompts)
    total = 0.0
    comps = task.completions()
    for x in prompts:
        probs = theta.probs(x)
        pi = completion_probs(theta, task, x)
        r = task.reward_table[x]
        value = float(np.dot(pi, r))
        sq_p = (probs ** 2).sum(axis=1)
        score_sq = sum(sq_p[t] - 2.0 * probs[t, comps[:, t]] + 1.0 for t in range(task.L))
        second = float(np.sum(pi * (r - value) ** 2 * score_sq))
        grad = prompt_gradient(theta, task, x)
        total += G * (second - float(np.sum(grad ** 2)))
    return total / (B * G) ** 2


def mc_value(theta, task, prompt, n_samples, rng):
    """Mean reward of ``n_samples`` completions drawn from ``theta``."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    tokens = sample_many(theta, [prompt], n_samples, rng)[0]
    return float(task.rewards(prompt, tokens).mean())


@dataclass
class FrozenSnapshot:
    """Everything needed to resample one training step.

    Parameters
    ----------
    theta : PolicyParams
        Policy at ``iteration``.
    store : HistoryStore
        Rewards observed strictly before ``iteration``.
    iteration : int
    task : TaskSet
    prompts : list of int, optional
        Prompts forming the evaluated step; all prompts of the task when
        omitted.
    G : int
    history_thetas : dict
        ``{iteration: PolicyParams}`` for past steps; needed by kernel
        baselines to resample their history.
    """

    theta: object
    store: HistoryStore
    iteration: int
    task: object
    prompts: list = None
    G: int = 4
    history_thetas: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.prompts is None:
            self.prompts = list(range(self.task.m))
        for p in self.store.prompts:
            last = self.store.last_iteration(p)
            if last is not None and last >= self.iteration:
                raise ValueError(f"store has a record at {last} >= snapshot iteration")


@dataclass
class MseRow:
    step: int
    algorithm: str
    prompt: str
    mse: float
    bias_sq: float
    variance: float
    replications: int
    se: float = float("nan")
    # per-replication losses, for paired comparisons under common random numbers
    samples: np.ndarray = field(default=None, repr=False, compare=False)


def paired_se(a, b):
    """Standard error of ``a.mse - b.mse`` from per-replication samples of the same draws."""
    d = np.asarray(a.samples) - np.asarray(b.samples)
    return float(d.std(ddof=1) / np.sqrt(d.size))


def _lookback(baseline, snapshot, prompt):
    rule = baseline.bandwidth
    if rule.kind == "fixed_window":
        scale = rule.window
    else:
        occ = snapshot.store.occurrences(prompt, snapshot.iteration)
        N = snapshot.G * occ + snapshot.G - 1
        scale = resolve_bandwidth(rule, max(N, 1), snapshot.iteration)
    if baseline.kind == "kae_alg1":
        # the normaliser counts every stored reward, so resample all of them
        return None
    return max_lag(baseline.kernel, scale)


def _history_plan(snapshot, baseline, x, mode):
    """Iterations (one per past occurrence) whose rewards are resampled for ``x``."""
    lookback = _lookback(baseline, snapshot, x)
    i = snapshot.iteration
    if mode == "lookback":
        if lookback is None:
            lookback = i
        return [(i - lag, snapshot.G) for lag in range(min(lookback, i), 0, -1)]
    records = [r for r in snapshot.store.records(x) if r.iteration < i]
    if lookback is not None:
        records = [r for r in records if i - r.iteration <= lookback]
    return [(r.iteration, len(r.rewards)) for r in records]


def _resample_histories(snapshot, baseline, R, rng, mode="lookback"):
    """Per prompt: ``(iters, rewards[R, n], count, occurrences)``.

    ``mode="lookback"`` pretends the prompt was observed with ``G``
    completions at every step within the kernel's reach, each drawn from the
    policy of that step. ``mode="observed"`` resamples only the steps at
    which the prompt appears in ``snapshot.store``.
    """
    if mode not in ("lookback", "observed"):
        raise ValueError(f"unknown history mode {mode!r}")
    out = []
    for x in snapshot.prompts:
        plan = _history_plan(snapshot, baseline, x, mode)
        iters, draws = [], []
        for it, n in plan:
            theta = snapshot.history_thetas.get(it)
            if theta is None:
                raise InsufficientSnapshots(f"no policy snapshot for iteration {it} (prompt {x})")
            tokens = sample_many(theta, [x], R * n, rng)[0]
            draws.append(snapshot.task.rewards(x, tokens).reshape(R, n))
            iters.extend([it] * n)
        rewards = np.concatenate(draws, axis=1) if draws else np.zeros((R, 0))
        if mode == "lookback":
            occ = len(plan)
            count = rewards.shape[1]
        else:
            occ = snapshot.store.occurrences(x, snapshot.iteration)
            count = snapshot.store.reward_count(x, snapshot.iteration)
        out.append((np.asarray(iters, dtype=np.int64), rewards, count, occ))
    return out


def _current_draws(snapshot, R, seed, tag):
    rng = derive_rng(seed, tag + ".current", snapshot.iteration)
    tokens = sample_many(snapshot.theta, snapshot.prompts, R * snapshot.G, rng)
    B = len(snapshot.prompts)
    tokens = tokens.reshape(B, R, snapshot.G, -1).transpose(1, 0, 2, 3)
    rewards = np.stack([snapshot.task.rewards(x, tokens[:, b]) for b, x in
                        enumerate(snapshot.prompts)], axis=1)
    return tokens, rewards


def _step_estimates(snapshot, baseline, rewards, histories, oracle, r):
    hist_r = None
    if baseline.is_kae:
        hist_r = [(it, hz[r], count, occ) for it, hz, count, occ in histories]
    values, _ = step_values(baseline, rewards[r], snapshot.prompts, snapshot.iteration,
                            histories=hist_r, oracle=oracle)
    return values


def value_mse(snapshot, baseline, replications, seed=0, algorithm=None, leave_out=0,
              history="lookback"):
    """Monte-Carlo MSE of a baseline's value estimate against the exact value.

    Current-step completions come from a stream that does not depend on the
    baseline, so different baselines see the same draws.

    Returns
    -------
    list of MseRow
        One row per prompt (in ``snapshot.prompts`` order) then an ``"all"``
        row with the unweighted mean over prompts.
    """
    if replications < 2:
        raise ValueError("replications must be >= 2")
    R = replications
    name = algorithm or baseline.kind
    truth = np.array([exact_value(snapshot.theta, snapshot.task, x) for x in snapshot.prompts])
    _, rewards = _current_draws(snapshot, R, seed, "value_mse")
    histories = None
    if baseline.is_kae:
        histories = _resample_histories(snapshot, baseline, R,
                                        derive_rng(seed, "value_mse.history", snapshot.iteration),
                                        history)
    est = np.empty((R, len(snapshot.prompts)))
    for r in range(R):
        est[r] = _step_estimates(snapshot, baseline, rewards, histories, truth, r)[:, leave_out]
    err = est - truth
    rows = []
    for b, x in enumerate(snapshot.prompts):
        e = err[:, b]
        rows.append(MseRow(snapshot.iteration, name, str(x), float(np.mean(e ** 2)),
                           float(np.mean(e) ** 2), float(np.var(e)), R,
                           float(np.std(e ** 2, ddof=1) / np.sqrt(R))))
    per_rep = np.mean(err ** 2, axis=1)
    rows.append(MseRow(snapshot.iteration, name, "all",
                       float(np.mean([row.mse for row in rows])),
                       float(np.mean([row.bias_sq for row in rows])),
                       float(np.mean([row.variance for row in rows])), R,
                       float(np.std(per_rep, ddof=1) / np.sqrt(R)), per_rep))
    return rows


def grad_mse(snapshot, baseline, replications, seed=0, algorithm=None, history="lookback"):
    """Monte-Carlo MSE of one step's gradient estimate.

    The target is :func:`exact_gradient` over ``snapshot.prompts``, the mean
    of the estimator when the prompts are held fixed.
    """
    if replications < 2:
        raise ValueError("replications must be >= 2")
    R = replications
    name = algorithm or baseline.kind
    theta, task = snapshot.theta, snapshot.task
    target = exact_gradient(theta, task, snapshot.prompts)
    truth = np.array([exact_value(theta, task, x) for x in snapshot.prompts])
    tokens, rewards = _current_draws(snapshot, R, seed, "grad_mse")
    histories = None
    if baseline.is_kae:
        histories = _resample_histories(snapshot, baseline, R,
                                        derive_rng(seed, "grad_mse.history", snapshot.iteration),
                                        history)
    B, G = len(snapshot.prompts), snapshot.G
    flat_prompts = np.repeat(np.asarray(snapshot.prompts), G)
    losses = np.empty(R)
    for r in range(R):
        values = _step_estimates(snapshot, baseline, rewards, histories, truth, r)
        adv = advantages(baseline, rewards[r], values)
        g = accumulate_scores(theta, flat_prompts, tokens[r].reshape(B * G, -1),
                              adv.ravel() / (B * G))
        losses[r] = float(np.sum((g - target) ** 2))
    return MseRow(snapshot.iteration, name, "all", float(losses.mean()), float("nan"),
                  float("nan"), R, float(losses.std(ddof=1) / np.sqrt(R)), losses)


def sweep_bandwidth(snapshot, kernels, windows, replications, seed=0, history="lookback"):
    """Value MSE of ``kae_nw`` over ``kernels x windows`` plus two reference rows.

    Returns a list of dicts with keys ``kernel, bandwidth, mse, se``; the
    reference rows carry ``kernel="group_mean_loo"`` / ``"batch_mean_loo"``
    and ``bandwidth=nan``.
    """
    if not kernels or not windows:
        raise ValueError("sweep grid must be nonempty")
    rows = []
    for kernel in kernels:
        for w in windows:
            bl = BaselineKind("kae_nw", kernel=kernel,
                              bandwidth=BandwidthRule("fixed_window", window=w))
            agg = value_mse(snapshot, bl, replications, seed, history=history)[-1]
            rows.append({"kernel": kernel_label(kernel), "bandwidth": float(w),
                         "mse": agg.mse, "se": agg.se})
    for kind in ("group_mean_loo", "batch_mean_loo"):
        agg = value_mse(snapshot, BaselineKind(kind), replications, seed)[-1]
        rows.append({"kernel": kind, "bandwidth": float("nan"), "mse": agg.mse, "se": agg.se})
    return rows


def kernel_label(kernel):
    if kernel.kind == "exponential":
        return f"exponential(rho={kernel.rho!r})"
    if kernel.kind == "higher_order":
        return f"higher_order(s={kernel.order})"
    return kernel.kind


def snapshot_from_run(run, task, iteration, prompts=None):
    """Freeze a training run at ``iteration``.

    The store is rebuilt from the step reports before ``iteration`` and every
    earlier policy becomes available for history resampling. ``prompts``
    defaults to every prompt of the task; pass ``"last_batch"`` for the
    minibatch of step ``iteration - 1``.
    """
    if not 1 <= iteration <= len(run.reports):
        raise ValueError(f"iteration must lie in [1, {len(run.reports)}]")
    if run.thetas is None or len(run.thetas) <= iteration:
        raise InsufficientSnapshots("run did not keep per-step policy snapshots")
    store = HistoryStore()
    for rep in run.reports[:iteration]:
        for x, z in zip(rep.prompts, rep.rewards):
            store.record(x, rep.iteration, z)
    if prompts is None:
        prompts = list(range(task.m))
    elif prompts == "last_batch":
        prompts = list(run.reports[iteration - 1].prompts)
    return FrozenSnapshot(theta=run.thetas[iteration], store=store, iteration=iteration,
                          task=task, prompts=list(prompts), G=run.config.G,
                          history_thetas={i: run.thetas[i] for i in range(iteration)})


def with_prompts(snapshot, prompts):
    return replace(snapshot, prompts=list(prompts))

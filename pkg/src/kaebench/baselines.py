"""Value baselines and advantages.

Every baseline here estimates the value of the prompt for completion ``g``
without looking at ``Z[g]`` itself (leave-one-out), which keeps the policy
gradient unbiased:

* ``zero`` -- no baseline (plain REINFORCE).
* ``batch_mean_loo`` -- mean of all other rewards in the step (REINFORCE++).
* ``group_mean_loo`` -- mean of the other ``G - 1`` rewards of the prompt (GRPO).
* ``kae_nw`` / ``kae_alg1`` -- kernel-weighted average of the prompt's past
  rewards and the other current rewards; ``nw`` divides by the sum of
  weights, ``alg1`` by ``h * |H| + (G - 1) * K(0)``.
* ``oracle`` -- the exact value from enumeration.

Leave-one-out sums are formed by masking rather than ``total - Z[g]`` so
that the value for slot ``g`` is bit-for-bit independent of ``Z[g]``.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (DegenerateBatch, DegenerateGroup, NoData, UndefinedScale,
                         UnsupportedNormalization)
from .history import effective_sample_size
from .kernels import KernelSpec, eval_kernel, lag_weight, max_lag

BASELINE_KINDS = ("zero", "batch_mean_loo", "group_mean_loo", "kae_nw", "kae_alg1", "oracle")
BANDWIDTH_KINDS = ("fixed", "stone", "fixed_window")


@dataclass(frozen=True)
class BandwidthRule:
    """How the kernel's lag argument is scaled.

    ``fixed``: scale ``i * h``. ``stone``: scale ``i * c * N**(-1/(2p+1))``
    with ``N`` the effective sample size. ``fixed_window``: scale ``w``
    regardless of the step, i.e. a constant lookback.
    """

    kind: str = "fixed_window"
    h: float = 0.5
    c: float = 1.0
    p: int = 2
    window: float = 4

    def __post_init__(self):
        if self.kind not in BANDWIDTH_KINDS:
            raise ValueError(f"unknown bandwidth kind {self.kind!r}")
        if self.kind == "fixed" and not self.h > 0:
            raise ValueError("fixed bandwidth needs h > 0")
        if self.kind == "stone" and (not self.c > 0 or self.p < 2):
            raise ValueError("stone bandwidth needs c > 0 and p >= 2")
        if self.kind == "fixed_window" and not self.window >= 1:
            raise ValueError("fixed_window bandwidth needs window >= 1")


@dataclass(frozen=True)
class BaselineKind:
    kind: str = "kae_nw"
    kernel: KernelSpec = field(default_factory=KernelSpec)
    bandwidth: BandwidthRule = field(default_factory=BandwidthRule)
    std_normalize: bool = False

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if self.kind == "kae_alg1" and self.bandwidth.kind != "fixed":
            raise UnsupportedNormalization("kae_alg1 normalisation needs a fixed bandwidth")
        if self.std_normalize and self.kind != "group_mean_loo":
            raise ValueError("std_normalize is only defined for group_mean_loo")

    @property
    def is_kae(self):
        return self.kind in ("kae_nw", "kae_alg1")

    @property
    def mode(self):
        return {"kae_nw": "nw", "kae_alg1": "alg1"}.get(self.kind)


def _loo_sums(values):
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[-1]
    mask = 1.0 - np.eye(n)
    # keep masked slots from contributing even when they hold inf/nan
    masked = np.where(mask.astype(bool), values[..., None, :], 0.0)
    return masked.sum(axis=-1)


def loo_means(values):
    """Leave-one-out means along the last axis (length must be >= 2)."""
    n = np.shape(values)[-1]
    return _loo_sums(values) / (n - 1)


def grpo_loo_value(group_rewards, leave_out):
    """Mean of the group's rewards other than ``leave_out``."""
    z = np.asarray(group_rewards, dtype=np.float64)
    if z.size < 2:
        raise DegenerateGroup("group mean baseline needs G >= 2")
    return float(np.delete(z, leave_out).sum() / (z.size - 1))


def rpp_batch_value(all_rewards, leave_out):
    """Mean of every reward in the step other than ``leave_out``."""
    z = np.asarray(all_rewards, dtype=np.float64).ravel()
    if z.size < 2:
        raise DegenerateBatch("batch mean baseline needs at least two rewards")
    return float(np.delete(z, leave_out).sum() / (z.size - 1))


def resolve_bandwidth(rule, N, current_iter):
    """Scale that divides the lag inside the kernel."""
    if rule.kind == "fixed_window":
        return float(rule.window)
    if current_iter < 1:
        raise UndefinedScale(f"{rule.kind} bandwidth is undefined at iteration {current_iter}")
    if rule.kind == "fixed":
        return current_iter * rule.h
    if N < 1:
        raise UndefinedScale("stone bandwidth needs an effective sample size N >= 1")
    return current_iter * rule.c * N ** (-1.0 / (2 * rule.p + 1))


def retention_for(baseline, n_steps):
    """Smallest history window that cannot change the estimator over ``n_steps``.

    ``None`` (keep everything) for ``kae_alg1``, whose normaliser counts every
    stored reward, and for non-kernel baselines, which ignore history.
    """
    if baseline.kind != "kae_nw":
        return None
    rule = baseline.bandwidth
    if rule.kind == "fixed_window":
        scale = rule.window
    elif rule.kind == "fixed":
        scale = max(n_steps, 1) * rule.h
    else:
        scale = max(n_steps, 1) * rule.c
    return max(max_lag(baseline.kernel, scale), 1)


def kae_group_values(hist_iters, hist_rewards, group_rewards, current_iter, kernel, rule,
                     mode="nw", history_count=None, N=None):
    """Kernel baseline for every slot of one prompt's group.

    Parameters
    ----------
    hist_iters, hist_rewards : array_like
        Flattened past observations of the prompt (iterations < ``current_iter``).
    group_rewards : array_like, shape (G,)
        Current-step rewards; slot ``g`` is excluded from its own value.
    history_count : int, optional
        ``|H|`` for ``mode="alg1"``; defaults to ``len(hist_rewards)``.
    N : int, optional
        Effective sample size for the ``stone`` rule.

    Returns
    -------
    ndarray, shape (G,)

    Raises
    ------
    NoData
        No usable history and ``G == 1``.
    """
    z = np.asarray(group_rewards, dtype=np.float64)
    G = z.size
    iters = np.asarray(hist_iters, dtype=np.float64)
    past = np.asarray(hist_rewards, dtype=np.float64)
    if mode not in ("nw", "alg1"):
        raise ValueError(f"unknown KAE mode {mode!r}")
    if mode == "alg1" and rule.kind != "fixed":
        raise UnsupportedNormalization("alg1 normalisation needs a fixed bandwidth")

    if past.size == 0:
        if G < 2:
            raise NoData("no history and a single completion")
        return loo_means(z)

    if N is None:
        N = G * len(np.unique(iters)) + G - 1
    scale = resolve_bandwidth(rule, N, current_iter)
    w = lag_weight(kernel, current_iter - iters, scale)
    k0 = eval_kernel(kernel, 0.0)
    hist_num = float(np.dot(w, past))
    hist_den = float(w.sum())
    current = k0 * _loo_sums(z) if G > 1 else np.zeros(1)
    if mode == "nw":
        if not np.any(w != 0.0):
            if G < 2:
                raise NoData("history lies outside the kernel support and G == 1")
            return loo_means(z)
        den = hist_den + (G - 1) * k0
        if den == 0.0:
            if G < 2:
                raise NoData("kernel weights sum to zero and G == 1")
            return loo_means(z)
        return (hist_num + current) / den
    count = past.size if history_count is None else history_count
    return (hist_num + current) / (rule.h * count + (G - 1) * k0)


def kae_value(store, prompt, current_iter, group_rewards, leave_out, kernel, rule, mode="nw",
              G=None):
    """Kernel baseline for one completion, reading history from ``store``."""
    z = np.asarray(group_rewards, dtype=np.float64)
    if G is not None and G != z.size:
        raise ValueError(f"G={G} does not match {z.size} group rewards")
    iters, past = store.past_arrays(prompt, current_iter)
    N = effective_sample_size(store, prompt, z.size, current_iter)
    values = kae_group_values(iters, past, z, current_iter, kernel, rule, mode,
                              history_count=past.size, N=N)
    return float(values[leave_out])


def oracle_value(theta, task, prompt):
    from .evaluation import exact_value
    return exact_value(theta, task, prompt)


def advantage(z, v):
    return z - v


def history_arrays(store, prompt, current_iter):
    """``(iters, rewards, history_count, occurrences)`` for :func:`step_values`."""
    iters, past = store.past_arrays(prompt, current_iter)
    return iters, past, past.size, store.occurrences(prompt, current_iter)


def step_values(baseline, rewards, prompts, current_iter, histories=None, oracle=None):
    """Baseline value for every ``(b, g)`` slot of a step, with fallbacks.

    Parameters
    ----------
    rewards : ndarray, shape (B, G)
    prompts : sequence of int, length B
    histories : sequence, optional
        Per-prompt ``(iters, rewards, history_count, occurrences)`` tuples;
        required for KAE kinds.
    oracle : ndarray, shape (B,), optional
        Exact values of the prompts; required for ``oracle``.

    Returns
    -------
    values : ndarray, shape (B, G)
    used : list of str
        The baseline actually applied per prompt after the fallback ladder
        (KAE without history and ``G >= 2`` uses the group mean; no data at
        all uses the zero baseline).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    B, G = rewards.shape
    kind = baseline.kind
    if kind == "zero":
        return np.zeros((B, G)), ["zero"] * B
    if kind == "oracle":
        if oracle is None:
            raise ValueError("oracle baseline needs exact prompt values")
        return np.repeat(np.asarray(oracle, dtype=np.float64)[:, None], G, axis=1), ["oracle"] * B
    if kind == "batch_mean_loo":
        if B * G < 2:
            return np.zeros((B, G)), ["zero"]
        return loo_means(rewards.ravel()).reshape(B, G), ["batch_mean_loo"] * B
    if kind == "group_mean_loo":
        if G < 2:
            return np.zeros((B, G)), ["zero"] * B
        values = loo_means(rewards)
        return values, ["group_mean_loo"] * B

    values = np.zeros((B, G))
    used = []
    for b in range(B):
        iters, past, count, occ = histories[b]
        try:
            values[b] = kae_group_values(iters, past, rewards[b], current_iter, baseline.kernel,
                                         baseline.bandwidth, baseline.mode,
                                         history_count=count, N=G * occ + G - 1)
            used.append(kind if past.size else "group_mean_loo")
        except NoData:
            used.append("zero")
    return values, used


def advantages(baseline, rewards, values):
    """``Z - V``, optionally divided by the group's reward std (GRPO variant)."""
    adv = np.asarray(rewards, dtype=np.float64) - values
    if baseline.std_normalize:
        sd = np.asarray(rewards, dtype=np.float64).std(axis=1, ddof=1, keepdims=True) \
            if np.shape(rewards)[1] > 1 else np.ones((np.shape(rewards)[0], 1))
        adv = adv / (sd + 1e-6)
    return adv


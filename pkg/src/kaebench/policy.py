"""Tabular autoregressive softmax policy.

The policy keeps one logit vector per (prompt, position). Token ``t`` of a
completion is drawn from ``softmax(logits[x, t])`` independently of the
earlier tokens, so ``log pi(y | x) = sum_t log softmax(logits[x, t])[y_t]``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .exceptions import MalformedInput

CHECKPOINT_MAGIC = "kaebench-policy v1"


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Logits of shape ``(m, L, V)``; the array is copied and made read-only."""

    logits: np.ndarray

    def __post_init__(self):
        arr = np.array(self.logits, dtype=np.float64, copy=True)
        if arr.ndim != 3:
            raise MalformedInput("logits must have shape (m, L, V)")
        if not np.all(np.isfinite(arr)):
            raise MalformedInput("logits must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "logits", arr)

    @classmethod
    def zeros(cls, m, L, V):
        return cls(np.zeros((m, L, V)))

    @classmethod
    def for_task(cls, task, init="zeros", rng=None, scale=1.0):
        if init == "zeros":
            return cls.zeros(task.m, task.L, task.V)
        if init == "random":
            if rng is None:
                raise ValueError("random init needs an rng")
            return cls(scale * rng.standard_normal((task.m, task.L, task.V)))
        raise ValueError(f"unknown policy init {init!r}")

    @property
    def shape(self):
        return self.logits.shape

    @property
    def m(self):
        return self.logits.shape[0]

    @property
    def L(self):
        return self.logits.shape[1]

    @property
    def V(self):
        return self.logits.shape[2]

    @property
    def dim(self):
        return self.logits.size

    def __eq__(self, other):
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return np.array_equal(self.logits, other.logits)

    def probs(self, prompt=None):
        """Per-position token probabilities, ``(L, V)`` or ``(m, L, V)``."""
        z = self.logits if prompt is None else self.logits[prompt]
        return np.exp(z - logsumexp(z, axis=-1, keepdims=True))

    def log_probs(self, prompt=None):
        z = self.logits if prompt is None else self.logits[prompt]
        return z - logsumexp(z, axis=-1, keepdims=True)

    def updated(self, direction, step_size):
        return PolicyParams(self.logits + step_size * direction)


def sample(policy, prompt, G, rng):
    """Draw ``G`` i.i.d. completions for ``prompt``; returns ``(G, L)`` ints."""
    if G < 1:
        raise ValueError("G must be >= 1")
    cdf = np.cumsum(policy.probs(prompt), axis=-1)
    u = rng.random((G, policy.L))
    tokens = (u[:, :, None] >= cdf[None, :, :]).sum(axis=-1)
    # cdf[-1] can round below 1.0
    return np.minimum(tokens, policy.V - 1)


def sample_many(policy, prompts, G, rng):
    """Completions for several prompts at once, shape ``(len(prompts), G, L)``."""
    prompts = np.asarray(prompts, dtype=np.int64)
    cdf = np.cumsum(policy.probs()[prompts], axis=-1)
    u = rng.random((len(prompts), G, policy.L))
    tokens = (u[:, :, :, None] >= cdf[:, None, :, :]).sum(axis=-1)
    return np.minimum(tokens, policy.V - 1)


def _check_completion(policy, completion):
    tokens = np.asarray(completion, dtype=np.int64)
    if tokens.shape[-1] != policy.L or tokens.min() < 0 or tokens.max() >= policy.V:
        raise MalformedInput(f"invalid completion {completion!r}")
    return tokens


def log_prob(policy, prompt, completion):
    """``log pi(completion | prompt)``; accepts a batch along leading axes."""
    tokens = _check_completion(policy, completion)
    lp = policy.log_probs(prompt)
    per_token = lp[np.arange(policy.L), tokens]
    return per_token.sum(axis=-1) if per_token.ndim > 1 else float(per_token.sum())


def score(policy, prompt, completion):
    """Dense gradient of :func:`log_prob` w.r.t. the logits, shape ``(m, L, V)``.

    Only row ``prompt`` is nonzero: ``onehot(y_t) - softmax(logits[prompt, t])``.
    """
    tokens = _check_completion(policy, completion)
    out = np.zeros(policy.shape)
    out[prompt] = -policy.probs(prompt)
    out[prompt, np.arange(policy.L), tokens] += 1.0
    return out


def accumulate_scores(policy, prompts, tokens, coefs, out=None):
    """``sum_i coefs[i] * score(policy, prompts[i], tokens[i])`` without dense temporaries.

    ``prompts`` has shape ``(n,)``, ``tokens`` ``(n, L)``, ``coefs`` ``(n,)``.
    """
    prompts = np.asarray(prompts, dtype=np.int64)
    tokens = np.asarray(tokens, dtype=np.int64)
    coefs = np.asarray(coefs, dtype=np.float64)
    if out is None:
        out = np.zeros(policy.shape)
    L = policy.L
    pos = np.broadcast_to(np.arange(L), tokens.shape)
    np.add.at(out, (np.repeat(prompts, L), pos.ravel(), tokens.ravel()), np.repeat(coefs, L))
    weight = np.bincount(prompts, weights=coefs, minlength=policy.m)
    out -= weight[:, None, None] * policy.probs()
    return out


def save_checkpoint(policy, path, step=0):
    """Text checkpoint: a header line then ``m*L*V`` reals, C order."""
    m, L, V = policy.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} m={m} V={V} L={L} step={int(step)}\n")
        for value in policy.logits.ravel():
            fh.write(repr(float(value)) + "\n")


def load_checkpoint(path):
    """Returns ``(policy, step)``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if " ".join(header[:2]) != CHECKPOINT_MAGIC:
            raise MalformedInput(f"{path}: not a kaebench policy checkpoint")
        fields = dict(item.split("=", 1) for item in header[2:])
        m, V, L, step = (int(fields[k]) for k in ("m", "V", "L", "step"))
        values = np.array([float(line) for line in fh if line.strip()])
    if values.size != m * L * V:
        raise MalformedInput(f"{path}: expected {m * L * V} values, found {values.size}")
    return PolicyParams(values.reshape(m, L, V)), step

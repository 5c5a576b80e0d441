"""Synthetic verifiable-reward tasks with enumerable completion spaces.

A task has ``m`` prompts. Completions are length-``L`` token sequences over a
vocabulary of ``V`` tokens, and every prompt accepts a nonempty set of them.
The reward is 1 for an accepted completion and 0 otherwise.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from .exceptions import EnumerationInfeasible, MalformedInput
from .rng import derive_rng

ENUMERATION_CAP = 4096


def enumerate_completions(V, L, cap=ENUMERATION_CAP):
    """All ``V**L`` completions in lexicographic order, shape ``(V**L, L)``."""
    if V < 1 or L < 1:
        raise MalformedInput("V and L must be positive")
    if V ** L > cap:
        raise EnumerationInfeasible(f"V**L = {V ** L} exceeds enumeration cap {cap}")
    return np.array(list(itertools.product(range(V), repeat=L)), dtype=np.int64).reshape(-1, L)


def completion_index(tokens, V):
    """Lexicographic index of ``tokens`` (last axis) among all completions."""
    tokens = np.asarray(tokens, dtype=np.int64)
    L = tokens.shape[-1]
    weights = V ** np.arange(L - 1, -1, -1, dtype=np.int64)
    return tokens @ weights


@dataclass(frozen=True, eq=False)
class TaskSet:
    """Prompts with their accepted completions.

    ``answers[x]`` is a tuple of accepted token tuples for prompt ``x``.
    ``reward_table`` (built on construction) is an ``(m, V**L)`` float array
    with the reward of every completion, indexed by :func:`completion_index`.
    """

    V: int
    L: int
    answers: tuple
    prompt_weights: tuple = None
    cap: int = ENUMERATION_CAP
    reward_table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.V < 2 or self.L < 1:
            raise MalformedInput("task needs V >= 2 and L >= 1")
        if self.V ** self.L > self.cap:
            raise EnumerationInfeasible(
                f"V**L = {self.V ** self.L} exceeds enumeration cap {self.cap}")
        answers = tuple(tuple(sorted({tuple(int(t) for t in a) for a in ans}))
                        for ans in self.answers)
        if not answers:
            raise MalformedInput("task needs at least one prompt")
        table = np.zeros((len(answers), self.V ** self.L))
        for x, ans in enumerate(answers):
            if not ans:
                raise MalformedInput(f"prompt {x} has an empty answer set")
            for a in ans:
                if len(a) != self.L or min(a) < 0 or max(a) >= self.V:
                    raise MalformedInput(f"prompt {x}: answer {a} is not a valid completion")
            table[x, completion_index(np.array(ans), self.V)] = 1.0
        table.setflags(write=False)
        object.__setattr__(self, "answers", answers)
        object.__setattr__(self, "reward_table", table)

        m = len(answers)
        if self.prompt_weights is None:
            weights = tuple([1.0 / m] * m)
        else:
            weights = tuple(float(w) for w in self.prompt_weights)
            if len(weights) != m or min(weights) < 0 or abs(sum(weights) - 1.0) > 1e-12:
                raise MalformedInput("prompt_weights must be a probability vector over prompts")
        object.__setattr__(self, "prompt_weights", weights)

    @property
    def m(self):
        return len(self.answers)

    @property
    def n_completions(self):
        return self.V ** self.L

    def __eq__(self, other):
        if not isinstance(other, TaskSet):
            return NotImplemented
        return (self.V, self.L, self.answers, self.prompt_weights) == (
            other.V, other.L, other.answers, other.prompt_weights)

    def __hash__(self):
        return hash((self.V, self.L, self.answers, self.prompt_weights))

    def completions(self):
        return enumerate_completions(self.V, self.L, self.cap)

    def rewards(self, prompt, tokens):
        """Vectorised reward lookup for an array of completions (last axis L)."""
        return self.reward_table[prompt, completion_index(tokens, self.V)]


def reward(task, prompt, completion):
    """1.0 if ``completion`` is accepted for ``prompt``, else 0.0."""
    if not 0 <= prompt < task.m:
        raise MalformedInput(f"prompt {prompt} out of range [0, {task.m})")
    tokens = np.asarray(completion, dtype=np.int64)
    if tokens.shape != (task.L,) or tokens.min() < 0 or tokens.max() >= task.V:
        raise MalformedInput(f"invalid completion {completion!r} for V={task.V}, L={task.L}")
    return float(task.reward_table[prompt, completion_index(tokens, task.V)])


def make_task(kind, m, V, L, k=1, density=0.5, seed=0, targets=None, cap=ENUMERATION_CAP):
    """Build a task.

    Parameters
    ----------
    kind : {"needle", "parity", "random"}
        ``needle``: each prompt accepts ``k`` distinct completions drawn
        uniformly. ``parity``: a completion is accepted when its token sum mod
        2 equals the prompt's target bit (``targets`` or a seeded draw).
        ``random``: each completion is accepted independently with
        probability ``density``; an empty set is redrawn.
    """
    if m < 1:
        raise MalformedInput("m must be >= 1")
    n = V ** L
    if n > cap:
        raise EnumerationInfeasible(f"V**L = {n} exceeds enumeration cap {cap}")
    rng = derive_rng(seed, "task." + kind)
    comps = enumerate_completions(V, L, cap)
    if kind == "needle":
        if not 1 <= k <= n:
            raise MalformedInput(f"needle task needs 1 <= k <= {n}")
        answers = [comps[np.sort(rng.choice(n, size=k, replace=False))] for _ in range(m)]
    elif kind == "parity":
        if targets is None:
            targets = rng.integers(0, 2, size=m)
        targets = list(targets)
        if len(targets) != m:
            raise MalformedInput("parity task needs one target bit per prompt")
        parity = comps.sum(axis=1) % 2
        answers = [comps[parity == int(t)] for t in targets]
    elif kind == "random":
        if not 0.0 < density <= 1.0:
            raise MalformedInput("density must lie in (0, 1]")
        answers = []
        for _ in range(m):
            mask = rng.random(n) < density
            while not mask.any():
                mask = rng.random(n) < density
            answers.append(comps[mask])
    else:
        raise MalformedInput(f"unknown task kind {kind!r}")
    return TaskSet(V=V, L=L, answers=tuple(tuple(map(tuple, a)) for a in answers), cap=cap)


def reference_task(seed=0):
    """The default benchmark: needle, m=16, V=4, L=3, k=4."""
    return make_task("needle", m=16, V=4, L=3, k=4, seed=seed)


def dumps_task(task):
    """Serialise to the plain-text task format.

    ::

        kaebench-task v1
        m 2
        V 2
        L 2
        weights 0.5 0.5
        prompt 0: 0 1; 1 1
        prompt 1: 0 0
    """
    lines = ["kaebench-task v1", f"m {task.m}", f"V {task.V}", f"L {task.L}",
             "weights " + " ".join(repr(w) for w in task.prompt_weights)]
    for x, ans in enumerate(task.answers):
        lines.append(f"prompt {x}: " + "; ".join(" ".join(map(str, a)) for a in ans))
    return "\n".join(lines) + "\n"


def loads_task(text):
    header = {}
    weights = None
    answers = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            if line.startswith("kaebench-task"):
                continue
            if line.startswith("prompt"):
                head, body = line.split(":", 1)
                x = int(head.split()[1])
                answers[x] = [tuple(int(t) for t in chunk.split()) for chunk in body.split(";")
                              if chunk.strip()]
            elif line.startswith("weights"):
                weights = [float(w) for w in line.split()[1:]]
            else:
                key, value = line.split()
                header[key] = int(value)
        except ValueError as exc:
            raise MalformedInput(f"line {lineno}: cannot parse {raw!r}") from exc
    try:
        m, V, L = header["m"], header["V"], header["L"]
    except KeyError as exc:
        raise MalformedInput(f"task file is missing header field {exc.args[0]}") from None
    if sorted(answers) != list(range(m)):
        raise MalformedInput("task file must list prompts 0..m-1 exactly once")
    return TaskSet(V=V, L=L, answers=tuple(tuple(answers[x]) for x in range(m)),
                   prompt_weights=weights)


def save_task(task, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_task(task))


def load_task(path):
    with open(path, encoding="utf-8") as fh:
        return loads_task(fh.read())

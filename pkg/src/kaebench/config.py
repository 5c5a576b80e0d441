"""Experiment configuration: a flat ``key = value`` file with dotted keys.

Example::

    # bandwidth sweep on the reference task
    preset = bandwidth_sweep
    lr.beta = 200
    eval.windows = 2, 4, 8

    [kernel]
    rho = 0.5          # same as kernel.rho = 0.5

Lists are comma-separated. ``[section]`` headers prefix the keys that follow
them. ``algo.<label>.<key>`` overrides ``<key>`` for one algorithm only, and
``algo.<label>.base`` names the built-in algorithm a custom label derives
from. Every error carries the offending line number.
"""

import hashlib
import json
import os

from .exceptions import ConfigError

PIPELINES = ("train", "value-mse", "grad-mse", "sweep", "oneshot", "ablation")


def _choice(*options):
    def check(value):
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return value
    return check


def _positive(value):
    if not value > 0:
        raise ValueError("must be positive")
    return value


def _nonneg(value):
    if value < 0:
        raise ValueError("must be nonnegative")
    return value


def _retention(value):
    if value in ("auto", "none"):
        return value
    n = int(value)
    if n < 1:
        raise ValueError("must be 'auto', 'none' or a positive integer")
    return n


# key -> (type, default, check, description)
SCHEMA = {
    "pipeline": ("str", "train", _choice(*PIPELINES), "what to run"),
    "preset": ("str", None, None, "named preset supplying defaults"),
    "output_dir": ("str", None, None, "artifact directory (default runs/<preset or pipeline>)"),
    "seeds": ("int_list", [0], None, "master seeds, one run (or snapshot) per seed"),
    "algorithms": ("str_list", ["kae"], None, "algorithm labels to run"),
    "task.kind": ("str", "needle", _choice("needle", "parity", "random"), "task generator"),
    "task.m": ("int", 16, _positive, "number of prompts"),
    "task.V": ("int", 4, _positive, "vocabulary size"),
    "task.L": ("int", 3, _positive, "completion length"),
    "task.k": ("int", 4, _positive, "accepted completions per prompt (needle)"),
    "task.density": ("float", 0.5, _positive, "acceptance probability (random)"),
    "task.seed": ("int", 0, None, "seed of the task generator"),
    "task.file": ("str", None, None, "load the task from this file instead"),
    "policy.init": ("str", "zeros", _choice("zeros", "random"), "initial logits"),
    "policy.scale": ("float", 1.0, _nonneg, "std of random initial logits"),
    "kernel.kind": ("str", "triangular",
                    _choice("triangular", "exponential", "uniform", "epanechnikov",
                            "higher_order"), "kernel"),
    "kernel.rho": ("float", 0.5, _positive, "exponential decay base"),
    "kernel.order": ("int", None, _positive, "kernel order (higher_order)"),
    "baseline.kind": ("str", "kae", _choice("zero", "batch_mean_loo", "group_mean_loo", "kae",
                                            "oracle"), "baseline of the 'custom' algorithm"),
    "baseline.mode": ("str", "nw", _choice("nw", "alg1"), "KAE normalisation"),
    "baseline.std_normalize": ("bool", False, None, "divide group advantages by the group std"),
    "bandwidth.kind": ("str", "fixed_window", _choice("fixed", "stone", "fixed_window"),
                       "bandwidth rule"),
    "bandwidth.h": ("float", 0.5, _positive, "fixed bandwidth"),
    "bandwidth.c": ("float", 1.0, _positive, "stone constant"),
    "bandwidth.p": ("int", 2, None, "stone smoothness"),
    "bandwidth.window": ("float", None, _positive, "fixed window (default J/2)"),
    "schedule.kind": ("str", "block_reuse", _choice("iid", "block_reuse"), "prompt schedule"),
    "schedule.J": ("int", 10, _positive, "steps each block is reused"),
    "schedule.batch_size": ("int", 4, _positive, "prompts per step B"),
    "history.retention": ("str", "auto", _retention, "'auto', 'none' or a step count"),
    "train.steps": ("int", 300, _nonneg, "training steps n"),
    "train.G": ("int", 4, _positive, "completions per prompt"),
    "lr.kind": ("str", "inverse", _choice("inverse", "constant"), "learning-rate schedule"),
    "lr.eta": ("float", 1.0, _positive, "constant learning rate"),
    "lr.beta": ("float", 200.0, _positive, "inverse schedule: eta_i = beta / (i + 1)"),
    "snapshot_steps": ("int_list", [], None, "steps at which policy checkpoints are written"),
    "eval.steps": ("int_list", [50], None, "snapshot steps evaluated by MSE pipelines"),
    "eval.replications": ("int", 500, None, "Monte-Carlo replications"),
    "eval.windows": ("float_list", [2.0, 4.0, 8.0], None, "sweep windows"),
    "eval.kernels": ("str_list", ["triangular", "exponential"], None, "sweep kernels"),
    "eval.history": ("str", "lookback", _choice("lookback", "observed"), "history resampling"),
    "eval.prompts": ("str", "all", _choice("all", "last_batch"), "evaluated prompts"),
    "eval.snapshot_algorithm": ("str", "kae", None, "algorithm trained to make snapshots"),
    "eval.seed": ("int", 1, None, "seed of the evaluation streams"),
}

ALGO_ONLY_KEYS = {"base"}

PRESETS = {
    "value_mse_table": {
        "pipeline": "value-mse", "algorithms": ["kae", "grpo", "rpp"],
        "eval.steps": [10, 50, 90], "bandwidth.window": 4.0,
    },
    "grad_mse_table": {
        "pipeline": "grad-mse", "algorithms": ["kae", "grpo", "rpp", "oracle"],
        "eval.steps": [10, 50, 90], "bandwidth.window": 4.0,
    },
    "policy_multistream": {
        "pipeline": "train", "seeds": [0, 1, 2, 3, 4],
        "algorithms": ["kae_G4", "grpo_G4", "kae_G8", "grpo_G8"],
        "algo.kae_G4.base": "kae", "algo.kae_G4.train.G": 4,
        "algo.grpo_G4.base": "grpo", "algo.grpo_G4.train.G": 4,
        "algo.kae_G8.base": "kae", "algo.kae_G8.train.G": 8,
        "algo.grpo_G8.base": "grpo", "algo.grpo_G8.train.G": 8,
        "bandwidth.window": 4.0,
    },
    "policy_singlestream": {
        "pipeline": "ablation", "seeds": [0, 1, 2, 3, 4], "train.G": 1,
        "algorithms": ["kae", "reinforce", "reinforce_schedule"],
        "bandwidth.window": 4.0,
    },
    "bandwidth_sweep": {
        "pipeline": "sweep", "eval.steps": [50], "eval.windows": [2.0, 4.0, 8.0],
        "eval.kernels": ["triangular", "exponential"], "bandwidth.window": 4.0,
    },
    "oneshot": {
        "pipeline": "oneshot", "task.m": 1, "schedule.batch_size": 1, "schedule.J": 1,
        "train.G": 4, "train.steps": 100, "lr.beta": 20.0, "seeds": [0, 1, 2, 3, 4],
        "algorithms": ["kae", "oracle", "grpo"], "bandwidth.window": 4.0,
    },
}

# base algorithm -> overrides on top of the configuration
ALGORITHMS = {
    "kae": {"baseline.kind": "kae"},
    "kae_alg1": {"baseline.kind": "kae", "baseline.mode": "alg1", "bandwidth.kind": "fixed"},
    "grpo": {"baseline.kind": "group_mean_loo", "schedule.kind": "iid"},
    "grpo_schedule": {"baseline.kind": "group_mean_loo", "schedule.kind": "block_reuse"},
    "grpo_std": {"baseline.kind": "group_mean_loo", "baseline.std_normalize": True,
                 "schedule.kind": "iid"},
    "rpp": {"baseline.kind": "batch_mean_loo", "schedule.kind": "iid"},
    "reinforce": {"baseline.kind": "zero", "schedule.kind": "iid", "_matched_budget": True},
    "reinforce_schedule": {"baseline.kind": "zero", "schedule.kind": "block_reuse",
                           "_matched_budget": True},
    "oracle": {"baseline.kind": "oracle"},
    "zero": {"baseline.kind": "zero"},
    "custom": {},
}


def _coerce(kind, raw):
    raw = raw.strip()
    if kind == "str":
        if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "'\"":
            return raw[1:-1]
        return raw
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    items = [item.strip() for item in raw.split(",") if item.strip()]
    if kind == "int_list":
        return [int(i) for i in items]
    if kind == "float_list":
        return [float(i) for i in items]
    if kind == "str_list":
        return items
    raise AssertionError(kind)


def _schema_key(key):
    """Schema entry for ``key``, resolving ``algo.<label>.`` prefixes."""
    if key.startswith("algo."):
        parts = key.split(".", 2)
        if len(parts) < 3:
            return None
        sub = parts[2]
        if sub in ALGO_ONLY_KEYS:
            return ("str", None, None, "base algorithm")
        return SCHEMA.get(sub)
    return SCHEMA.get(key)


def _validate(key, value, line=None, path=None):
    entry = _schema_key(key)
    if entry is None:
        raise ConfigError(f"unknown key {key!r}", line, path)
    check = entry[2]
    if check is not None and value is not None:
        try:
            if isinstance(value, list):
                for item in value:
                    check(item)
            else:
                value = check(value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", line, path) from None
    return value


def parse_text(text, path=None):
    """Parse config text into ``(values, lines)`` dicts keyed by dotted key."""
    values, lines = {}, {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno, path)
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, path)
        key, raw_value = (part.strip() for part in line.split("=", 1))
        if section:
            key = f"{section}.{key}"
        entry = _schema_key(key)
        if entry is None:
            raise ConfigError(f"unknown key {key!r}", lineno, path)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})",
                              lineno, path)
        try:
            value = _coerce(entry[0], raw_value)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {raw_value!r} as {entry[0]} ({exc})",
                              lineno, path) from None
        values[key] = _validate(key, value, lineno, path)
        lines[key] = lineno
    return values, lines


class ExperimentConfig:
    """Resolved configuration: defaults, then preset, then file values."""

    def __init__(self, values=None, lines=None, path=None):
        values = dict(values or {})
        self.path = path
        self.lines = dict(lines or {})
        preset = values.get("preset")
        merged = {key: entry[1] for key, entry in SCHEMA.items()}
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; choose from "
                                  f"{', '.join(sorted(PRESETS))}", self.lines.get("preset"), path)
            merged.update(PRESETS[preset])
        merged.update(values)
        self.values = merged
        self._check()

    @classmethod
    def from_file(cls, path):
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        values, lines = parse_text(text, path)
        return cls(values, lines, path)

    @classmethod
    def from_text(cls, text):
        values, lines = parse_text(text)
        return cls(values, lines)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def _err(self, message, key):
        return ConfigError(message, self.lines.get(key), self.path)

    def _check(self):
        v = self.values
        seeds = v["seeds"]
        if not seeds:
            raise self._err("seeds must not be empty", "seeds")
        if len(set(seeds)) != len(seeds):
            raise self._err("seeds must be distinct", "seeds")
        if not v["algorithms"]:
            raise self._err("algorithms must not be empty", "algorithms")
        labels = [("algorithms", label) for label in v["algorithms"]]
        labels.append(("eval.snapshot_algorithm", v["eval.snapshot_algorithm"]))
        for key, label in labels:
            base = self.base_algorithm(label)
            if base not in ALGORITHMS:
                raise self._err(f"unknown algorithm {label!r} (base {base!r}); known: "
                                f"{', '.join(sorted(ALGORITHMS))}", key)
        if v["eval.replications"] < 2:
            raise self._err("eval.replications must be >= 2", "eval.replications")
        if any(s < 1 for s in v["eval.steps"]):
            raise self._err("eval.steps must be >= 1", "eval.steps")
        if v["bandwidth.p"] < 2:
            raise self._err("bandwidth.p must be >= 2", "bandwidth.p")
        if v["task.file"] is None and v["schedule.batch_size"] > v["task.m"]:
            raise self._err("schedule.batch_size cannot exceed task.m", "schedule.batch_size")
        for label in v["algorithms"]:
            self.algorithm_values(label)

    def base_algorithm(self, label):
        return self.values.get(f"algo.{label}.base", label)

    def algorithm_values(self, label):
        """Flat values for one algorithm: config, base-algorithm overrides, ``algo.`` keys."""
        base = self.base_algorithm(label)
        out = {k: val for k, val in self.values.items() if not k.startswith("algo.")}
        out.update(ALGORITHMS[base])
        prefix = f"algo.{label}."
        for key, val in self.values.items():
            if key.startswith(prefix) and key[len(prefix):] not in ALGO_ONLY_KEYS:
                out[key[len(prefix):]] = val
        return out

    @property
    def output_dir(self):
        env = os.environ.get("KAEBENCH_OUTPUT_DIR")
        if env:
            return env
        if self.values["output_dir"]:
            return self.values["output_dir"]
        return os.path.join("runs", self.values["preset"] or self.values["pipeline"])

    def canonical(self):
        """Resolved values as text in the config format (re-parseable)."""
        lines = []
        for key in sorted(self.values):
            val = self.values[key]
            if val is None:
                continue
            if isinstance(val, list):
                text = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in val)
                if not val:
                    continue
            elif isinstance(val, float):
                text = repr(val)
            else:
                text = str(val)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"

    def hash(self):
        payload = json.dumps(self.values, sort_keys=True, default=str).encode()
        return hashlib.sha256(payload).hexdigest()


def load_config(path):
    return ExperimentConfig.from_file(path)

"""Pipelines behind ``kaebench run`` and the CSV artifacts they write.

Each pipeline expands the configuration into independent jobs (one per
algorithm and seed, or one per seed for the evaluation pipelines), runs them
serially or in a process pool, and writes every artifact once, in job order,
so reruns produce byte-identical files whatever the parallelism.
"""

import csv
import hashlib
import json
import math
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata

import numpy as np

from .baselines import BandwidthRule, BaselineKind
from .config import ExperimentConfig
from .env import dumps_task, load_task, make_task, save_task
from .evaluation import grad_mse, snapshot_from_run, sweep_bandwidth, value_mse
from .exceptions import ConfigError
from .kernels import KernelSpec
from .policy import PolicyParams, save_checkpoint
from .rng import derive_rng, derive_seed_sequence
from .trainer import TrainConfig, train

CSV_COLUMNS = {
    "train_curve.csv": ("step", "seed", "algorithm", "mean_train_reward", "exact_J",
                        "grad_norm", "lr"),
    "value_mse.csv": ("step", "algorithm", "prompt", "mse", "bias_sq", "variance",
                      "replications"),
    "grad_mse.csv": ("step", "algorithm", "mse", "se", "replications"),
    "sweep.csv": ("kernel", "bandwidth", "mse", "se"),
}


def format_cell(value):
    """Text for one CSV cell; floats keep full double precision."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, columns, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])


def _parse_cell(text):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_csv(path):
    """Rows of a kaebench CSV as dicts with ints/floats parsed back."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return [{k: _parse_cell(v) for k, v in row.items()} for row in reader]


def sha256_file(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def task_hash(task):
    return hashlib.sha256(dumps_task(task).encode("utf-8")).hexdigest()


def build_task(values):
    if values["task.file"]:
        return load_task(values["task.file"])
    return make_task(values["task.kind"], values["task.m"], values["task.V"], values["task.L"],
                     k=values["task.k"], density=values["task.density"], seed=values["task.seed"])


def build_kernel(values, kind=None):
    kind = kind or values["kernel.kind"]
    order = values["kernel.order"] if kind == "higher_order" else None
    return KernelSpec(kind, rho=values["kernel.rho"], order=order)


def build_baseline(values):
    """:class:`BaselineKind` described by one algorithm's flat values."""
    kind = values["baseline.kind"]
    if kind == "kae":
        kind = "kae_nw" if values["baseline.mode"] == "nw" else "kae_alg1"
    window = values["bandwidth.window"]
    if window is None:
        window = max(1.0, values["schedule.J"] / 2)
    rule = BandwidthRule(values["bandwidth.kind"], h=values["bandwidth.h"],
                         c=values["bandwidth.c"], p=values["bandwidth.p"], window=window)
    return BaselineKind(kind, kernel=build_kernel(values), bandwidth=rule,
                        std_normalize=values["baseline.std_normalize"])


def build_train_config(values, seed, label, task, keep_thetas=False, steps=None):
    B, G = values["schedule.batch_size"], values["train.G"]
    if values.get("_matched_budget"):
        # same completions per step as the grouped algorithms, one per prompt
        B, G = min(task.m, B * G), 1
    retention = values["history.retention"]
    if retention == "none":
        retention = None
    snapshot_steps = tuple(values["snapshot_steps"])
    return TrainConfig(
        steps=values["train.steps"] if steps is None else steps, B=B, G=G,
        baseline=build_baseline(values), schedule=values["schedule.kind"],
        J=values["schedule.J"], lr_kind=values["lr.kind"], eta=values["lr.eta"],
        beta=values["lr.beta"], seed=seed, snapshot_steps=snapshot_steps,
        keep_thetas=keep_thetas, retention=retention, algorithm=label)


def initial_policy(values, task, seed):
    return PolicyParams.for_task(task, values["policy.init"], derive_rng(seed, "init"),
                                 values["policy.scale"])


def eval_seed(config, seed):
    return int(derive_seed_sequence(seed, "eval", config["eval.seed"]).generate_state(1)[0])


def _train_job(args):
    config, label, seed = args
    values = config.algorithm_values(label)
    task = build_task(values)
    tc = build_train_config(values, seed, label, task)
    run = train(tc, task, initial_policy(values, task, seed))
    rows = []
    for rep in run.reports:
        rows.append((rep.iteration, seed, label, rep.mean_reward, run.objective[rep.iteration],
                     rep.grad_norm, rep.lr))
    n = len(run.reports)
    rows.append((n, seed, label, math.nan, run.objective[n], math.nan, math.nan))
    checkpoints = sorted(run.snapshots.items()) + [(n, run.theta)]
    return rows, checkpoints


def _snapshots(config, seed, task):
    label = config["eval.snapshot_algorithm"]
    values = config.algorithm_values(label)
    tc = build_train_config(values, seed, label, task, keep_thetas=True,
                            steps=max(config["eval.steps"]))
    run = train(tc, task, initial_policy(values, task, seed))
    prompts = None if config["eval.prompts"] == "all" else config["eval.prompts"]
    return [snapshot_from_run(run, task, s, prompts) for s in config["eval.steps"]]


def _value_job(args):
    config, seed = args
    task = build_task(config.values)
    rows = []
    for snap in _snapshots(config, seed, task):
        for label in config["algorithms"]:
            baseline = build_baseline(config.algorithm_values(label))
            for row in value_mse(snap, baseline, config["eval.replications"],
                                 eval_seed(config, seed), algorithm=label,
                                 history=config["eval.history"]):
                rows.append((row.step, row.algorithm, row.prompt, row.mse, row.bias_sq,
                             row.variance, row.replications))
    return rows


def _grad_job(args):
    config, seed = args
    task = build_task(config.values)
    rows = []
    for snap in _snapshots(config, seed, task):
        for label in config["algorithms"]:
            baseline = build_baseline(config.algorithm_values(label))
            row = grad_mse(snap, baseline, config["eval.replications"], eval_seed(config, seed),
                           algorithm=label, history=config["eval.history"])
            rows.append((row.step, row.algorithm, row.mse, row.se, row.replications))
    return rows


def _sweep_job(args):
    config, seed = args
    task = build_task(config.values)
    kernels = [build_kernel(config.values, kind) for kind in config["eval.kernels"]]
    rows = []
    for snap in _snapshots(config, seed, task):
        for row in sweep_bandwidth(snap, kernels, config["eval.windows"],
                                   config["eval.replications"], eval_seed(config, seed),
                                   history=config["eval.history"]):
            rows.append((row["kernel"], row["bandwidth"], row["mse"], row["se"]))
    return rows


def jobs_from_env():
    raw = os.environ.get("KAEBENCH_JOBS", "1")
    try:
        jobs = int(raw)
    except ValueError:
        raise ConfigError(f"KAEBENCH_JOBS must be an integer, got {raw!r}") from None
    if jobs < 1:
        raise ConfigError("KAEBENCH_JOBS must be >= 1")
    return jobs


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def versions():
    out = {"python": platform.python_version(), "numpy": np.__version__}
    for dist in ("kaebench", "scipy", "scikit-learn"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def check_config(config):
    """Build every object the config describes, turning failures into :class:`ConfigError`."""
    try:
        task = build_task(config.values)
        for label in config["algorithms"]:
            values = config.algorithm_values(label)
            build_train_config(values, config["seeds"][0], label, task)
        if config["pipeline"] in ("value-mse", "grad-mse", "sweep"):
            values = config.algorithm_values(config["eval.snapshot_algorithm"])
            build_train_config(values, config["seeds"][0], "snapshot", task)
            for kind in config["eval.kernels"]:
                build_kernel(config.values, kind)
    except ConfigError:
        raise
    except (KeyError, ValueError, OSError) as exc:
        raise ConfigError(f"invalid configuration: {exc}", path=config.path) from None
    return task


def run_pipeline(config, output_dir=None, jobs=None):
    """Execute ``config``'s pipeline; returns the artifact directory."""
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_file(config)
    check_config(config)
    out = output_dir or config.output_dir
    jobs = jobs_from_env() if jobs is None else jobs
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    task = build_task(config.values)
    pipeline = config["pipeline"]
    seeds = config["seeds"]
    files = {}
    if pipeline in ("train", "oneshot", "ablation"):
        items = [(config, label, seed) for label in config["algorithms"] for seed in seeds]
        results = _map(_train_job, items, jobs)
        rows = [row for res, _ in results for row in res]
        files["train_curve.csv"] = rows
        ckpt_dir = os.path.join(out, "checkpoints")
        os.makedirs(ckpt_dir, exist_ok=True)
        for (_, label, seed), (_, checkpoints) in zip(items, results):
            for step, theta in checkpoints:
                save_checkpoint(theta, os.path.join(ckpt_dir, f"{label}_seed{seed}_step{step}.txt"),
                                step)
    elif pipeline == "value-mse":
        results = _map(_value_job, [(config, s) for s in seeds], jobs)
        files["value_mse.csv"] = [row for res in results for row in res]
    elif pipeline == "grad-mse":
        results = _map(_grad_job, [(config, s) for s in seeds], jobs)
        files["grad_mse.csv"] = [row for res in results for row in res]
    elif pipeline == "sweep":
        results = _map(_sweep_job, [(config, s) for s in seeds], jobs)
        files["sweep.csv"] = [row for res in results for row in res]
    else:
        raise ConfigError(f"unknown pipeline {pipeline!r}")

    for name, rows in files.items():
        write_csv(os.path.join(out, name), CSV_COLUMNS[name], rows)
    save_task(task, os.path.join(out, "task.txt"))
    with open(os.path.join(out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(config.canonical())
    manifest = {
        "pipeline": pipeline,
        "config_file": "config.txt",
        "config_hash": config.hash(),
        "seeds": list(seeds),
        "algorithms": list(config["algorithms"]),
        "task_hash": task_hash(task),
        "versions": versions(),
        "artifacts": {name: sha256_file(os.path.join(out, name)) for name in sorted(files)},
    }
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


METRIC_FILES = {"exact_J": "train_curve.csv", "value_mse": "value_mse.csv",
                "grad_mse": "grad_mse.csv"}


def _mean_se(values):
    arr = np.asarray(values, dtype=np.float64)
    se = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else math.nan
    return float(arr.mean()), se


def compare_runs(dirs, metric, reference, steps=None):
    """Summary rows ``(algorithm, step, value, se, n, reduction)`` across run directories.

    ``value`` is the mean over seeds (and directories) and ``se`` its standard
    error. ``reduction`` is the relative decrease versus ``reference`` at the
    same step: of the MSE for the MSE metrics, and of the suboptimality gap
    ``J* - J`` for ``exact_J``. A single grad-MSE measurement keeps its
    Monte-Carlo SE.
    """
    from .evaluation import optimal_objective
    from .exceptions import MismatchedRuns

    if metric not in METRIC_FILES:
        raise ValueError(f"unknown metric {metric!r}; choose from {', '.join(METRIC_FILES)}")
    if not dirs:
        raise MismatchedRuns("no runs to compare")
    hashes, groups = set(), {}
    j_star = None
    for d in dirs:
        manifest_path = os.path.join(d, "manifest.json")
        if not os.path.exists(manifest_path):
            raise MismatchedRuns(f"{d}: no manifest.json (run incomplete?)")
        with open(manifest_path, encoding="utf-8") as fh:
            hashes.add(json.load(fh)["task_hash"])
        path = os.path.join(d, METRIC_FILES[metric])
        if not os.path.exists(path):
            raise MismatchedRuns(f"{d}: run has no {METRIC_FILES[metric]}")
        if j_star is None:
            j_star = optimal_objective(load_task(os.path.join(d, "task.txt")))
        for row in read_csv(path):
            if metric == "value_mse" and row["prompt"] != "all":
                continue
            if steps is not None and row["step"] not in steps:
                continue
            value = row["exact_J"] if metric == "exact_J" else row["mse"]
            groups.setdefault((row["algorithm"], row["step"]), []).append(
                (value, row.get("se", math.nan)))
    if len(hashes) > 1:
        raise MismatchedRuns("runs were made on different tasks")
    if not any(alg == reference for alg, _ in groups):
        raise MismatchedRuns(f"reference algorithm {reference!r} not found in the runs")

    stats = {}
    for key, entries in groups.items():
        mean, se = _mean_se([v for v, _ in entries])
        if len(entries) == 1:
            se = float(entries[0][1])
        stats[key] = (mean, se, len(entries))

    def loss(value):
        return j_star - value if metric == "exact_J" else value

    rows = []
    for (alg, step) in sorted(stats, key=lambda k: (k[1], k[0])):
        mean, se, n = stats[(alg, step)]
        ref = stats.get((reference, step))
        reduction = math.nan
        if ref is not None and loss(ref[0]) != 0:
            reduction = (loss(ref[0]) - loss(mean)) / loss(ref[0])
        elif ref is not None and loss(mean) == loss(ref[0]):
            reduction = 0.0
        rows.append((alg, step, mean, se, n, reduction))
    return rows

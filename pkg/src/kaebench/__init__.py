"""Kernelized advantage estimation for policy-gradient training on toy RLVR tasks."""

from .baselines import BandwidthRule, BaselineKind, kae_group_values, kae_value, step_values
from .env import TaskSet, make_task, reference_task
from .estimators import KernelValueEstimator, PolicyGradientTrainer
from .evaluation import (FrozenSnapshot, exact_gradient, exact_objective, exact_value, grad_mse,
                         snapshot_from_run, suboptimality, sweep_bandwidth, value_mse)
from .history import HistoryStore, SamplingSchedule
from .kernels import KernelSpec, eval_kernel, moment
from .policy import PolicyParams
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BandwidthRule", "BaselineKind", "FrozenSnapshot", "HistoryStore", "KernelSpec",
    "KernelValueEstimator", "PolicyGradientTrainer", "PolicyParams", "SamplingSchedule",
    "TaskSet", "TrainConfig", "eval_kernel", "exact_gradient", "exact_objective", "exact_value",
    "grad_mse", "kae_group_values", "kae_value", "make_task", "moment", "reference_task",
    "snapshot_from_run", "step_values", "suboptimality", "sweep_bandwidth", "train", "value_mse",
]

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kaebench.baselines import BandwidthRule, BaselineKind
from kaebench.env import reference_task
from kaebench.evaluation import snapshot_from_run
from kaebench.kernels import KernelSpec
from kaebench.trainer import TrainConfig, train

settings.register_profile("kaebench", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("kaebench")

KAE = BaselineKind("kae_nw", KernelSpec("triangular"), BandwidthRule("fixed_window", window=4))
GRPO = BaselineKind("group_mean_loo")
RPP = BaselineKind("batch_mean_loo")
ORACLE = BaselineKind("oracle")
ZERO = BaselineKind("zero")

# Frozen snapshot used by the MSE tests: 50 KAE steps, block reuse J=10.
SNAPSHOT_CONFIG = TrainConfig(steps=50, B=4, G=4, baseline=KAE, schedule="block_reuse", J=10,
                              lr_kind="inverse", beta=200.0, seed=0, keep_thetas=True,
                              algorithm="kae")


@pytest.fixture(scope="session")
def ref_task():
    return reference_task()


@pytest.fixture(scope="session")
def snapshot_run(ref_task):
    return train(SNAPSHOT_CONFIG, ref_task)


@pytest.fixture(scope="session")
def ref_snapshot(snapshot_run, ref_task):
    return snapshot_from_run(snapshot_run, ref_task, 50)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

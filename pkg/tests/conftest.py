from __future__ import annotations

import numpy as np
import pytest

from destress_sim import (
    Problem,
    RegLogisticModel,
    build_topology,
    generate_synthetic,
    metropolis_weights,
    partition_uniform,
)

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion; asserts on failure."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def report(criterion: str, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}"
        lines.append(line)
        print(line)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic(1000, 10, seed=0)


@pytest.fixture(scope="session")
def logistic():
    return RegLogisticModel(10, 0.01)


@pytest.fixture(scope="session")
def grid_problem(small_dataset, logistic):
    g = build_topology("grid", 20, rows=4, cols=5)
    return Problem(logistic, small_dataset, partition_uniform(small_dataset, 20, seed=0)), metropolis_weights(g)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

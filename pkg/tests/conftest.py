import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from podreach import build_thermostat  # noqa: E402
from podreach import pbvi  # noqa: E402

ACCEPTANCE_LINES: list[str] = []
SOLVE_SECONDS: dict[int, float] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def thermo():
    return build_thermostat()


def _benchmark_solve(model, horizon):
    t0 = time.perf_counter()
    beliefs = pbvi.sample_belief_set(model, 40, horizon, seed=0)
    stack = pbvi.solve(model, beliefs, horizon, reduce_to=20)
    SOLVE_SECONDS[horizon] = time.perf_counter() - t0
    return stack


@pytest.fixture(scope="session")
def stack_T5(thermo):
    return _benchmark_solve(thermo, 5)


@pytest.fixture(scope="session")
def stack_T20(thermo):
    return _benchmark_solve(thermo, 20)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from pathmild.noise import NoiseGrid, sample_path  # noqa: E402
from pathmild.operator import GeneratorFamily  # noqa: E402


@pytest.fixture(scope="session")
def grid():
    return NoiseGrid(-20.0, 5.0, 1e-3)


@pytest.fixture(scope="session")
def path(grid):
    return sample_path(1, grid, 64, (0.75, 1.0))


@pytest.fixture(scope="session")
def gen(path):
    return GeneratorFamily().on(path)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.LINES):
            terminalreporter.write_line(line)

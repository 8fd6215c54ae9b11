import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from molqudit.dynamics import DephasingModel  # noqa: E402
from molqudit.experiments import Setup  # noqa: E402
from molqudit.spin import SpinSystemParams, build_system  # noqa: E402


@pytest.fixture(scope="session")
def system22():
    return build_system(SpinSystemParams(B0=(0.22, 0.0, 0.0)))


@pytest.fixture(scope="session")
def system12():
    return build_system(SpinSystemParams(B0=(0.12, 0.0, 0.0)))


@pytest.fixture(scope="session")
def tim_setup(system22):
    return Setup(system22, DephasingModel.from_times(system22), 5e-4)


@pytest.fixture(scope="session")
def qtm_setup(system12):
    return Setup(system12, DephasingModel.from_times(system12), 1e-4)


@pytest.fixture(scope="session")
def ideal22(system22):
    return Setup(system22, DephasingModel.none(system22.dim), 5e-4)


def ground(system, level=0):
    rho = np.zeros((system.dim, system.dim), dtype=complex)
    k = system.computational[level]
    rho[k, k] = 1.0
    return rho

import numpy as np
import pytest
from hypothesis import settings

from isalt.datagen import (GenerationConfig, generate_dataset, generate_long_trajectory,
                           sample_initial_conditions)
from isalt.systems import SdeSystem, make_benchmark

# first calls pay numba compilation, so per-example deadlines are meaningless
settings.register_profile("isalt", deadline=None, max_examples=50)
settings.load_profile("isalt")


@pytest.fixture(scope="session")
def dw():
    return make_benchmark("double-well-1d")


@pytest.fixture(scope="session")
def grad2d():
    return make_benchmark("gradient-2d")


@pytest.fixture(scope="session")
def lorenz():
    return make_benchmark("lorenz-3d")


@pytest.fixture(scope="session")
def ou():
    """dX = -X dt + dB."""
    return SdeSystem.from_expressions("ou", ["x"], ["-x"], [[1.0]], potential="x**2",
                                      beta=1.0)


@pytest.fixture(scope="session")
def free():
    """Zero drift, sigma = 0.7."""
    return SdeSystem.from_expressions("free", ["x"], ["0"], [[0.7]])


@pytest.fixture(scope="session")
def dw_long(dw):
    return generate_long_trajectory(dw, [0.5], 1e-3, 50_000, seed=11)


@pytest.fixture(scope="session")
def dw_data(dw, dw_long):
    """Small double-well dataset: M=8, gap 10, 400 increments."""
    ini = sample_initial_conditions(dw_long, 8, 5_000, seed=12)
    return generate_dataset(GenerationConfig(dw, 1e-3, 4000, 10, 8, seed=13), ini)


@pytest.fixture(scope="session")
def lorenz_data(lorenz):
    long = generate_long_trajectory(lorenz, [1.0, 1.0, 25.0], 5e-4, 20_000, seed=21)
    ini = sample_initial_conditions(long, 4, 2_000, seed=22)
    return generate_dataset(GenerationConfig(lorenz, 5e-4, 2000, 20, 4, seed=23), ini)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one pass/fail line per acceptance criterion."""
    def record(number, ok, detail):
        _CRITERIA[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])

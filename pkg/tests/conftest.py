import numpy as np
import pytest

from orbitstab.model import get_example
from orbitstab.pipeline import Pipeline


@pytest.fixture(scope="session")
def mass_spring():
    return get_example("mass-spring")


@pytest.fixture(scope="session")
def repro(mass_spring):
    """Mass-spring with the closed-form transverse model."""
    return Pipeline(mass_spring, "reproduction")


@pytest.fixture(scope="session")
def generic(mass_spring):
    """Mass-spring with the frame-based transverse model."""
    return Pipeline(mass_spring, "generic")


@pytest.fixture(scope="session")
def osc3d():
    return Pipeline(get_example("oscillator-3d"), "generic")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_acceptance_lines = []


def record_acceptance(line):
    _acceptance_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)

import numpy as np
import pytest

from kobmetric.geometry import ball_function, get_domain, norm_squared, siegel_function
from kobmetric.structures import J_ST, diagonal_structure, standard_structure


@pytest.fixture
def jst():
    return standard_structure()


@pytest.fixture
def ball():
    return ball_function()


@pytest.fixture
def siegel():
    return siegel_function()


@pytest.fixture
def nsq():
    return norm_squared()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def e(i):
    v = np.zeros(4)
    v[i - 1] = 1.0
    return v


# acceptance verdicts, echoed in the terminal summary so they survive output capture
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)

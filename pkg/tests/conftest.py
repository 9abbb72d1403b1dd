import numpy as np
import pytest

from fusiontrack.geometry import LOS, NLOS, Arena, LinkGeometry, SpeakerPair
from fusiontrack.scenario import DeviceLayout
from fusiontrack.trajectory_sim import generate_shape, sample_trajectory


@pytest.fixture(scope="session")
def layout():
    return DeviceLayout()


@pytest.fixture(scope="session")
def unit_arena():
    return Arena(0.0, 1.0, 0.0, 1.0)


@pytest.fixture(scope="session")
def square_one_lap():
    return sample_trajectory(generate_shape("square", (2.5, 2.5), 4.0, 1))


@pytest.fixture(scope="session")
def square_four_laps():
    return sample_trajectory(generate_shape("square", (2.5, 2.5), 4.0, 4))


def finite_difference(fun, p, h=1e-5):
    """Central-difference gradient of a scalar function of a 2-D point."""
    p = np.asarray(p, dtype=float)
    g = np.zeros(2)
    for i in range(2):
        step = np.zeros(2)
        step[i] = h
        g[i] = (fun(p + step) - fun(p - step)) / (2 * h)
    return g


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

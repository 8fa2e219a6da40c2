import numpy as np
import pytest

from pwlab import FlowConfig, Params, build_mesh, run_flow
from pwlab.nehari import compute_depth_table

P3 = Params(3.0)


@pytest.fixture(scope="session")
def line():
    """(0, pi) with h = pi/1024."""
    return build_mesh(1, [(0.0, np.pi)], [1023])


@pytest.fixture(scope="session")
def sine(line):
    return line.interpolate(np.sin)


@pytest.fixture(scope="session")
def depths(line):
    return compute_depth_table(line, 3.0, lambdas=[0.0, 0.5, 1.0, 2.0], deltas=[1.0])


@pytest.fixture(scope="session")
def decay_run(sine):
    return run_flow(0.01 * sine, FlowConfig(P3))


@pytest.fixture(scope="session")
def blowup_run(sine):
    return run_flow(10.0 * sine, FlowConfig(P3))


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)

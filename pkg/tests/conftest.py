import numpy as np
import pytest

from recon.geometry import DomainSpec, build_ball_mesh, compute_coordinates, cutoff_functions, partition_boundary
from recon.discretization import assemble_operators, make_potential

GAUSSIAN = {"kind": "gaussian", "amplitude": 1.0, "center": [0.0, 3.0, 0.0], "width": 0.3}

ACCEPTANCE_LINES: list[str] = []


class Setup:
    """Mesh, operators and partition at one refinement level."""

    def __init__(self, level: int, center_offset: float = 3.0):
        self.spec = DomainSpec(center_offset=center_offset, refinement_level=level)
        self.mesh = build_ball_mesh(self.spec)
        self.ops = assemble_operators(self.mesh)
        self.frame = compute_coordinates(self.mesh, self.spec)
        self.part = partition_boundary(self.mesh)
        self.cut = cutoff_functions(self.part)
        self.q = make_potential(self.mesh, GAUSSIAN)


@pytest.fixture(scope="session")
def lvl0():
    return Setup(0)


@pytest.fixture(scope="session")
def lvl1():
    return Setup(1)


@pytest.fixture(scope="session")
def lvl2():
    return Setup(2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

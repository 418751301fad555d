import numpy as np
import pytest

from fbma.geometry import barycentered_simplex
from fbma.solver import SolverConfig, minimize_energy
from fbma.verification.ode import ode_shooting_oracle


#: one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def interval():
    return barycentered_simplex(1)


@pytest.fixture(scope="session")
def triangle():
    return barycentered_simplex(2)


@pytest.fixture(scope="session")
def oracle_k1():
    return ode_shooting_oracle(1)


@pytest.fixture(scope="session")
def oracle_k2():
    return ode_shooting_oracle(2)


def solve_1d(k: int, pieces: int, outer: int = 3):
    sched = [m for m in (8, 16, 32, 64, 128) if m < pieces] + [pieces]
    cfg = SolverConfig(k=k, polytope=barycentered_simplex(1), piece_budget=pieces,
                       refinement_schedule=sched, max_outer_iterations=outer)
    return minimize_energy(cfg)


@pytest.fixture(scope="session")
def solved_1d_k1():
    """(v, u, report) for P = [-1, 1], k = 1, 64 pieces."""
    return solve_1d(1, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

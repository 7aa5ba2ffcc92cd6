from pathlib import Path

import numpy as np
import pytest

from gridmor.grid.assembly import assemble_ndae
from gridmor.grid.model import read_grid
from gridmor.grid.system import CallableNonlinearity, linear_system
from gridmor.simulation.equilibrium import initialize
from gridmor.simulation.scenarios import Scenario
from gridmor.simulation.solver import SolverOptions, integrate

ROOT = Path(__file__).resolve().parents[1]
NINE_BUS = ROOT / "example_project" / "grids" / "nine_bus.toml"


@pytest.fixture(scope="session")
def grid_file():
    return NINE_BUS


@pytest.fixture(scope="session")
def grid():
    return read_grid(NINE_BUS)


@pytest.fixture(scope="session")
def system(grid):
    return assemble_ndae(grid)


@pytest.fixture(scope="session")
def point(grid, system):
    return initialize(grid, system)


@pytest.fixture(scope="session")
def trajectory(system, point):
    """Two seconds of the nine-bus grid after a 0.5 % load step at t = 0.2."""
    scenario = Scenario(kind="load-step", delta=0.005, onset=0.2)
    options = SolverOptions(h=0.01, record_dt=0.02)
    return integrate(system, point, scenario, t_span=(0.0, 2.0), options=options)


@pytest.fixture
def stable_lti():
    """Four-state stable ODE with one input, full state output."""
    A = np.array(
        [
            [-1.0, 0.4, 0.0, 0.0],
            [-0.4, -1.5, 0.3, 0.0],
            [0.0, 0.2, -3.0, 0.5],
            [0.0, 0.0, -0.5, -2.0],
        ]
    )
    B = np.array([[1.0], [0.5], [0.2], [0.3]])
    return linear_system(A, B_u=B, C=np.eye(4))


@pytest.fixture
def linear_dae():
    """x' = -x + y + u, 0 = x - 2 y (index one, y = x / 2)."""
    A = np.array([[-1.0, 1.0], [1.0, -2.0]])
    B = np.array([[1.0], [0.0]])
    return linear_system(A, B_u=B, n_d=1)


@pytest.fixture
def decay_dae():
    """x' = -y, 0 = y - x, so x(t) = exp(-t)."""
    A = np.array([[0.0, -1.0], [-1.0, 1.0]])
    return linear_system(A, n_d=1)


@pytest.fixture
def cubic_dae():
    """Small nonlinear DAE: x1' = -x1 + y, x2' = -2 x2 + x1 y, 0 = y - 0.5 - 0.1 x1^2 - x2."""
    A = np.array([[-1.0, 0.0, 1.0], [0.0, -2.0, 0.0], [0.0, -1.0, 1.0]])
    c = np.array([0.0, 0.0, -0.5])

    def f(x, u, w):
        return np.array([0.0, x[0] * x[2], -0.1 * x[0] ** 2])

    nonlinearity = CallableNonlinearity(3, f, rows=[1, 2])
    return linear_system(A, B_u=np.array([[1.0], [0.0], [0.0]]), c=c, n_d=2, nonlinearity=nonlinearity)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


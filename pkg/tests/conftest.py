import numpy as np
import pytest

from resmatch.grid import GrfSpec, Realization, ScalarField, make_grid
from resmatch.simulator import FluidProps, Schedule, SimState
from resmatch.wells import WellSpec


@pytest.fixture
def grid_2d():
    return make_grid(20, 20, 1, 50.0, 50.0, 20.0, np.ones(400, dtype=bool))


@pytest.fixture
def fluid():
    return FluidProps()


@pytest.fixture
def uniform_realization(grid_2d):
    n = grid_2d.n_cells
    return Realization(
        ScalarField(grid_2d, np.full(n, 100.0), "perm"),
        ScalarField(grid_2d, np.full(n, 0.25), "poro"),
        {},
    )


@pytest.fixture
def five_spot_wells():
    return [
        WellSpec("INJ", "water-injector", 0, 0, (0, 0), 500.0),
        WellSpec("PROD", "producer", 19, 19, (0, 0), 100.0),
    ]


@pytest.fixture
def schedule_10():
    return Schedule(dt=100.0, report_times=tuple(100.0 * (i + 1) for i in range(10)))


@pytest.fixture
def initial_state(grid_2d):
    return SimState.uniform(grid_2d, 1000.0, 0.2, 0.0)

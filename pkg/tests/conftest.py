import numpy as np
import pytest

import quantemu as qe


class SmallRun:
    """A compact synthetic training setup reused across test modules."""

    def __init__(self):
        self.grid = qe.default_input_grid()
        self.sim = qe.SyntheticSimulator(self.grid)
        self.space = qe.DesignSpace.sample(self.grid, 30, 60, seed=7)
        self.pgrid = qe.default_grid()
        batches = self.sim.simulate_design(
            self.space.learning, 2000, qe.derive_seed(7, 2)
        )
        self.outputs = tuple(
            qe.empirical_quantile_function(b, self.pgrid) for b in batches
        )


@pytest.fixture(scope="session")
def small_run():
    return SmallRun()


@pytest.fixture(scope="session")
def small_emulator(small_run):
    return qe.train_emulator(
        small_run.grid,
        small_run.space.learning,
        small_run.outputs,
        q=4,
        transform="log",
        n_starts=3,
    )


@pytest.fixture(scope="session")
def small_identity_emulator(small_run):
    return qe.train_emulator(
        small_run.grid,
        small_run.space.learning,
        small_run.outputs,
        q=4,
        transform="identity",
        n_starts=3,
    )


@pytest.fixture
def pgrid():
    return qe.default_grid()

import numpy as np
import pytest

from timeopt.mean_drift import MeanDriftProblem


@pytest.fixture(scope="session")
def bench():
    return MeanDriftProblem()


@pytest.fixture(scope="session")
def drift_field(bench):
    return bench.field()


@pytest.fixture(scope="session")
def zero_target(bench):
    return bench.target()


@pytest.fixture(scope="session")
def grid11(bench):
    return bench.control_grid(11)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)

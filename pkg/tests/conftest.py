import numpy as np
import pytest

from logrowth import Grid, MicroParams, Params


@pytest.fixture(scope="session")
def table1():
    """Reference scenario parameters used throughout the experiments."""
    return Params(lam=20.0, mu=18.0, alpha=1.0, rho=0.1)


@pytest.fixture(scope="session")
def micro100():
    return MicroParams(lam=20.0, mu=18.0, alpha=1.0, kappa=100.0)


@pytest.fixture(scope="session")
def grid_table1(table1):
    # h = 1e-3, x_max = max(4K, 2*x0) = 8 for x0 = 0.25
    return Grid.for_model(table1, x0=0.25, h=1e-3)


@pytest.fixture(scope="session")
def grid_coarse(table1):
    return Grid.for_model(table1, x0=0.25, h=5e-3)


@pytest.fixture(scope="session")
def param_matrix():
    """Assorted valid parameter vectors for property checks."""
    return [
        Params(20.0, 18.0, 1.0, 0.1),
        Params(5.0, 3.0, 0.5, 0.3),
        Params(2.0, 1.0, 2.0, 1.0),
        Params(12.0, 11.5, 4.0, 0.2),
        Params(1.0, 2.0, 1.0, 0.5),  # decaying population, lam < mu
    ]


def rel_err(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


@pytest.fixture(scope="session")
def relerr():
    return rel_err

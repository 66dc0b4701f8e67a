import numpy as np
import pytest

from spod.generators import burgers_analytic, fhn_simulate


@pytest.fixture(scope="session")
def burgers_data():
    return burgers_analytic()


@pytest.fixture(scope="session")
def fhn_data():
    # ~40 s once per session; shared by the generator checks and acceptance
    return fhn_simulate()


@pytest.fixture
def rng():
    return np.random.default_rng(20240613)

import numpy as np
import pytest

from chipspec import default_apparatus
from chipspec.potentials import make_total_potential


@pytest.fixture(scope="session")
def apparatus():
    return default_apparatus()


@pytest.fixture(scope="session")
def trap(apparatus):
    return apparatus.trap


@pytest.fixture(scope="session")
def magnetic_potential_obj(trap):
    return make_total_potential(trap)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)

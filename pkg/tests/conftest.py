import numpy as np
import pytest

from noddikit.quadrature import default_quadrature
from noddikit.scheme import dense_three_shell_90, two_shell_60


@pytest.fixture(scope="session")
def scheme():
    return two_shell_60()


@pytest.fixture(scope="session")
def dense_scheme():
    return dense_three_shell_90()


@pytest.fixture(scope="session")
def quad():
    return default_quadrature()


@pytest.fixture()
def rng():
    return np.random.default_rng(0)

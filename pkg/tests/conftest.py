import numpy as np
import pytest
from gmpy2 import mpq

from brigade_core import BrigadeConfig
from three_worker import ThreeWorkerParams


@pytest.fixture
def both_cycles():
    """r = (2, 4/3): Region 3 with r1 > r2, both three-cycles present"""
    return ThreeWorkerParams(2, mpq(4, 3))


@pytest.fixture
def region2():
    return ThreeWorkerParams(mpq(1, 2), 2)


@pytest.fixture
def sigma_params():
    return ThreeWorkerParams(mpq(4, 3), 2)


@pytest.fixture
def both_cycles_config():
    return BrigadeConfig.from_velocities([2, mpq(4, 3), 1])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)

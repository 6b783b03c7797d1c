import numpy as np
import pytest

from monoplant.simulator import PlantConfig


@pytest.fixture(scope="session")
def plant():
    return PlantConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

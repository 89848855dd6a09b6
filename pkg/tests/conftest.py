import numpy as np
import pytest

from hmas.geo import GeodeticCoord

NANCY = GeodeticCoord(48.70, 6.15, 220.0)


@pytest.fixture
def base() -> GeodeticCoord:
    return NANCY


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240901)

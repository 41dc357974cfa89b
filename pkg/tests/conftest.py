import numpy as np
import pytest

from blackwell_pg.game import verification_game
from blackwell_pg.geometry import TargetSet

FIXTURE_BOX = ([0.35, 0.35], [0.7, 0.7])


@pytest.fixture(scope="session")
def game():
    return verification_game()


@pytest.fixture(scope="session")
def box():
    return TargetSet.box(*FIXTURE_BOX)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

import numpy as np
import pytest

from mgvl.envgen import RandomGameSpec, random_game
from mgvl.game import MarkovGame


def matching_pennies(H: int = 1, S: int = 1) -> MarkovGame:
    """Zero-sum game paying the row player 1 on a match, every step and state."""
    P = np.full((H, S, 4, S), 1.0 / S)
    r = np.tile(np.array([1.0, 0.0, 0.0, 1.0]), (H, S, 1))
    return MarkovGame(H, S, (2, 2), P, np.stack([r, 1.0 - r]), 0, True)


@pytest.fixture
def pennies():
    return matching_pennies()


@pytest.fixture
def small_zs():
    return random_game(RandomGameSpec(num_states=3, horizon=3, seed=11))

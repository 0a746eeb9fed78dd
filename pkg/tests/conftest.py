import numpy as np
import pytest

from nomad_adaptive_exploration.config import ExperimentConfig
from nomad_adaptive_exploration.env import TabularMDP, build_lavaworld, parse_grid

# start at the left end of a corridor, goal two moves to the right
CORRIDOR = """
#####
#S.G#
#####
"""


@pytest.fixture(scope='session')
def lavaworld():
    return build_lavaworld()


@pytest.fixture
def corridor():
    return parse_grid(CORRIDOR)


@pytest.fixture
def chain_mdp():
    """Three states in a row; action 0 moves left, action 1 moves right.

    Moving left from state 0 is lava; state 2 is the goal.
    """
    next_state = np.array([[0, 1], [0, 2], [2, 2]])
    reward = np.array([[0.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    lava = np.array([[True, False], [False, False], [False, False]])
    return TabularMDP(next_state, reward, lava, start=1, goal=2, gamma=0.9)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    return ExperimentConfig(
        episodes=20,
        actors=1,
        seed=7,
        evaluation_period=5,
        dedup_probe_count=20,
    )

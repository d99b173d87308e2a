import numpy as np
import pytest

from sc_mbrl.mdp import TabularMdp


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_mdp(rng, n_states=4, n_actions=3, discount=0.9):
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    r = rng.normal(size=(n_states, n_actions))
    return TabularMdp(P, r, discount)


def random_policy(rng, n_states, n_actions):
    return rng.dirichlet(np.ones(n_actions), size=n_states)

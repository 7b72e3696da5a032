import numpy as np
import pytest

from offlinelp.data import DataDistribution
from offlinelp.mdp import TabularMdp


def random_mdp(rng, num_states, num_actions, gamma=None, sparse=False):
    m = num_states * num_actions
    P = rng.dirichlet(np.ones(num_states), size=m)
    if sparse:
        P = P * (rng.uniform(size=P.shape) < 0.6)
        P[np.arange(m), rng.integers(0, num_states, size=m)] += 0.1
        P /= P.sum(axis=1, keepdims=True)
    gamma = rng.uniform(0.0, 0.95) if gamma is None else gamma
    return TabularMdp(
        num_states,
        num_actions,
        P,
        rng.uniform(size=m),
        gamma,
        rng.dirichlet(np.ones(num_states)),
    )


def random_dist(rng, num_states, num_actions, zero_frac=0.0):
    mu = rng.uniform(size=num_states * num_actions)
    if zero_frac:
        mu[rng.uniform(size=mu.size) < zero_frac] = 0.0
        if mu.sum() == 0:
            mu[0] = 1.0
    return DataDistribution(mu / mu.sum(), num_states, num_actions)


def random_policy(rng, num_states, num_actions):
    return rng.dirichlet(np.ones(num_actions), size=num_states)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def chain_mdp():
    # state 0 -> state 1 -> state 1 under the single action
    P = np.array([[0.0, 1.0], [0.0, 1.0]])
    return TabularMdp(2, 1, P, np.array([0.0, 1.0]), 0.5, np.array([1.0, 0.0]))


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

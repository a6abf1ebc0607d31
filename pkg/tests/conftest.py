import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qmdp.mdp_core import ScenarioParams, UncertainMdp, random_mdp

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def one_state(costs_by_scenario, gamma=0.5, probs=None):
    """Single-state instance; ``costs_by_scenario[s][a]`` is the per-period cost."""
    n_a = len(costs_by_scenario[0])
    trans = np.ones((1, n_a, 1))
    scen = [ScenarioParams([list(map(float, c))], trans) for c in costs_by_scenario]
    if probs is None:
        probs = [1.0 / len(scen)] * len(scen)
    return UncertainMdp(gamma, [1.0], scen, probs)


@pytest.fixture
def big_m_counterexample():
    # b_bar = [200, 4, 4], b_under = [0, 2, 2] at gamma = 0.5
    return one_state([[0, 100], [2, 1], [2, 1]])


@pytest.fixture
def small_random():
    return random_mdp(3, 2, 4, np.random.default_rng(7), gamma=0.8)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

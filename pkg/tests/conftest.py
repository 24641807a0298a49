from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from refuel.harness.instances import gen_random_mdp
from refuel.harness.suite import random_instance, random_loglinear, random_tabular
from refuel.turn_mdp import TurnMDP, validate

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

seeds = st.integers(min_value=0, max_value=2**31 - 1)


def bandit(rewards, rho=(1.0,), reward_range=(0.0, 1.0)) -> TurnMDP:
    """One-turn MDP; ``rewards`` is (n_states, Y)."""
    r = np.atleast_2d(np.asarray(rewards, dtype=float))
    return validate(TurnMDP(1, (tuple(range(r.shape[0])),), r.shape[1], np.asarray(rho, dtype=float),
                            (), r, reward_range))


def chain(horizon: int = 3, actions: int = 2, reward: float = 1.0) -> TurnMDP:
    """Deterministic single-state-per-turn chain; action 0 pays ``reward`` at the end."""
    P = tuple(np.ones((1, actions, 1)) for _ in range(horizon - 1))
    r = np.zeros((1, actions))
    r[0, 0] = reward
    return validate(TurnMDP(horizon, tuple((h,) for h in range(horizon)), actions, np.array([1.0]), P, r,
                            (0.0, 1.0)))


@pytest.fixture
def small_mdp() -> TurnMDP:
    return gen_random_mdp(2, 3, 2, 2, seed=11)


@pytest.fixture
def mdp3() -> TurnMDP:
    return gen_random_mdp(3, 3, 3, 2, seed=5)


__all__ = ["bandit", "chain", "random_instance", "random_loglinear", "random_tabular", "seeds"]


# one-line verdicts from the acceptance suite, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from lstdkit.instances import random_instance, two_state_chain

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def two_state():
    return two_state_chain(noise_std=0.0)


@pytest.fixture
def two_state_noisy():
    return two_state_chain(noise_std=0.1)


@st.composite
def instances(draw, max_states=8, max_features=4, transient=True, gamma=None):
    """Random MRP + features drawn through the library generator from a hypothesis seed."""
    seed = draw(st.integers(0, 2**32 - 1))
    k = draw(st.integers(1, max_features))
    t = draw(st.integers(0, 2)) if transient else 0
    n = draw(st.integers(max(k, 2) + t, max(max(k, 2) + t, max_states)))
    return random_instance(np.random.default_rng(seed), n, k, n_transient=t, gamma=gamma)


def power_stationary(p, iters=20000):
    """Cesaro average of the distribution of a chain started uniformly on its support."""
    x = np.full(p.shape[0], 1.0 / p.shape[0])
    acc = np.zeros_like(x)
    for _ in range(iters):
        acc += x
        x = x @ p
    return acc / iters


def series_value(p, r, gamma, terms=2000):
    v = np.zeros_like(r, dtype=float)
    term = np.array(r, dtype=float)
    for _ in range(terms):
        v += term
        term = gamma * (p @ term)
    return v


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

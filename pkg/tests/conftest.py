import numpy as np
import pytest

from piplus_kit.model import Grid, counterexample_model, discretize, lq_model


@pytest.fixture(scope="session")
def lq():
    model, cert = lq_model(0.9, 1.0, 1.0, 1.0, 5.0, -0.5)
    table = discretize(model, Grid([-2.0], [2.0], [401]), 201)
    return model, cert, table


@pytest.fixture(scope="session")
def ce():
    model, cert = counterexample_model()
    table = discretize(model, Grid([-5.0], [5.0], [401]), 101)
    return model, cert, table


def random_tiny(rng: np.random.Generator, n_states: int, n_inputs: int):
    """Tiny deterministic problem with dyadic costs and state 0 absorbing.

    Costs off the attractor are at least 1/8 so no zero-cost cycle avoids it.
    """
    from piplus_kit.model import tabular

    nxt = rng.integers(0, n_states, (n_states, n_inputs))
    nxt[:, 0] = rng.integers(0, max(1, n_states - 1), n_states)
    nxt[1:, 0] = np.minimum(nxt[1:, 0], np.arange(n_states - 1))   # input 0 always descends
    cost = rng.integers(1, 9, (n_states, n_inputs)) / 8.0
    absorbing = np.zeros(n_states, dtype=bool)
    absorbing[0] = True
    return tabular(nxt, cost, absorbing, initial=np.zeros(n_states, dtype=np.int64))

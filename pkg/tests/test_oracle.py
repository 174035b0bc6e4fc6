import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from piplus_kit.model import ModelError, tabular
from piplus_kit.oracle import BudgetError, exhaustive_policy_search, riccati_gain, riccati_lq, value_iteration
from piplus_kit.pi import q_values
from piplus_kit.piplus import run_piplus

from conftest import random_tiny


def test_riccati_deadbeat():
    assert riccati_lq(0.0, 1.0, 2.5, 1.0) == pytest.approx(2.5)


def test_riccati_benchmark_fixed_point():
    p = riccati_lq(0.9, 1.0, 1.0, 1.0)
    ref = 1.0
    for _ in range(200):
        ref = 1.0 + 0.81 * ref - (0.9 * ref) ** 2 / (1.0 + ref)
    assert p == pytest.approx(ref, abs=1e-10)
    assert riccati_gain(0.9, 1.0, 1.0, p) == pytest.approx(-0.9 * p / (1 + p))


@pytest.mark.parametrize("args", [(0.9, 1.0, 0.0, 0.0), (0.9, 1.0, -1.0, 1.0), (2.0, 0.0, 1.0, 1.0)])
def test_riccati_rejections(args):
    with pytest.raises(ModelError):
        riccati_lq(*args)


def test_vi_attractor_zero_and_residual(lq):
    _, _, table = lq
    o = value_iteration(table)
    assert o.converged and o.residual <= 1e-8
    assert np.all(o.V.values[table.absorbing] == 0)


def test_vi_below_piplus_values(ce):
    _, _, table = ce
    o = value_iteration(table)
    for t in run_piplus(table, 3):
        assert np.all(o.V.values <= t.V.values + 1e-9)
    assert 28 * o.V(np.array([[18 / 7]]))[0] <= 381.0 + 1e-6


def test_lq_vi_matches_riccati(lq):
    _, _, table = lq
    p = riccati_lq(0.9, 1.0, 1.0, 1.0)
    x = table.states[:, 0]
    inner = (np.abs(x) <= 1.6) & (np.abs(x) >= 0.1)
    np.testing.assert_allclose(value_iteration(table).V.values[inner], p * x[inner] ** 2, rtol=0.01)


def test_single_action_unique_policy():
    t = tabular([[0], [0], [1]], [[0.0], [2.0], [1.0]], [True, False, False])
    o = exhaustive_policy_search(t)
    np.testing.assert_array_equal(o.V.values, [0, 2, 3])


def test_dominance_toy():
    t = tabular([[0, 0], [0, 0]], [[0.0, 0.0], [1.0, 0.0]], [True, False])
    o = exhaustive_policy_search(t)
    assert o.V.values[1] == 0.0 and all(p[1] == 1 for p in o.policies)


def test_budget_refusal():
    t = tabular(np.zeros((7, 4), int), np.ones((7, 4)), [True] + [False] * 6)
    with pytest.raises(BudgetError) as e:
        exhaustive_policy_search(t)
    assert e.value.count == 4 ** 7


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 6), st.integers(1, 4))
def test_enumeration_equals_vi(seed, n, m):
    t = random_tiny(np.random.default_rng(seed), n, m)
    a = exhaustive_policy_search(t)
    b = value_iteration(t)
    np.testing.assert_array_equal(a.V.values, b.V.values)
    q = q_values(t, b.V.values).min(axis=1)
    q[t.absorbing] = 0.0
    assert np.max(np.abs(q - b.V.values)) <= 1e-9

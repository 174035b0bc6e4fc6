import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from piplus_kit.bounds import bound_bundle, exp_bound
from piplus_kit.model import PolicyTable
from piplus_kit.oracle import value_iteration
from piplus_kit.pi import evaluate_policy, run_pi
from piplus_kit.verify import (
    check_kl_envelope,
    check_lyapunov_decrease,
    check_lyapunov_sandwich,
    check_monotone,
    check_near_optimality,
    check_robust_stability,
    check_same_cost,
    perturbed_rollout,
    rollout,
    sigma_upper,
    simulate,
    spread_report,
)


@pytest.fixture(scope="module")
def lq_run(lq):
    model, cert, table = lq
    res = run_pi(table, 4)
    return model, cert, table, res, bound_bundle(cert, s_max=4.0)


def test_counterexample_initial_rollout(ce):
    _, _, table = ce
    tr = rollout(table, table.initial, [2.5], 5, stop_on_absorb=True)
    np.testing.assert_allclose(tr.states[:4, 0], [2.5, 1.5, 0.5, 0.0], atol=1e-12)
    assert tr.reason == "absorbed"


@pytest.mark.parametrize("x0", [-1.7, -0.3, 0.9, 1.95])
def test_lq_initial_rollout_contracts(lq, x0):
    _, _, table = lq
    tr = rollout(table, table.initial, [x0], 8)
    x = np.abs(tr.states[:, 0])
    # closed loop a + b k0 = 0.4 at nodes; nearest-node lookup adds at most |k0| h / 2
    h = (table.grid.upper[0] - table.grid.lower[0]) / (table.grid.num[0] - 1)
    assert x[1] == pytest.approx(0.4 * abs(x0), abs=1e-12)
    assert np.all(x[1:] <= 0.4 * x[:-1] + 0.5 * h / 2 + 1e-12)


def test_attractor_start_stays(lq):
    _, _, table = lq
    tr = rollout(table, table.initial, [0.0], 10)
    assert np.all(tr.states[:, 0] == 0.0)
    assert np.all(tr.costs == 0.0)


def test_kl_envelope_passes_and_planted_violation(lq_run):
    _, _, table, res, b = lq_run
    X0 = table.states[::20]
    batch = simulate(table, res.traces[-1].selection, X0, 30, stop_on_absorb=True)
    assert check_kl_envelope(batch, b.beta).passed
    shrunk = type(b.beta)(s_map=b.beta.s_map, decay=b.beta.decay, lower=b.beta.lower, n_env=b.beta.n_env)
    bad = check_kl_envelope(batch, _Scaled(shrunk, 0.01), iteration=4)
    assert not bad.passed
    assert bad.witness["i"] == 4 and bad.witness["k"] is not None
    # the witness really violates the envelope
    s0 = float(table.model.measure(np.array([bad.witness["state"]]))[0])
    k = bad.witness["k"]
    j = int(np.argmin(np.abs(X0[:, 0] - bad.witness["state"][0])))
    assert batch.sigma[j, k] > 0.01 * b.beta(s0, k)


class _Scaled:
    def __init__(self, beta, c):
        self.beta, self.c = beta, c

    def table(self, s, k):
        return self.c * self.beta.table(s, k)

    def __call__(self, s, k):
        return self.c * self.beta(s, k)


def test_lyapunov_checks(lq_run):
    _, cert, table, res, b = lq_run
    for t in res.traces:
        assert check_lyapunov_decrease(table, b, t.V, t.selection, cert.W, iteration=t.iteration).passed
        assert check_lyapunov_sandwich(table, b, t.V, cert.W, sigma_hi=sigma_upper(table)).passed


def test_near_optimality(lq_run):
    _, _, table, res, b = lq_run
    vi = value_iteration(table)
    rep = check_near_optimality(table, res.values, vi.V, b, vi.H.selection)
    assert rep.passed, rep.as_dict()
    assert set(rep.extra) == {"explicit", "trajectory"}


def test_monotone_pass_and_planted(lq_run):
    _, _, table, res, _ = lq_run
    vals = res.values
    assert check_monotone(vals, table.states).passed
    planted = [v.copy() for v in vals]
    planted[3][57] += 1.0
    rep = check_monotone(planted, table.states)
    assert not rep.passed
    assert rep.witness["i"] == 3
    assert rep.witness["state"] == table.states[57].tolist()


def test_monotone_constant_trace(lq):
    _, _, table = lq
    v = evaluate_policy(table, table.initial).values
    assert check_monotone([v, v.copy(), v.copy()], table.states, v).passed


@pytest.mark.parametrize("mode", ["random", "worst"])
def test_zero_radius_is_nominal(lq, mode):
    _, _, table = lq
    a = rollout(table, table.initial, [1.3], 12)
    b = perturbed_rollout(table, table.initial, 0.0, [1.3], 12, mode=mode)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.costs, b.costs)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.05))
def test_perturbed_rollout_seeded(lq, seed, rho):
    _, _, table = lq
    a = perturbed_rollout(table, table.initial, rho, [1.1], 15, seed=seed)
    b = perturbed_rollout(table, table.initial, rho, [1.1], 15, seed=seed)
    assert np.array_equal(a.states, b.states, equal_nan=True)


def test_spread_counterexample_and_singleton(ce):
    from piplus_kit.analytic import AnalyticPath

    model, _, table = ce
    path = AnalyticPath(model)
    x_bar = np.array([[18 / 7]])
    sets = path.improvement_sets(path.initial_value())
    vals = np.array([path.policy_value(sets, r)(x_bar) for r in ("adversarial", "lowest")])
    rep = spread_report(vals, x_bar)
    assert rep.extra["max_spread"] == pytest.approx(15 / 28, abs=1e-9)
    assert not rep.passed
    H = PolicyTable.singleton(table.initial, table.n_inputs)
    assert check_same_cost(table, H).extra["max_spread"] == 0.0


def test_exp_and_general_beta_agree(lq_run):
    _, cert, table, res, b = lq_run
    batch = simulate(table, res.traces[-1].selection, table.states[::10], 30, stop_on_absorb=True)
    assert check_kl_envelope(batch, b.beta).passed == check_kl_envelope(batch, exp_bound(cert)).passed


def test_robust_margin_monotone_in_offset(lq_run):
    _, _, table, res, b = lq_run
    levels = [0.06 * 0.9 ** j for j in range(30)] + [0.0]
    margins = [check_robust_stability(table, res.traces[-1].selection, b.beta, levels, d, 1.0,
                                      trials=40, K=30).margin for d in (0.02, 0.01, 0.005)]
    assert margins[0] >= margins[1] >= margins[2]

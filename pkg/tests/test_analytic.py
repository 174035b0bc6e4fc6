import numpy as np
import pytest

from piplus_kit.analytic import AnalyticPath, run_pi_analytic, run_piplus_analytic
from piplus_kit.model import counterexample_model, counterexample_v0

X_BAR = np.array([[18.0 / 7.0]])


@pytest.fixture(scope="module")
def path():
    return AnalyticPath(counterexample_model()[0])


def v0(x):
    return counterexample_v0(np.asarray(x)[..., 0])


def test_initial_value_is_closed_form(path):
    x = np.random.default_rng(0).uniform(-6, 6, (500, 1))
    np.testing.assert_allclose(path.initial_value()(x), v0(x), atol=1e-12)


def test_improvement_tie_at_x_bar(path):
    sets = path.improvement_sets(v0)
    chosen = path.candidates[sets(X_BAR)[0], 0]
    assert chosen.tolist() == [0.0, 1.0]
    q = path.q(v0, X_BAR)[0]
    np.testing.assert_allclose(28 * q[sets(X_BAR)[0]], [396.0, 396.0], atol=1e-9)


@pytest.mark.parametrize("x,expected", [(0.0, None), (3.0, [0.0])])
def test_improvement_sets_elsewhere(path, x, expected):
    s = path.improvement_sets(v0)(np.array([[x]]))[0]
    if expected is None:
        assert s.all()
    else:
        assert path.candidates[s, 0].tolist() == expected


def test_selections_give_different_values(path):
    sets = path.improvement_sets(v0)
    adv = path.policy_value(sets, "adversarial")(X_BAR)[0]
    low = path.policy_value(sets, "lowest")(X_BAR)[0]
    assert 28 * adv == pytest.approx(396.0, abs=1e-9)
    assert 28 * low == pytest.approx(381.0, abs=1e-9)
    assert 28 * path.min_selection_value(sets)(X_BAR)[0] == pytest.approx(381.0, abs=1e-9)


def test_adversarial_pi_halts_with_gap(path):
    run = run_pi_analytic(path, iters=3, rule="adversarial", probes=[X_BAR[0] + 1.0])
    assert run.halted and run.report["iteration"] == 2
    assert 28 * run.report["value_at_limit"] == pytest.approx(696.0, abs=1e-9)
    assert 28 * run.report["inf_estimate"] == pytest.approx(681.0, rel=5e-3)


def test_lowest_pi_does_not_halt(path):
    run = run_pi_analytic(path, iters=2, rule="lowest", probes=[X_BAR[0] + 1.0])
    assert not run.halted


def test_piplus_analytic_recovers(path):
    run = run_piplus_analytic(path, iters=2, probes=[X_BAR[0] + 1.0])
    assert 28 * run.iterations[1].value(X_BAR)[0] == pytest.approx(381.0, abs=1e-9)
    assert not run.iterations[1].lsc[0].evidence
    best = run.iterations[1].best(X_BAR)[0]
    assert path.candidates[best, 0].tolist() == [0.0]

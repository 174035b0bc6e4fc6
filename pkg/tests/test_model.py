import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from piplus_kit.model import (
    Grid,
    ModelError,
    PolicyTable,
    ValueTable,
    counterexample_model,
    counterexample_v0,
    discretize,
    interpolate,
    load_table_csv,
    lq_coefficient,
    lq_model,
    stage_cost,
    step,
    table_samples,
    validate_assumptions,
)

X_BAR = 18.0 / 7.0


def test_counterexample_step_and_costs():
    model, _ = counterexample_model()
    assert step(model, [25 / 7], [0.0])[0] == pytest.approx(18 / 7)
    x = np.array([[X_BAR]])
    assert 28 * stage_cost(model, x, [[0.0]])[0] == pytest.approx(216.0)
    assert 28 * stage_cost(model, x, [[1.0]])[0] == pytest.approx(396.0)
    assert 28 * counterexample_v0(X_BAR) == pytest.approx(396.0)


@pytest.mark.parametrize("lo,hi,formula", [
    (0.0, 1.0, lambda s: 3 * s),
    (1.0, 2.0, lambda s: 6 * s - 3),
    (2.0, 3.0, lambda s: 9 * s - 9),
])
def test_v0_piecewise(lo, hi, formula):
    s = np.random.default_rng(0).uniform(lo, hi, 1000)
    np.testing.assert_allclose(counterexample_v0(s), formula(s), atol=1e-12)
    np.testing.assert_allclose(counterexample_v0(-s), formula(s), atol=1e-12)


def test_lq_step_and_coefficient():
    model, cert = lq_model(0.9, 1.0, 1.0, 1.0, 5.0, -0.5)
    assert step(model, [2.0], [-1.0])[0] == pytest.approx(0.8)
    assert lq_coefficient(0.9, 1.0, 1.0, 1.0, -0.5) == pytest.approx(1.25 / 0.84)
    assert cert.case == "chi_leq_identity"
    with pytest.raises(ModelError):
        lq_coefficient(0.9, 1.0, 1.0, 1.0, 0.5)


def test_negative_cost_raises():
    model, _ = lq_model(0.9, 1.0, 1.0, 1.0, 5.0, -0.5)
    bad = type(model)(**{**model.__dict__, "stage_cost": lambda x, u: -np.ones(np.shape(x)[:-1])})
    with pytest.raises(ModelError):
        stage_cost(bad, [1.0], [0.0])


def test_grid_basics():
    g = Grid([-1.0, 0.0], [1.0, 2.0], [3, 5])
    assert g.size == 15
    nodes = g.nodes()
    assert np.array_equal(g.nearest(nodes), np.arange(15))
    assert g.contains([[0.0, 1.0]])[0] and not g.contains([[2.0, 1.0]])[0]
    nb = g.neighbors()
    assert nb.shape == (15, 8) and (nb[0] >= 0).sum() == 3
    with pytest.raises(ModelError):
        Grid([1.0], [0.0], [5])


@given(st.floats(min_value=-2.0, max_value=2.0), st.floats(min_value=-3.0, max_value=3.0))
def test_interpolation_exact_for_affine(x, c):
    g = Grid([-2.0], [2.0], [41])
    vt = ValueTable(c * g.nodes()[:, 0] + 1.0, g)
    assert interpolate(vt, [[x]])[0] == pytest.approx(c * x + 1.0, abs=1e-12)


def test_interpolation_flags_out_of_bounds_and_inf():
    g = Grid([0.0], [1.0], [3])
    vt = ValueTable(np.array([0.0, 1.0, np.inf]), g)
    out, oob, inf = interpolate(vt, [[0.25], [0.75], [2.0]], return_flags=True)
    assert out[0] == pytest.approx(0.5)
    assert inf[1] and oob[2]


def test_v0_grid_interpolation_exact():
    model, _ = counterexample_model()
    g = Grid([-5.0], [5.0], [2001])
    vt = ValueTable(counterexample_v0(g.nodes()[:, 0]), g)
    x = np.random.default_rng(1).uniform(-5, 5, 1000)
    np.testing.assert_allclose(vt(x[:, None]), counterexample_v0(x), atol=1e-12)


def test_policy_table_validates_selection():
    sets = np.array([[True, False], [False, True]])
    PolicyTable(sets, np.array([0, 1]))
    with pytest.raises(ModelError):
        PolicyTable(sets, np.array([1, 1]))


def test_discretize_contains_initial_and_key_inputs(ce):
    model, _, table = ce
    assert table.initial is not None
    np.testing.assert_array_equal(table.selected_inputs(table.initial)[:, 0], 0.0)
    assert np.all(np.any(np.isclose(table.inputs[..., 0], 0.5) & table.valid, axis=1))
    assert table.absorbing[table.n_states // 2]
    assert np.all(np.isfinite(table.cost[table.valid]))


@pytest.mark.parametrize("which", ["lq", "ce"])
def test_benchmarks_pass_assumption_checks(which, request):
    model, cert, table = request.getfixturevalue(which)
    from piplus_kit.pi import evaluate_policy

    states, U = table_samples(table)
    v0 = evaluate_policy(table, table.initial).values
    rep = validate_assumptions(model, cert, states, U, v0=v0, grid=table.grid)
    assert rep.ok, rep.violations


def test_assumption_violation_has_witness():
    model, cert = lq_model(0.9, 1.0, 1.0, 1.0, 5.0, -0.5)
    bad = type(cert)(**{**cert.__dict__, "alpha_W": cert.alpha_bar_V})
    x = np.linspace(-1, 1, 11)[:, None]
    U = np.zeros((11, 1, 1))
    rep = validate_assumptions(model, bad, x, U)
    assert not rep.ok
    assert rep.violations[0].state is not None


def test_load_table_csv(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("x,u,xn,c\n0,0,0,0\n1,0,0,1\n1,1,1,0.5\n2,0,1,2\n")
    t = load_table_csv(p, 1, 1, attractor_tol=0.0)
    assert t.n_states == 3 and t.absorbing[0] and not t.absorbing[1]
    assert t.cost[1, 1] == 0.5
    p.write_text("0,0,7,0\n")
    with pytest.raises(ModelError):
        load_table_csv(p, 1, 1)

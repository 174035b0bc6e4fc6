"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line."""
import time

import numpy as np
import pytest

from piplus_kit.analytic import AnalyticPath, run_pi_analytic, run_piplus_analytic
from piplus_kit.bounds import bound_bundle, stopping_iteration
from piplus_kit.model import Grid, PolicyTable, counterexample_model, counterexample_v0, discretize, lq_model
from piplus_kit.oracle import exhaustive_policy_search, riccati_lq, value_iteration
from piplus_kit.pi import run_pi
from piplus_kit.piplus import evaluate_min_selection, run_piplus
from piplus_kit.verify import (
    check_kl_envelope,
    check_lyapunov_decrease,
    check_lyapunov_sandwich,
    check_monotone,
    check_near_optimality,
    check_robust_stability,
    perturbed_rollout,
    rollout,
    sigma_upper,
    simulate,
    validate_robust_level,
)

from conftest import random_tiny

X_BAR = 18.0 / 7.0
EPS = 1e-6
ITERS = 10


def _line(capsys, n: int, name: str, ok: bool, detail: str, seconds: float):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n:2d} {name}: {detail} ({seconds:.2f} s)")


class Bench:
    """A discretized benchmark with its PI+ trace, built once and timed."""

    def __init__(self, model, cert, grid: Grid, n_inputs: int, s_max: float):
        t0 = time.perf_counter()
        self.model, self.cert = model, cert
        self.table = discretize(model, grid, n_inputs)
        self.bundle = bound_bundle(cert, s_max=s_max)
        self.build_s = time.perf_counter() - t0
        t0 = time.perf_counter()
        self.traces = run_piplus(self.table, ITERS)
        self.piplus_s = time.perf_counter() - t0
        self._vi = None

    @property
    def vi(self):
        if self._vi is None:
            self._vi = value_iteration(self.table)
        return self._vi

    @property
    def values(self):
        return [t.V.values for t in self.traces]


@pytest.fixture(scope="module")
def lq_bench():
    model, cert = lq_model(0.9, 1.0, 1.0, 1.0, 5.0, -0.5)
    return Bench(model, cert, Grid([-2.0], [2.0], [2001]), 1001, 4.0)


@pytest.fixture(scope="module")
def ce_bench():
    model, cert = counterexample_model()
    return Bench(model, cert, Grid([-5.0], [5.0], [2001]), 201, 5.0)


@pytest.fixture(scope="module")
def ce_path():
    return AnalyticPath(counterexample_model()[0])


def test_criterion_01_counterexample_exact(capsys, ce_path):
    t0 = time.perf_counter()
    xb = np.array([[X_BAR]])
    v0 = ce_path.initial_value()
    sets = ce_path.improvement_sets(v0)
    tied = ce_path.candidates[sets(xb)[0], 0].tolist()
    q = ce_path.q(v0, xb)[0][sets(xb)[0]]
    adv = ce_path.policy_value(sets, "adversarial")(xb)[0]
    low = ce_path.policy_value(sets, "lowest")(xb)[0]
    s = np.random.default_rng(1).uniform(0.0, 1.0, 1000)
    formula_err = max(np.max(np.abs(counterexample_v0(lo + s) - f(lo + s)))
                      for lo, f in ((0.0, lambda y: 3 * y), (1.0, lambda y: 6 * y - 3), (2.0, lambda y: 9 * y - 9)))
    dt = time.perf_counter() - t0
    ok = (tied == [0.0, 1.0] and np.all(np.abs(q - 396 / 28) <= 1e-9) and abs(adv - 396 / 28) <= 1e-9
          and abs(low - 381 / 28) <= 1e-9 and formula_err <= 1e-12 and dt < 1.0)
    _line(capsys, 1, "counterexample exactness", ok,
          f"H1(18/7)={tied}, objective x28={np.round(28 * q, 12).tolist()}, "
          f"values x28 {28 * adv:.12g}/{28 * low:.12g}, V0 formula err {formula_err:.1e}", dt)
    assert ok


def test_criterion_02_pi_lsc_gap(capsys, ce_path):
    t0 = time.perf_counter()
    xb = np.array([[X_BAR]])
    sets = ce_path.improvement_sets(ce_path.initial_value())
    h1 = ce_path.selector(sets, "adversarial")(xb)[0, 0]
    run = run_pi_analytic(ce_path, iters=2, rule="adversarial", probes=[xb[0] + 1.0], levels=3)
    dt = time.perf_counter() - t0
    rep = run.report or {}
    infima = np.asarray(rep.get("infima", [np.nan]))
    gaps = np.asarray(rep.get("gaps", [np.nan]))
    ok = (h1 == 1.0 and run.halted and rep["iteration"] == 2 and len(infima) == 3
          and abs(rep["value_at_limit"] - 696 / 28) <= 1e-9
          and np.all(np.abs(infima - 681 / 28) <= 0.005 * 681 / 28)
          and np.all(np.abs(gaps - 15 / 28) <= 0.005 * 15 / 28) and dt < 5.0)
    _line(capsys, 2, "PI infeasibility evidence", ok,
          f"h1(18/7)={h1:g}, g(limit) x28={28 * rep.get('value_at_limit', np.nan):.9g}, "
          f"infima x28={np.round(28 * infima, 4).tolist()}, gap x28={np.round(28 * gaps, 4).tolist()}", dt)
    assert ok


def test_criterion_03_piplus_recovery(capsys, ce_path, ce_bench):
    t0 = time.perf_counter()
    plus = run_piplus_analytic(ce_path, iters=2)
    v1 = plus.iterations[1].value(np.array([[X_BAR]]))[0]
    mono = check_monotone(ce_bench.values, ce_bench.table.states, eps=EPS)
    dt = time.perf_counter() - t0 + ce_bench.build_s + ce_bench.piplus_s
    n_it = len(ce_bench.traces) - 1
    ok = n_it >= 5 and abs(v1 - 381 / 28) <= 1e-9 and mono.passed and dt < 30.0
    _line(capsys, 3, "PI+ recovery", ok,
          f"{n_it} iterations on {ce_bench.table.n_states}x{ce_bench.table.n_inputs}, "
          f"V_r1(18/7) x28={28 * v1:.12g}, monotone worst={mono.worst_violation:.2e}", dt)
    assert ok


def test_criterion_04_lq_optimality(capsys, lq_bench):
    t0 = time.perf_counter()
    table = lq_bench.table
    pi = run_pi(table, ITERS)
    p_star = riccati_lq(0.9, 1.0, 1.0, 1.0)
    x = table.states[:, 0]
    interior = np.abs(x) <= 0.8 * 2.0
    v_star = p_star * x ** 2

    def rel_err(v):
        # sup-norm error normalized by the sup of the optimal value on the interior
        return float(np.max(np.abs(v[interior] - v_star[interior])) / np.max(v_star[interior]))

    err_plus, err_pi = rel_err(lq_bench.values[-1]), rel_err(pi.values[-1])
    away = interior & (np.abs(x) >= 0.05)
    pointwise = float(np.max(np.abs(lq_bench.values[-1][away] - v_star[away]) / v_star[away]))
    coincide = max(float(np.max(np.abs(a.V.values - b.V.values) / (1.0 + np.abs(b.V.values))))
                   for a, b in zip(lq_bench.traces, pi.traces))
    dt = time.perf_counter() - t0 + lq_bench.build_s + lq_bench.piplus_s
    ok = (err_plus <= 0.05 and err_pi <= 0.05 and len(pi.traces) - 1 <= ITERS and coincide <= 1e-6 and dt < 30.0)
    _line(capsys, 4, "LQ optimality", ok,
          f"p*={p_star:.6f}, sup rel err PI+ {err_plus:.2e} PI {err_pi:.2e} "
          f"(pointwise for |x|>=0.05: {pointwise:.2e}), PI vs PI+ {coincide:.1e}", dt)
    assert ok


def _kl(bench) -> tuple[bool, int, float]:
    table = bench.table
    idx = np.unique(np.linspace(0, table.n_states - 1, 100).round().astype(int))
    X0 = table.states[idx]
    worst, n, ok = -np.inf, 0, True
    for t in bench.traces:
        batch = simulate(table, t.selection, X0, 50, stop_on_absorb=True)
        r = check_kl_envelope(batch, bench.bundle.beta, EPS, t.iteration)
        ok &= r.passed
        worst = max(worst, r.worst_violation)
        n += len(X0)
    return ok, n, worst


def test_criterion_05_kl_envelope(capsys, lq_bench, ce_bench):
    t0 = time.perf_counter()
    ok_lq, n_lq, w_lq = _kl(lq_bench)
    ok_ce, n_ce, w_ce = _kl(ce_bench)
    dt = time.perf_counter() - t0
    ok = ok_lq and ok_ce and dt < 60.0
    _line(capsys, 5, "KL envelope", ok,
          f"LQ {n_lq} rollouts worst {w_lq:.2e}, counterexample {n_ce} rollouts worst {w_ce:.2e}", dt)
    assert ok


def _lyapunov(bench) -> tuple[bool, float]:
    table, b, W = bench.table, bench.bundle, bench.cert.W
    s_hi = sigma_upper(table)
    ok, worst = True, -np.inf
    for t in bench.traces:
        for r in (check_lyapunov_decrease(table, b, t.V, t.selection, W, EPS, t.iteration),
                  check_lyapunov_sandwich(table, b, t.V, W, EPS, s_hi, t.iteration)):
            ok &= r.passed
            worst = max(worst, r.worst_violation)
    return ok, worst


def test_criterion_06_lyapunov(capsys, lq_bench, ce_bench):
    t0 = time.perf_counter()
    ok_lq, w_lq = _lyapunov(lq_bench)
    ok_ce, w_ce = _lyapunov(ce_bench)
    dt = time.perf_counter() - t0
    ok = ok_lq and ok_ce
    _line(capsys, 6, "Lyapunov properties", ok, f"worst LQ {w_lq:.2e}, counterexample {w_ce:.2e}", dt)
    assert ok


def test_criterion_07_near_optimality(capsys, lq_bench, ce_bench):
    t0 = time.perf_counter()
    reps = [check_near_optimality(b.table, b.values, b.vi.V, b.bundle, b.vi.H.selection, EPS)
            for b in (lq_bench, ce_bench)]
    dt = time.perf_counter() - t0
    ok = all(r.passed for r in reps)
    detail = ", ".join(f"{name} explicit {r.extra['explicit']['worst_violation']:.2e} "
                       f"trajectory {r.extra['trajectory']['worst_violation']:.2e}"
                       for name, r in zip(("LQ", "counterexample"), reps))
    _line(capsys, 7, "near-optimality bounds", ok, detail, dt)
    assert ok


def test_criterion_08_stopping(capsys, lq_bench):
    t0 = time.perf_counter()
    target = lambda s: 0.01 * (1.0 + s)
    res = stopping_iteration(lq_bench.bundle, target, 4.0)
    traces = run_piplus(lq_bench.table, res.i_star)
    v_star = lq_bench.vi.V.values
    gap = traces[-1].V.values - v_star
    excess = float(np.max(gap - target(lq_bench.table.sigma)))
    dt = time.perf_counter() - t0
    ok = res.found and excess <= 0.0
    _line(capsys, 8, "stopping criterion", ok,
          f"i*={res.i_star}, max gap {float(np.max(gap)):.2e}, max gap minus target {excess:.2e}", dt)
    assert ok


def test_criterion_09_oracle_equivalence(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    n_inst, ok_vi, ok_min = 40, 0, 0
    for _ in range(n_inst):
        n, m = int(rng.integers(2, 7)), int(rng.integers(1, 5))
        t = random_tiny(rng, n, m)
        ok_vi += bool(np.array_equal(exhaustive_policy_search(t).V.values, value_iteration(t).V.values))
        sets = rng.random((n, m)) < 0.6
        sets[:, 0] = True
        V, _, _ = evaluate_min_selection(t, PolicyTable(sets, np.zeros(n, int)))
        ok_min += bool(np.array_equal(V.values, exhaustive_policy_search(t, allowed=sets).V.values))
    dt = time.perf_counter() - t0
    ok = ok_vi == n_inst and ok_min == n_inst
    _line(capsys, 9, "oracle equivalence", ok,
          f"enumeration = VI on {ok_vi}/{n_inst}, restricted min = enumeration on {ok_min}/{n_inst}", dt)
    assert ok


def test_criterion_10_robustness(capsys, lq_bench):
    t0 = time.perf_counter()
    table, beta = lq_bench.table, lq_bench.bundle.beta
    bit_equal = all(
        np.array_equal(rollout(table, t.selection, [x0], 50).states,
                       perturbed_rollout(table, t.selection, 0.0, [x0], 50, mode=mode).states, equal_nan=True)
        for t in (lq_bench.traces[0], lq_bench.traces[-1]) for x0 in (-1.9, -0.37, 0.81, 1.5)
        for mode in ("random", "worst"))
    levels = [0.06 * 0.99 ** j for j in range(100)] + [0.0]
    margins, validations = {}, {}
    for i in (0, ITERS):
        sel = lq_bench.traces[i].selection
        res = check_robust_stability(table, sel, beta, levels, 0.01, 1.0, trials=200, K=50, seed=0, mode="worst")
        margins[i] = res.margin
        validations[i] = validate_robust_level(table, sel, beta, res.margin, 0.01, 1.0, trials=1000, K=50, seed=1)
    dt = time.perf_counter() - t0
    ok = (bit_equal and margins[ITERS] >= margins[0] and margins[0] > 0
          and all(v.passed and v.n_samples >= 1000 for v in validations.values()) and dt < 60.0)
    _line(capsys, 10, "robustness", ok,
          f"rho=0 bit-equal {bit_equal}, margin i=0 {margins[0]:.5f} i={ITERS} {margins[ITERS]:.5f}, "
          f"validation pass {[v.passed for v in validations.values()]}", dt)
    assert ok

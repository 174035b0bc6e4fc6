"""Command-line entry point: run, demo-counterexample, bounds, verify.

Exit codes: 0 success, 2 configuration error, 3 check failure, 4 feasibility diagnostic.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import export
from . import verify as vf
from .analytic import AnalyticPath, run_pi_analytic, run_piplus_analytic
from .bounds import bound_bundle, bound_lattice, exp_bound, stopping_iteration
from .funcs import CertificateError
from .model import counterexample_model, counterexample_v0
from .oracle import value_iteration
from .pi import FeasibilityError, run_pi
from .piplus import NonEmptinessError, run_piplus
from .scenario import ConfigError, Scenario, build_table, load, with_overrides

EXIT_OK, EXIT_CONFIG, EXIT_CHECK, EXIT_FEASIBILITY = 0, 2, 3, 4

X_BAR = 18.0 / 7.0


def _log(msg: str):
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------- checks

def run_checks(sc: Scenario, table, cert, traces, out: Path | None = None) -> list:
    """Enabled verification checks over a list of traces; returns CheckReports."""
    ch = sc.checks
    reports = []
    values = [t.V.values for t in traces]
    if ch.monotone:
        vstar = value_iteration(table).V.values if ch.near_optimality else None
        reports.append(vf.check_monotone(values, table.states, vstar, ch.eps_check))
    if ch.same_cost:
        for t in traces[1:]:
            r = vf.check_same_cost(table, t.H, seed=sc.run.seed)
            r.witness = r.witness and {**r.witness, "i": t.iteration}
            reports.append(r)
    if cert is None or table.model is None:
        return reports
    bundle = bound_bundle(cert, sc.certificate.s_max, sc.certificate.on_misdeclared)
    if ch.kl:
        idx = np.unique(np.linspace(0, table.n_states - 1, ch.n_initial).round().astype(int))
        X0 = table.states[idx]
        for t in traces:
            batch = vf.simulate(table, t.selection, X0, ch.horizon, stop_on_absorb=True)
            reports.append(vf.check_kl_envelope(batch, bundle.beta, ch.eps_check, t.iteration))
    if ch.lyapunov:
        s_hi = vf.sigma_upper(table)
        for t in traces:
            reports.append(vf.check_lyapunov_decrease(table, bundle, t.V, t.selection, cert.W,
                                                      ch.eps_check, t.iteration))
            r = vf.check_lyapunov_sandwich(table, bundle, t.V, cert.W, ch.eps_check, s_hi, t.iteration)
            reports.append(r)
    if ch.near_optimality:
        o = value_iteration(table)
        reports.append(vf.check_near_optimality(table, values, o.V, bundle, o.H.selection, ch.eps_check))
    if ch.robust:
        reports.extend(_robust(sc, table, bundle, traces))
    return reports


def _robust(sc: Scenario, table, bundle, traces) -> list:
    rc = sc.robust
    by_iter = {t.iteration: t for t in traces}
    margins, reports = {}, []
    for i in rc.iterations:
        if i not in by_iter:
            continue
        t = by_iter[i]
        res = vf.check_robust_stability(table, t.selection, bundle.beta, rc.levels(), rc.delta, rc.Delta,
                                        rc.trials, rc.horizon, sc.run.seed, rc.mode, sc.checks.eps_check, i)
        margins[i] = res.margin
        val = vf.validate_robust_level(table, t.selection, bundle.beta, res.margin, rc.delta, rc.Delta,
                                       rc.validation_trials, rc.horizon, sc.run.seed + 1)
        val.witness = val.witness and {**val.witness, "i": i}
        reports.append(val)
    if len(margins) >= 2:
        its = sorted(margins)
        ok = margins[its[-1]] >= margins[its[0]]
        reports.append(vf.CheckReport("robust_margin_order", ok, margins[its[0]] - margins[its[-1]],
                                      None if ok else {"state": None, "i": its[-1], "k": None},
                                      len(margins), {"margins": {str(k): v for k, v in margins.items()}}))
    return reports


# ---------------------------------------------------------------- commands

def _analytic_lsc(sc: Scenario, model, rule: str):
    path = AnalyticPath(model, n_uniform=sc.diagnostics.analytic_candidates)
    probes = [np.atleast_1d(np.asarray(p, dtype=float)) for p in sc.diagnostics.lsc_probes]
    return run_pi_analytic(path, sc.run.iters, rule if rule != "random" else "lowest", probes,
                           levels=sc.diagnostics.lsc_levels)


def cmd_run(sc: Scenario, force_checks: bool = False) -> int:
    out = Path(sc.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    export.write_json(out / "config.json", sc.as_dict())
    table, model, cert = build_table(sc)
    summary = {"algo": sc.run.algo, "iters": sc.run.iters}
    if sc.run.algo == "oracle":
        o = value_iteration(table, eps_tie=sc.run.eps_tie)
        rows = [[n, *table.states[n], o.V.values[n], int(o.H.sizes[n])] for n in range(table.n_states)]
        export.write_csv(out / "oracle.csv", ["node"] + [f"x{d}" for d in range(table.states.shape[1])]
                         + ["V", "size_H"], rows)
        summary.update(iterations=o.iterations, converged=o.converged, residual=o.residual)
        export.write_json(out / "summary.json", summary)
        return EXIT_OK if o.converged else EXIT_CHECK
    try:
        if sc.run.algo == "pi":
            res = run_pi(table, sc.run.iters, sc.run.select, sc.run.seed, sc.run.tol_stop, sc.run.eps_tie)
            traces = res.traces
            if res.halted:
                export.write_trace(out / "trace.csv", table, traces)
                export.write_json(out / "feasibility.json", res.report)
                _log(f"feasibility diagnostic: {res.report}")
                return EXIT_FEASIBILITY
            if sc.diagnostics.lsc_probes and model is not None:
                run = _analytic_lsc(sc, model, sc.run.select)
                if run.halted:
                    export.write_trace(out / "trace.csv", table, traces)
                    export.write_json(out / "lsc_report.json", run.report)
                    _log(f"lsc gap {run.report['gap']:.6g} at {run.report['state']} "
                         f"before iteration {run.report['iteration']}")
                    return EXIT_FEASIBILITY
        else:
            traces = run_piplus(table, sc.run.iters, sc.run.eps_tie, tol_stop=sc.run.tol_stop)
    except (FeasibilityError, NonEmptinessError) as exc:
        export.write_json(out / "feasibility.json", {"error": str(exc), "state": getattr(exc, "state", None),
                                                     "iteration": getattr(exc, "iteration", None)})
        _log(f"feasibility diagnostic: {exc}")
        return EXIT_FEASIBILITY
    export.write_trace(out / "trace.csv", table, traces)
    if cert is not None:
        _write_bounds(sc, cert, out)
    if force_checks:
        sc = dataclasses.replace(sc, checks=dataclasses.replace(
            sc.checks, kl=True, lyapunov=True, near_optimality=True, monotone=True))
    reports = run_checks(sc, table, cert, traces, out)
    passed = all(r.passed for r in reports)
    export.write_json(out / "verification.json", {"pass": passed, "reports": [r.as_dict() for r in reports]})
    for r in reports:
        _log(f"{'PASS' if r.passed else 'FAIL'} {r.check} worst={r.worst_violation:.3g} n={r.n_samples}")
    summary.update({"pass": passed, "n_checks": len(reports), "iterations_run": len(traces) - 1})
    export.write_json(out / "summary.json", summary)
    return EXIT_OK if passed else EXIT_CHECK


def _write_bounds(sc: Scenario, cert, out: Path) -> int | None:
    bundle = bound_bundle(cert, sc.certificate.s_max, sc.certificate.on_misdeclared)
    b = sc.bounds
    exp = exp_bound(cert) if cert.has_exponential and cert.case != "general" else None
    rows = bound_lattice(bundle, np.asarray(b.s_values, float), b.k_max, exp)
    res = stopping_iteration(bundle, lambda s: b.eps_abs + b.eps_rel * s, b.delta, b.i_max)
    export.write_bounds(out / "bounds.csv", rows, res.i_star, exp is not None)
    return res.i_star


def cmd_bounds(sc: Scenario) -> int:
    _, model, cert = build_table(sc) if sc.model.kind != "table" else (None, None, None)
    if cert is None:
        raise ConfigError("bounds need a certificate")
    out = Path(sc.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    export.write_json(out / "config.json", sc.as_dict())
    i_star = _write_bounds(sc, cert, out)
    print(f"i_star={i_star}")
    return EXIT_OK


def demo_counterexample(out: Path | None = None, n_curve: int = 2021) -> dict:
    """Objective curve, tie values, infimum evidence and the regularized-iteration transcript."""
    model, _ = counterexample_model()
    path = AnalyticPath(model)
    xb = np.array([[X_BAR]])
    v0 = lambda x: counterexample_v0(np.asarray(x)[..., 0])
    q0 = path.q(v0, xb)[0]
    cands = path.candidates[:, 0]
    tie = {str(u): float(q0[np.flatnonzero(cands == u)[0]]) for u in (0.0, 1.0)}
    sets1 = path.improvement_sets(v0)
    tied = cands[sets1(xb)[0]].tolist()
    v_adv = path.policy_value(sets1, "adversarial")
    v_low = path.policy_value(sets1, "lowest")
    pi_run = run_pi_analytic(path, iters=2, rule="adversarial", probes=[xb[0] + 1.0])
    plus = run_piplus_analytic(path, iters=2, probes=[xb[0] + 1.0])
    u = np.linspace(-0.01, 1.0, n_curve)
    xs = np.full((n_curve, 1), X_BAR + 1.0)
    g = model.stage_cost(xs, u[:, None]) + v_adv(model.dynamics(xs, u[:, None]))
    lsc2 = plus.iterations[2].lsc if plus.iterations[2].lsc else None
    report = {
        "x_bar": X_BAR,
        "improvement_set_at_x_bar": tied,
        "objective_at_x_bar": tie,
        "value_adversarial_selection": float(v_adv(xb)[0]),
        "value_lowest_selection": float(v_low(xb)[0]),
        "pi_lsc": pi_run.report,
        "piplus": {
            "value_1_at_x_bar": float(plus.iterations[1].value(xb)[0]),
            "lsc_before_iteration_2": plus.iterations[1].lsc[0].as_dict(),
            "value_2_at_x_bar_plus_1": float(plus.iterations[2].value(xb + 1.0)[0]),
            "lsc_after_iteration_2": lsc2,
        },
    }
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        export.write_csv(out / "objective_curve.csv", ["u", "objective"], zip(u, g))
        export.write_json(out / "counterexample.json", report)
    return report


def _print_demo(rep: dict):
    s = 28.0
    print(f"improvement set at 18/7: {rep['improvement_set_at_x_bar']}")
    print("objective x28 at 18/7: " + ", ".join(f"u={k}: {v * s:.6f}" for k, v in rep["objective_at_x_bar"].items()))
    print(f"value x28 at 18/7: adversarial {rep['value_adversarial_selection'] * s:.6f}, "
          f"lowest {rep['value_lowest_selection'] * s:.6f}")
    lsc = rep["pi_lsc"]
    if lsc:
        print(f"PI halted before iteration {lsc['iteration']} at x={lsc['state']}: "
              f"g(limit) x28 = {lsc['value_at_limit'] * s:.6f}, infima x28 = "
              + ", ".join(f"{v * s:.6f}" for v in lsc["infima"]) + f", gap x28 = {lsc['gap'] * s:.6f}")
    p = rep["piplus"]
    print(f"PI+ value_1 x28 at 18/7: {p['value_1_at_x_bar'] * s:.6f}; "
          f"lsc gap at 25/7 before iteration 2: {p['lsc_before_iteration_2']['gap'] * s:.3g}; "
          f"value_2 x28 at 25/7: {p['value_2_at_x_bar_plus_1'] * s:.6f}")


# ---------------------------------------------------------------- argparse

def parse_args(argv=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="piplus-kit",
                                     description="Policy iteration with regularized improvement: runs, bounds and checks")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "bounds", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--scenario", required=True, help="TOML scenario file")
        p.add_argument("--algo", choices=["pi", "piplus", "oracle"])
        p.add_argument("--iters", type=int)
        p.add_argument("--select", choices=["lowest", "adversarial", "random"])
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
    p = sub.add_parser("demo-counterexample")
    p.add_argument("--scenario", help="ignored; accepted for a uniform interface")
    p.add_argument("--out", default="out/counterexample")
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        if args.command == "demo-counterexample":
            _print_demo(demo_counterexample(Path(args.out)))
            return EXIT_OK
        sc = with_overrides(load(args.scenario), algo=args.algo, iters=args.iters, select=args.select,
                            seed=args.seed, out=args.out)
        if args.command == "bounds":
            return cmd_bounds(sc)
        return cmd_run(sc, force_checks=args.command == "verify")
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG
    except CertificateError as exc:
        _log(f"certificate error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

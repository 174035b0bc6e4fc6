"""Grid-free evaluation for models whose closed-loop rollouts reach the attractor in
finitely many steps (the scalar counterexample is one).

Value functions are plain callables on state arrays of shape (n, n_x). Policy
costs are exact finite rollout sums, and argmins range over a fixed candidate
input list, so rational values come out with float round-off only.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import SystemModel
from .pi import LscReport, lsc_gap

ValueFn = Callable[[np.ndarray], np.ndarray]
SetFn = Callable[[np.ndarray], np.ndarray]


class AnalyticPath:
    """Exact policy-iteration primitives over a state-independent candidate input list.

    Args:
        model: model with a bounded, state-independent input box.
        n_uniform: number of uniform candidates per input dimension.
        tie_tol: relative tie tolerance for argmin membership.
        probe_eta: offset used to probe neighbouring states when regularizing.
        sigma_tol: states with measure at or below this are on the attractor.
        max_depth: rollout horizon; unfinished rollouts cost +inf.
    """

    def __init__(self, model: SystemModel, n_uniform: int = 21, tie_tol: float = 1e-9,
                 probe_eta: float = 1e-9, sigma_tol: float = 1e-12, max_depth: int = 64):
        self.model = model
        self.tie_tol = tie_tol
        self.probe_eta = probe_eta
        self.sigma_tol = sigma_tol
        self.max_depth = max_depth
        ref = np.zeros((1, model.state_dim))
        lo, hi = (np.ravel(b) for b in model.input_box(ref))
        axes = [np.linspace(a, b, n_uniform) for a, b in zip(lo, hi)]
        mesh = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
        extra = [] if model.key_inputs is None else [np.asarray(model.key_inputs, float).reshape(-1, model.input_dim)]
        cand = np.unique(np.concatenate([mesh] + extra, axis=0), axis=0)
        self.candidates = cand[np.all((cand >= lo) & (cand <= hi), axis=1)]

    def _x(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float).reshape(-1, self.model.state_dim)

    def on_attractor(self, x) -> np.ndarray:
        return np.asarray(self.model.measure(self._x(x)), dtype=float) <= self.sigma_tol

    def rollout_value(self, policy: Callable[[np.ndarray], np.ndarray], x) -> np.ndarray:
        """Finite-horizon sum of stage costs under a state-feedback policy."""
        xs = self._x(x).copy()
        total = np.zeros(xs.shape[0])
        active = ~self.on_attractor(xs)
        for _ in range(self.max_depth):
            if not active.any():
                break
            xa = xs[active]
            u = np.asarray(policy(xa), dtype=float).reshape(-1, self.model.input_dim)
            total[active] += self.model.stage_cost(xa, u)
            xs[active] = self.model.dynamics(xa, u)
            active[active] = ~self.on_attractor(xs[active])
        total[active] = np.inf
        return total

    def initial_value(self) -> ValueFn:
        if self.model.initial_policy is None:
            raise ValueError("model has no initial policy")
        return lambda x: self.rollout_value(self.model.initial_policy, x)

    def q(self, V: ValueFn, x) -> np.ndarray:
        """Objective l(x,u) + V(f(x,u)) for every candidate, shape (n, C)."""
        xs = self._x(x)
        n, C = xs.shape[0], self.candidates.shape[0]
        xb = np.repeat(xs, C, axis=0)
        ub = np.tile(self.candidates, (n, 1))
        q = self.model.stage_cost(xb, ub) + np.asarray(V(self.model.dynamics(xb, ub)), dtype=float)
        return q.reshape(n, C)

    def argmin_sets(self, V: ValueFn, x, allowed: np.ndarray | None = None) -> np.ndarray:
        q = self.q(V, x)
        if allowed is not None:
            q = np.where(allowed, q, np.inf)
        m = q.min(axis=1, keepdims=True)
        return q <= m + self.tie_tol * (1.0 + np.abs(m))

    def improvement_sets(self, V: ValueFn) -> SetFn:
        return lambda x: self.argmin_sets(V, x)

    def regularized_sets(self, sets: SetFn) -> SetFn:
        """Union of the argmin sets at x and at x +- eta along each state axis."""

        def fn(x):
            xs = self._x(x)
            out = sets(xs)
            for d in range(self.model.state_dim):
                for sgn in (-1.0, 1.0):
                    shifted = xs.copy()
                    shifted[:, d] += sgn * self.probe_eta
                    out = out | sets(shifted)
            return out

        return fn

    def selector(self, sets: SetFn, rule: str = "lowest") -> Callable[[np.ndarray], np.ndarray]:
        """State feedback picking the first (lowest) or last (adversarial) candidate in the set."""
        if rule not in ("lowest", "adversarial"):
            raise ValueError(f"unknown rule {rule!r}")

        def h(x):
            s = sets(x)
            C = s.shape[1]
            k = np.argmax(s, axis=1) if rule == "lowest" else C - 1 - np.argmax(s[:, ::-1], axis=1)
            return self.candidates[k]

        return h

    def policy_value(self, sets: SetFn, rule: str = "lowest") -> ValueFn:
        h = self.selector(sets, rule)
        return lambda x: self.rollout_value(h, x)

    def min_selection_value(self, sets: SetFn) -> ValueFn:
        """Smallest cost over all selections of a set-valued policy (recursive minimum)."""

        def value(x, depth=0):
            xs = self._x(x)
            out = np.zeros(xs.shape[0])
            live = ~self.on_attractor(xs)
            if not live.any():
                return out
            if depth >= self.max_depth:
                out[live] = np.inf
                return out
            xl = xs[live]
            s = sets(xl)
            best = np.full(xl.shape[0], np.inf)
            for c in np.flatnonzero(s.any(axis=0)):
                rows = np.flatnonzero(s[:, c])
                u = np.broadcast_to(self.candidates[c], (rows.size, self.model.input_dim))
                val = self.model.stage_cost(xl[rows], u) + value(self.model.dynamics(xl[rows], u), depth + 1)
                best[rows] = np.minimum(best[rows], val)
            out[live] = best
            return out

        return value

    def best_selection_sets(self, sets: SetFn, V: ValueFn) -> SetFn:
        """Minimizers of l + V o f restricted to the given sets."""
        return lambda x: self.argmin_sets(V, x, allowed=sets(x))

    def lsc(self, V: ValueFn, x, **kwargs) -> LscReport:
        return lsc_gap(self.model, V, x, **kwargs)


@dataclass
class AnalyticIteration:
    iteration: int
    value: ValueFn
    sets: SetFn | None = None
    regularized: SetFn | None = None
    best: SetFn | None = None
    lsc: list | None = None


@dataclass
class AnalyticRun:
    iterations: list
    halted: bool = False
    report: dict | None = None


def run_pi_analytic(path: AnalyticPath, iters: int = 2, rule: str = "lowest",
                    probes=(), **lsc_kwargs) -> AnalyticRun:
    """Classical PI on the analytic path; halts when an lsc probe shows non-attainment."""
    its = [AnalyticIteration(0, path.initial_value())]
    for i in range(1, iters + 1):
        V = its[-1].value
        reports = [path.lsc(V, p, **lsc_kwargs) for p in probes]
        its[-1].lsc = reports
        hit = [r for r in reports if r.evidence]
        if hit:
            return AnalyticRun(its, halted=True, report={
                "iteration": i, "kind": "lsc_gap", "state": hit[0].state, **hit[0].as_dict()})
        sets = path.improvement_sets(V)
        its.append(AnalyticIteration(i, path.policy_value(sets, rule), sets=sets))
    return AnalyticRun(its)


def run_piplus_analytic(path: AnalyticPath, iters: int = 2, probes=(), **lsc_kwargs) -> AnalyticRun:
    """PI+ on the analytic path: regularize, take the min over selections, keep the best selection."""
    its = [AnalyticIteration(0, path.initial_value())]
    for i in range(1, iters + 1):
        V = its[-1].value
        its[-1].lsc = [path.lsc(V, p, **lsc_kwargs) for p in probes]
        sets = path.improvement_sets(V)
        reg = path.regularized_sets(sets)
        Vr = path.min_selection_value(reg)
        its.append(AnalyticIteration(i, Vr, sets=sets, regularized=reg,
                                     best=path.best_selection_sets(reg, Vr)))
    return AnalyticRun(its)


__all__ = ["AnalyticPath", "AnalyticIteration", "AnalyticRun", "run_pi_analytic", "run_piplus_analytic"]

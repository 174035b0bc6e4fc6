"""Classical policy iteration on a transition table, plus the lower-semicontinuity probe.

Evaluation is exact on the finite problem: the per-policy cost solves a sparse
linear system over the nodes that reach the absorbing set with probability one;
every other node gets +inf.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order
from scipy.sparse.linalg import spsolve

from .model import PolicyTable, SystemModel, TransitionTable, ValueTable

EPS_TIE = 1e-9


class FeasibilityError(RuntimeError):
    def __init__(self, message: str, state=None, iteration: int | None = None):
        super().__init__(message)
        self.state = state
        self.iteration = iteration


def q_values(table: TransitionTable, values: np.ndarray, allowed: np.ndarray | None = None) -> np.ndarray:
    """Objective cost + interpolated value of the successor for every (state, input) slot."""
    v = np.asarray(values, dtype=float)[table.succ_idx]
    with np.errstate(invalid="ignore"):
        contrib = np.where(table.succ_w > 0, table.succ_w * v, 0.0)
    q = table.cost + contrib.sum(axis=-1)
    mask = table.valid if allowed is None else table.valid & allowed
    return np.where(mask, q, np.inf)


def tie_sets(q: np.ndarray, eps_tie: float = EPS_TIE) -> tuple[np.ndarray, np.ndarray]:
    m = q.min(axis=1)
    feasible = np.isfinite(m)
    with np.errstate(invalid="ignore"):
        sets = (q <= (m + eps_tie * (1.0 + np.abs(m)))[:, None]) & feasible[:, None]
    return sets, feasible


def improve(table: TransitionTable, V, eps_tie: float = EPS_TIE,
            allowed: np.ndarray | None = None) -> tuple[PolicyTable, np.ndarray]:
    """Argmin sets of the one-step objective; the selection is the lowest index.

    Returns:
        The set-valued policy and a boolean mask of infeasible states (all objectives +inf).
    """
    values = V.values if isinstance(V, ValueTable) else V
    sets, feasible = tie_sets(q_values(table, values, allowed), eps_tie)
    return PolicyTable(sets, np.argmax(sets, axis=1)), ~feasible


def select(H: PolicyTable, rule: str = "lowest", rng: np.random.Generator | None = None) -> np.ndarray:
    """Pick one input index per state from a set-valued policy."""
    if rule == "lowest":
        return np.argmax(H.sets, axis=1)
    if rule == "adversarial":
        M = H.sets.shape[1]
        return M - 1 - np.argmax(H.sets[:, ::-1], axis=1)
    if rule == "random":
        rng = rng or np.random.default_rng(0)
        r = rng.random(H.sets.shape)
        return np.argmax(np.where(H.sets, r, -1.0), axis=1)
    raise ValueError(f"unknown selection rule {rule!r}")


def _transition_matrix(table: TransitionTable, selection: np.ndarray) -> sp.csr_matrix:
    rows = np.arange(table.n_states)
    idx = table.succ_idx[rows, selection]
    w = table.succ_w[rows, selection]
    keep = w > 0
    r = np.broadcast_to(rows[:, None], idx.shape)[keep]
    return sp.csr_matrix((w[keep], (r, idx[keep])), shape=(table.n_states, table.n_states))


def _reaches(adjacency: sp.csr_matrix, targets: np.ndarray) -> np.ndarray:
    """Nodes with a path (along adjacency edges) into `targets`."""
    n = adjacency.shape[0]
    if not targets.any():
        return np.zeros(n, dtype=bool)
    rev = adjacency.T.tocsr()
    src = np.flatnonzero(targets)
    link = sp.csr_matrix((np.ones(src.size), (np.full(src.size, n), src)), shape=(n + 1, n + 1))
    graph = sp.bmat([[rev, None], [None, sp.csr_matrix((1, 1))]]).tocsr() + link
    order = breadth_first_order(graph, n, directed=True, return_predecessors=False)
    out = np.zeros(n + 1, dtype=bool)
    out[order] = True
    return out[:n]


def evaluate_policy(table: TransitionTable, selection) -> ValueTable:
    """Exact undiscounted cost of a stationary selection on the table."""
    sel = np.asarray(selection, dtype=np.int64)
    N = table.n_states
    rows = np.arange(N)
    cost = table.cost[rows, sel]
    ab = table.absorbing
    P = _transition_matrix(table, sel)
    P = sp.diags((~ab).astype(float)) @ P           # absorbing rows are sinks
    stuck = ~ab & ~np.isfinite(cost)
    reach_abs = _reaches(P, ab)
    bad = (~reach_abs | stuck) & ~ab
    bad = _reaches(P, bad) & ~ab
    V = np.zeros(N)
    V[bad] = np.inf
    live = np.flatnonzero(~ab & ~bad)
    if live.size:
        A = (sp.identity(live.size, format="csr") - P[live][:, live]).tocsc()
        sol = spsolve(A, cost[live])
        V[live] = np.atleast_1d(sol)
    return ValueTable(V, table.grid)


@dataclass
class PiTrace:
    iteration: int
    V: ValueTable
    H: PolicyTable
    selection: np.ndarray
    infeasible: np.ndarray
    diagnostics: dict = field(default_factory=dict)


@dataclass
class PiResult:
    traces: list
    halted: bool = False
    report: dict | None = None

    @property
    def values(self) -> list[np.ndarray]:
        return [t.V.values for t in self.traces]


def initial_trace(table: TransitionTable) -> PiTrace:
    if table.initial is None:
        raise FeasibilityError("table carries no initial policy")
    V0 = evaluate_policy(table, table.initial)
    H0 = PolicyTable.singleton(table.initial, table.n_inputs)
    return PiTrace(0, V0, H0, np.asarray(table.initial), np.zeros(table.n_states, dtype=bool))


def run_pi(table: TransitionTable, iters: int, rule: str = "lowest", seed: int = 0,
           tol_stop: float = 0.0, eps_tie: float = EPS_TIE,
           probe: Callable[[int, ValueTable], dict | None] | None = None) -> PiResult:
    """Alternate improvement, selection and exact evaluation.

    Args:
        table: discretized problem with an initial policy.
        iters: maximal number of improvement steps.
        rule: selection rule, one of lowest, adversarial, random.
        tol_stop: stop once the sup-norm change of finite values falls below this.
        probe: optional diagnostic called as probe(i, V) before the i-th improvement;
            a returned dict with "evidence" true halts the run with that report.

    Returns:
        PiResult with one trace per computed value function (index 0 is the initial policy).
    """
    rng = np.random.default_rng(seed)
    traces = [initial_trace(table)]
    for i in range(1, iters + 1):
        V = traces[-1].V
        if probe is not None:
            rep = probe(i, V)
            if rep and rep.get("evidence"):
                return PiResult(traces, halted=True, report={"iteration": i, **rep})
        H, infeasible = improve(table, V, eps_tie)
        if infeasible.any():
            j = int(np.flatnonzero(infeasible)[0])
            return PiResult(traces, halted=True, report={
                "iteration": i, "kind": "infeasible", "state": table.states[j].tolist(),
                "n_states": int(infeasible.sum())})
        sel = select(H, rule, rng)
        Vn = evaluate_policy(table, sel)
        traces.append(PiTrace(i, Vn, H, sel, infeasible))
        fin = np.isfinite(Vn.values) & np.isfinite(V.values)
        change = float(np.max(np.abs(Vn.values[fin] - V.values[fin]), initial=0.0))
        traces[-1].diagnostics["sup_change"] = change
        if tol_stop > 0 and change < tol_stop:
            break
    return PiResult(traces)


# ---------------------------------------------------------------- lsc probe

@dataclass
class LscReport:
    state: list
    inputs: list
    infima: list
    value_at_limit: float
    limit_input: float
    gaps: list
    evidence: bool

    @property
    def inf_estimate(self) -> float:
        return self.infima[-1]

    @property
    def gap(self) -> float:
        return self.gaps[-1]

    def as_dict(self) -> dict:
        return {"state": self.state, "argmins": self.inputs, "infima": self.infima,
                "limit_input": self.limit_input, "value_at_limit": self.value_at_limit,
                "gaps": self.gaps, "inf_estimate": self.inf_estimate, "gap": self.gap,
                "evidence": self.evidence}


def _aitken(u: list[float]) -> float:
    if len(u) < 3:
        return u[-1]
    d1, d2 = u[-2] - u[-3], u[-1] - u[-2]
    den = d2 - d1
    if den == 0.0 or not np.isfinite(den):
        return u[-1]
    return u[-1] - d2 * d2 / den


def lsc_gap(model: SystemModel, V: Callable, x, levels: int = 3, base_intervals: int = 20200,
            factor: int = 8, window: int = 4, rel_tol: float = 1e-6, agree: float = 0.05) -> LscReport:
    """Estimate inf of g(u) = l(x,u) + V(f(x,u)) on refined input lattices and the gap to
    g at the limit of the minimizers.

    Level 0 is a uniform lattice over the input interval; each further level is
    `factor` times denser inside a +-`window`-cell neighbourhood of the previous
    minimizer. A gap that stays above `rel_tol` and agrees within `agree` across
    all levels counts as evidence that the infimum is not attained.
    """
    if model.input_dim != 1:
        raise ValueError("lsc_gap handles scalar inputs only")
    xs = np.atleast_2d(np.asarray(x, dtype=float)).reshape(1, model.state_dim)
    lo, hi = (float(np.ravel(b)[0]) for b in model.input_box(xs))

    def g(u):
        u = np.asarray(u, dtype=float).reshape(-1, 1)
        xb = np.broadcast_to(xs, (u.shape[0], model.state_dim))
        return np.asarray(model.stage_cost(xb, u), dtype=float) + np.asarray(V(model.dynamics(xb, u)), dtype=float)

    n = base_intervals
    j = np.arange(n + 1)
    lattice = (lo * (n - j) + hi * j) / n
    spacing = (hi - lo) / n
    vals = g(lattice)
    k = int(np.argmin(vals))
    argmins, infima, spacings = [float(lattice[k])], [float(vals[k])], [spacing]
    for _ in range(1, levels):
        step = spacings[-1] / factor
        m = np.arange(-window * factor, window * factor + 1)
        u = np.clip(argmins[-1] + m * step, lo, hi)
        vals = g(u)
        k = int(np.argmin(vals))
        argmins.append(float(u[k]))
        infima.append(min(float(vals[k]), infima[-1]))
        spacings.append(step)
    u_lim = float(np.clip(_aitken(argmins), lo, hi))
    snap = lattice[int(np.argmin(np.abs(lattice - u_lim)))]
    if abs(snap - u_lim) <= spacings[-1]:
        u_lim = float(snap)
    g_lim = float(g([u_lim])[0])
    gaps = [g_lim - v for v in infima]
    scale = 1.0 + abs(infima[-1])
    evidence = bool(all(gp > rel_tol * scale for gp in gaps)
                    and (max(gaps) - min(gaps)) <= agree * min(gaps))
    return LscReport(xs[0].tolist(), argmins, infima, g_lim, u_lim, gaps, evidence)


__all__ = [
    "q_values", "tie_sets", "improve", "select", "evaluate_policy", "run_pi", "initial_trace",
    "PiTrace", "PiResult", "FeasibilityError", "lsc_gap", "LscReport", "EPS_TIE",
]

"""Reference solutions: value iteration, brute-force policy enumeration and the scalar Riccati fixed point."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .model import ModelError, PolicyTable, TransitionTable, ValueTable
from .pi import EPS_TIE, q_values, tie_sets

ENUM_BUDGET = 4 ** 6


class BudgetError(ValueError):
    def __init__(self, count: int, budget: int):
        super().__init__(f"{count} policies exceed the enumeration budget {budget}")
        self.count = count
        self.budget = budget


@dataclass
class OracleResult:
    V: ValueTable
    H: PolicyTable
    iterations: int
    sup_change: float
    converged: bool
    residual: float
    policies: np.ndarray | None = None


def _reach_under_any(table: TransitionTable) -> np.ndarray:
    """Nodes from which some input sequence reaches the absorbing set."""
    reach = table.absorbing.copy()
    live = table.valid[..., None] & (table.succ_w > 0)
    while True:
        hit = np.any(np.all(~live | reach[table.succ_idx], axis=-1) & table.valid, axis=1)
        new = reach | hit
        if np.array_equal(new, reach):
            return reach
        reach = new


def value_iteration(table: TransitionTable, tol: float = 1e-9, k_max: int = 100000,
                    eps_tie: float = EPS_TIE) -> OracleResult:
    """Synchronous Bellman sweeps from V = 0 until the sup-norm change drops below tol."""
    finite = _reach_under_any(table)
    V = np.where(finite, 0.0, np.inf)
    change, k, converged = np.inf, 0, False
    for k in range(1, k_max + 1):
        Vn = q_values(table, V).min(axis=1)
        Vn[table.absorbing] = 0.0
        Vn[~finite] = np.inf
        change = float(np.max(np.abs(Vn[finite] - V[finite]), initial=0.0))
        V = Vn
        if change < tol:
            converged = True
            break
    q = q_values(table, V)
    sets, _ = tie_sets(q, eps_tie)
    m = q.min(axis=1)
    m[table.absorbing] = 0.0
    res = np.abs(V[finite] - m[finite])
    return OracleResult(ValueTable(V, table.grid), PolicyTable(sets, np.argmax(sets, axis=1)),
                        k, change, converged, float(res.max(initial=0.0)))


def _dense_values(table: TransitionTable, policies: np.ndarray) -> np.ndarray:
    """Costs of a batch of selections (P, N) by dense linear solves; +inf where not absorbed."""
    P_, N = policies.shape
    rows = np.arange(N)
    cost = table.cost[rows, policies]                                   # (P, N)
    idx = table.succ_idx[rows, policies]                                # (P, N, C)
    w = table.succ_w[rows, policies]
    T = np.zeros((P_, N, N))
    pi = np.repeat(np.arange(P_), N * idx.shape[-1])
    ri = np.tile(np.repeat(rows, idx.shape[-1]), P_)
    np.add.at(T, (pi, ri, idx.ravel()), w.ravel())
    T[:, table.absorbing, :] = 0.0
    edge = T > 0
    reach = np.broadcast_to(table.absorbing, (P_, N)).copy()
    for _ in range(N):
        reach |= np.any(edge & reach[:, None, :], axis=2)
    bad = ~reach | (~np.isfinite(cost) & ~table.absorbing)
    for _ in range(N):
        bad |= np.any(edge & bad[:, None, :], axis=2)
    bad &= ~table.absorbing
    keep = ~bad & ~table.absorbing
    A = np.eye(N)[None] - T * keep[:, :, None] * keep[:, None, :]
    b = np.where(keep, cost, 0.0)
    V = np.linalg.solve(A, b[..., None])[..., 0]
    V[~keep] = 0.0
    V[bad] = np.inf
    return V


def exhaustive_policy_search(table: TransitionTable, allowed: np.ndarray | None = None,
                             budget: int = ENUM_BUDGET, rtol: float = 1e-9) -> OracleResult:
    """Evaluate every stationary selection and return the pointwise minimum.

    Args:
        table: tiny problem.
        allowed: optional (N, M) mask restricting the selections.
        budget: refuse when the number of selections exceeds it.
        rtol: relative tolerance when collecting the minimizing policies.
    """
    mask = table.valid if allowed is None else table.valid & allowed
    choices = [np.flatnonzero(mask[i]) for i in range(table.n_states)]
    if any(c.size == 0 for c in choices):
        raise ModelError("a state has no admissible input")
    count = int(np.prod([c.size for c in choices], dtype=np.int64))
    if count > budget:
        raise BudgetError(count, budget)
    policies = np.array(list(itertools.product(*choices)), dtype=np.int64).reshape(count, table.n_states)
    vals = _dense_values(table, policies)
    best = vals.min(axis=0)
    with np.errstate(invalid="ignore"):
        close = (vals == best) | (np.abs(vals - best) <= rtol * (1.0 + np.abs(best)))
    winners = policies[np.all(close, axis=1)]
    sets = np.zeros(table.valid.shape, dtype=bool)
    if winners.size:
        sets[np.repeat(np.arange(table.n_states)[None], len(winners), 0).ravel(), winners.ravel()] = True
        sel = winners[0]
    else:
        sel = np.argmax(mask, axis=1)
        sets[np.arange(table.n_states), sel] = True
    return OracleResult(ValueTable(best, table.grid), PolicyTable(sets, sel), count, 0.0,
                        bool(winners.size), 0.0, policies=winners)


def riccati_lq(a: float, b: float, q: float, r: float, tol: float = 1e-12,
               max_iter: int = 1_000_000) -> float:
    """Fixed point of p = q + a^2 p - (a b p)^2 / (r + b^2 p), iterated from p = q."""
    if q < 0 or r < 0:
        raise ModelError("need q >= 0 and r >= 0")
    if r == 0:
        raise ModelError("r = 0 is admissible only with an input bound; not a Riccati case")
    if b == 0 and abs(a) >= 1:
        raise ModelError("(a, b) is not stabilizable")
    p = q
    for _ in range(max_iter):
        pn = q + a * a * p - (a * b * p) ** 2 / (r + b * b * p)
        if not np.isfinite(pn) or pn > 1e300:
            break
        if abs(pn - p) <= tol * max(1.0, abs(pn)):
            return float(pn)
        p = pn
    raise ModelError("Riccati iteration diverged")


def riccati_gain(a: float, b: float, r: float, p: float) -> float:
    return -a * b * p / (r + b * b * p)


__all__ = ["value_iteration", "exhaustive_policy_search", "riccati_lq", "riccati_gain",
           "OracleResult", "BudgetError", "ENUM_BUDGET"]

"""Policy iteration with a regularized improvement map and min-over-selections evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import PolicyTable, TransitionTable, ValueTable
from .pi import EPS_TIE, evaluate_policy, improve, initial_trace, q_values

JUMP_FACTOR = 1.5


class NonEmptinessError(RuntimeError):
    def __init__(self, message: str, state=None, iteration: int | None = None, which: str = ""):
        super().__init__(message)
        self.state = state
        self.iteration = iteration
        self.which = which


def _nearest_sample(table: TransitionTable, i: np.ndarray, u: np.ndarray) -> np.ndarray:
    d = np.abs(table.inputs[i] - u[:, None, :]).max(axis=-1)
    return np.argmin(np.where(table.valid[i], d, np.inf), axis=1)


def regularize(H: PolicyTable, table: TransitionTable, jump_tol: float | None = None,
               radius: int = 1) -> PolicyTable:
    """Grid hull of the improvement map over neighbouring nodes.

    A neighbour's input joins the set of x only when it lies farther than `jump_tol`
    (sup norm) from every input already in H(x); it enters as the nearest valid
    input sample of x. Drift of a continuous branch by less than `jump_tol`
    between adjacent nodes is therefore not treated as a jump. Tables without a
    grid are returned unchanged.
    """
    if table.grid is None:
        return PolicyTable(H.sets.copy(), H.selection.copy())
    if jump_tol is None:
        jump_tol = JUMP_FACTOR * float(np.max(table.input_spacing))
    sets = H.sets.copy()
    sizes = H.sets.sum(axis=1)
    rows = np.arange(table.n_states)
    chosen = table.inputs[rows, H.selection]
    nbrs = table.grid.neighbors(radius)
    for k in range(nbrs.shape[1]):
        j = nbrs[:, k]
        ok = (j >= 0) & (sizes > 0)
        ok[ok] &= sizes[j[ok]] > 0
        single = ok.copy()
        single[ok] = (sizes[ok] == 1) & (sizes[j[ok]] == 1)
        i1 = np.flatnonzero(single)
        if i1.size:
            d = np.abs(chosen[i1] - chosen[j[i1]]).max(axis=-1)
            jump = i1[d > jump_tol]
            if jump.size:
                sets[jump, _nearest_sample(table, jump, chosen[j[jump]])] = True
        for i in np.flatnonzero(ok & ~single):
            mine = table.inputs[i][H.sets[i]]
            theirs = table.inputs[j[i]][H.sets[j[i]]]
            d = np.abs(theirs[:, None, :] - mine[None, :, :]).max(axis=-1).min(axis=1)
            far = theirs[d > jump_tol]
            if far.size:
                sets[np.full(far.shape[0], i), _nearest_sample(table, np.full(far.shape[0], i), far)] = True
    return PolicyTable(sets, np.argmax(sets, axis=1))


def evaluate_min_selection(table: TransitionTable, Hr: PolicyTable, start=None,
                           eps_tie: float = EPS_TIE, max_rounds: int = 1000
                           ) -> tuple[ValueTable, np.ndarray, dict]:
    """Optimal cost of the problem whose action set at x is Hr(x).

    Howard iteration restricted to Hr: exact evaluation, then switch a state's
    input only on a strict improvement beyond the tie tolerance. Terminates at a
    selection attaining the pointwise minimum over all selections of Hr.

    Returns:
        Values, the attaining selection and {"rounds": ..., "infinite": count}.
    """
    sel = np.asarray(Hr.selection if start is None else start, dtype=np.int64).copy()
    rows = np.arange(table.n_states)
    if not np.all(Hr.sets[rows, sel]):
        raise ValueError("start selection outside the restricted sets")
    V = evaluate_policy(table, sel)
    for rounds in range(1, max_rounds + 1):
        q = q_values(table, V.values, Hr.sets)
        m = q.min(axis=1)
        cur = q[rows, sel]
        with np.errstate(invalid="ignore"):
            better = np.isfinite(m) & ~(cur <= m + eps_tie * (1.0 + np.abs(m)))
        better &= ~table.absorbing
        if not better.any():
            break
        sel[better] = np.argmin(q[better], axis=1)
        V = evaluate_policy(table, sel)
    else:
        raise RuntimeError("restricted policy iteration did not terminate")
    return V, sel, {"rounds": rounds, "infinite": int(np.isinf(V.values).sum())}


def best_selection(table: TransitionTable, Hr: PolicyTable, Vr: ValueTable,
                   eps_tie: float = EPS_TIE) -> PolicyTable:
    H, _ = improve(table, Vr, eps_tie, allowed=Hr.sets)
    return H


@dataclass
class PiPlusTrace:
    iteration: int
    V: ValueTable
    H: PolicyTable
    Hr: PolicyTable
    Hstar: PolicyTable
    selection: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _require_nonempty(P: PolicyTable, table: TransitionTable, i: int, which: str):
    empty = ~P.sets.any(axis=1)
    if empty.any():
        j = int(np.flatnonzero(empty)[0])
        raise NonEmptinessError(f"{which} empty at state {table.states[j].tolist()} in iteration {i}",
                                table.states[j].tolist(), i, which)


def run_piplus(table: TransitionTable, iters: int, eps_tie: float = EPS_TIE,
               jump_tol: float | None = None, tol_stop: float = 0.0, radius: int = 1) -> list:
    """Run PI+ for `iters` iterations; index 0 of the result holds the initial policy."""
    t0 = initial_trace(table)
    traces = [PiPlusTrace(0, t0.V, t0.H, t0.H, t0.H, t0.selection)]
    for i in range(1, iters + 1):
        V = traces[-1].V
        H, _ = improve(table, V, eps_tie)
        _require_nonempty(H, table, i, "improvement set")
        Hr = regularize(H, table, jump_tol, radius)
        if np.any(H.sets & ~Hr.sets):
            raise NonEmptinessError("regularized set misses an improvement input", iteration=i, which="hull")
        Vr, attain, info = evaluate_min_selection(table, Hr, start=H.selection, eps_tie=eps_tie)
        Hstar = best_selection(table, Hr, Vr, eps_tie)
        _require_nonempty(Hstar, table, i, "best-selection set")
        fin = np.isfinite(Vr.values) & np.isfinite(V.values)
        info["sup_change"] = float(np.max(np.abs(Vr.values[fin] - V.values[fin]), initial=0.0))
        info["regularized_added"] = int((Hr.sets & ~H.sets).sum())
        traces.append(PiPlusTrace(i, Vr, H, Hr, Hstar, Hstar.selection, info))
        if tol_stop > 0 and info["sup_change"] < tol_stop:
            break
    return traces


__all__ = ["regularize", "evaluate_min_selection", "best_selection", "run_piplus", "PiPlusTrace",
           "NonEmptinessError", "JUMP_FACTOR"]

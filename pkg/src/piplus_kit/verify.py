"""Empirical checks of the stability, Lyapunov, optimality and robustness inequalities.

Closed-loop simulation uses the exact dynamics; the control at an off-grid state
is read from the nearest grid node (its distinguished selection, a seeded random
member of its set, or the member that maximizes the next measure).
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .funcs import KLBound
from .model import PolicyTable, SystemModel, TransitionTable, ValueTable
from .pi import evaluate_policy, select

EPS_CHECK = 1e-6
BALL_POINTS = 8


def worker_count() -> int:
    env = os.environ.get("PIPLUS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(8, os.cpu_count() or 1)


def parallel_map(fn: Callable, items: Sequence) -> list:
    """Order-preserving map over a thread pool capped by PIPLUS_THREADS."""
    n = worker_count()
    if n == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


@dataclass
class CheckReport:
    check: str
    passed: bool
    worst_violation: float
    witness: dict | None
    n_samples: int
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"check": self.check, "pass": bool(self.passed),
                "worst_violation": float(self.worst_violation), "witness": self.witness,
                "n_samples": int(self.n_samples), **({"extra": self.extra} if self.extra else {})}


def _report(check: str, excess: np.ndarray, states: np.ndarray, iteration=None, ks=None,
            extra: dict | None = None) -> CheckReport:
    """Build a report from violation amounts (positive means violated); NaN entries are skipped."""
    ex = np.asarray(excess, dtype=float)
    valid = ~np.isnan(ex)
    n = int(valid.sum())
    if n == 0:
        return CheckReport(check, True, 0.0, None, 0, extra or {})
    flat = np.where(valid, ex, -np.inf)
    j = np.unravel_index(int(np.argmax(flat)), ex.shape)
    worst = float(flat[j])
    passed = worst <= 0.0
    witness = None
    if not passed:
        st = np.asarray(states)[j[0]]
        k = None if ks is None else int(np.asarray(ks)[j] if np.ndim(ks) else ks)
        if ks is None and ex.ndim > 1:
            k = int(j[1])
        witness = {"state": np.atleast_1d(st).tolist(), "i": iteration, "k": k}
    return CheckReport(check, passed, worst, witness, n, extra or {})


# ---------------------------------------------------------------- simulation

@dataclass
class Trajectory:
    x0: np.ndarray
    states: np.ndarray        # (K+1, n_x), NaN after termination
    inputs: np.ndarray        # (K, n_u)
    costs: np.ndarray         # (K,)
    sigma: np.ndarray         # (K+1,)
    reason: str


@dataclass
class TrajectoryBatch:
    states: np.ndarray        # (B, K+1, n_x)
    inputs: np.ndarray        # (B, K, n_u)
    costs: np.ndarray         # (B, K)
    sigma: np.ndarray         # (B, K+1)
    reasons: np.ndarray       # (B,) of str

    def __getitem__(self, b: int) -> Trajectory:
        return Trajectory(self.states[b, 0], self.states[b], self.inputs[b], self.costs[b],
                          self.sigma[b], str(self.reasons[b]))

    def __len__(self) -> int:
        return self.states.shape[0]


class GridPolicy:
    """Nearest-node lookup of a (set-valued) policy on a discretized table."""

    def __init__(self, table: TransitionTable, policy, rule: str = "selection", seed: int = 0):
        if table.grid is None or table.model is None:
            raise ValueError("grid policy needs a gridded table with its model")
        self.table = table
        if isinstance(policy, PolicyTable):
            self.sets, self.selection = policy.sets, policy.selection
        else:
            sel = np.asarray(policy, dtype=np.int64)
            self.sets, self.selection = PolicyTable.singleton(sel, table.n_inputs).sets, sel
        if rule not in ("selection", "random", "adversarial"):
            raise ValueError(f"unknown rollout rule {rule!r}")
        self.rule = rule
        self.rng = np.random.default_rng(seed)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        t = self.table
        nodes = t.grid.nearest(x)
        if self.rule == "selection":
            return t.inputs[nodes, self.selection[nodes]]
        mask = self.sets[nodes] & t.valid[nodes]
        U = t.inputs[nodes]
        if self.rule == "random":
            score = np.where(mask, self.rng.random(mask.shape), -1.0)
        else:
            xb = np.broadcast_to(x[:, None, :], U.shape[:2] + (x.shape[-1],))
            score = np.where(mask, t.model.measure(t.model.dynamics(xb, U)), -np.inf)
        return U[np.arange(len(nodes)), np.argmax(score, axis=1)]


def _ball(n: int, dim: int) -> np.ndarray:
    axis = np.linspace(-1.0, 1.0, n)
    pts = np.stack([m.ravel() for m in np.meshgrid(*([axis] * dim), indexing="ij")], axis=-1)
    return pts[np.linalg.norm(pts, axis=1) <= 1.0 + 1e-12]


def _unit_ball_sample(rng: np.random.Generator, shape: tuple, dim: int) -> np.ndarray:
    if dim == 1:
        return rng.uniform(-1.0, 1.0, shape + (1,))
    g = rng.standard_normal(shape + (dim,))
    g /= np.linalg.norm(g, axis=-1, keepdims=True)
    return g * rng.random(shape + (1,)) ** (1.0 / dim)


def simulate(table: TransitionTable, policy, X0, K: int, rule: str = "selection", seed: int = 0,
             rho: Callable | float | None = None, mode: str = "random",
             stop_on_absorb: bool = False) -> TrajectoryBatch:
    """Closed-loop (optionally rho-perturbed) trajectories from a batch of initial states.

    Args:
        table: gridded table; its model supplies f, l and the measure.
        policy: selection array or PolicyTable.
        X0: initial states (B, n_x).
        rule: selection, random or adversarial choice from the policy set.
        rho: perturbation radius, a constant or a callable of states (B, n_x) -> (B,).
        mode: "random" samples the balls uniformly; "worst" picks, over an 8-point
            ball grid per dimension, the pair of perturbations maximizing the next measure.
        stop_on_absorb: end a trajectory once its measure is within the absorbing radius.
    """
    model, grid = table.model, table.grid
    pol = policy if isinstance(policy, GridPolicy) else GridPolicy(table, policy, rule, seed)
    X = np.array(X0, dtype=float).reshape(-1, model.state_dim)
    B, nx, nu = X.shape[0], model.state_dim, model.input_dim
    S = np.full((B, K + 1, nx), np.nan)
    U = np.full((B, K, nu), np.nan)
    C = np.full((B, K), np.nan)
    sig = np.full((B, K + 1), np.nan)
    reasons = np.full(B, "horizon", dtype=object)
    pert_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])
    radius = None
    if rho is not None:
        radius = (lambda y: np.full(y.shape[0], float(rho))) if np.isscalar(rho) else rho
    ball = _ball(BALL_POINTS, nx)
    active = np.ones(B, dtype=bool)
    S[:, 0], sig[:, 0] = X, model.measure(X)
    for k in range(K):
        if stop_on_absorb:
            absorbed = active & (sig[:, k] <= table.sigma_abs)
            reasons[absorbed] = "absorbed"
            active &= ~absorbed
        inside = grid.contains(X)
        reasons[active & ~inside] = "out-of-grid"
        active &= inside
        if not active.any():
            break
        xa = X[active]
        if radius is None:
            xt = xa
            u = pol(xt)
            nxt = model.dynamics(xt, u)
        elif mode == "worst":
            r0 = radius(xa)
            xt_c = xa[:, None, :] + r0[:, None, None] * ball[None]             # (b, P, n_x)
            b_, P_ = xt_c.shape[:2]
            u_c = pol(xt_c.reshape(-1, nx)).reshape(b_, P_, nu)
            v_c = model.dynamics(xt_c, u_c)
            r1 = radius(v_c.reshape(-1, nx)).reshape(b_, P_)
            eta = v_c[:, :, None, :] + r1[:, :, None, None] * ball[None, None]
            score = model.measure(eta).reshape(b_, -1)
            best = np.argmax(score, axis=1)
            p, q = np.divmod(best, ball.shape[0])
            rows = np.arange(b_)
            xt, u = xt_c[rows, p], u_c[rows, p]
            nxt = eta[rows, p, q]
        else:
            xt = xa + radius(xa)[:, None] * _unit_ball_sample(pert_rng, (xa.shape[0],), nx)
            u = pol(xt)
            v = model.dynamics(xt, u)
            nxt = v + radius(v)[:, None] * _unit_ball_sample(pert_rng, (v.shape[0],), nx)
        U[active, k] = u
        C[active, k] = model.stage_cost(xt, u)
        X = X.copy()
        X[active] = nxt
        S[active, k + 1] = nxt
        sig[active, k + 1] = model.measure(nxt)
    if stop_on_absorb:
        reasons[active & (sig[:, K] <= table.sigma_abs)] = "absorbed"
    return TrajectoryBatch(S, U, C, sig, reasons)


def rollout(table: TransitionTable, policy, x0, K: int, rule: str = "selection", seed: int = 0,
            stop_on_absorb: bool = False) -> Trajectory:
    return simulate(table, policy, np.atleast_2d(np.asarray(x0, dtype=float)), K, rule, seed,
                    stop_on_absorb=stop_on_absorb)[0]


def perturbed_rollout(table: TransitionTable, policy, rho, x0, K: int, seed: int = 0,
                      mode: str = "random", rule: str = "selection") -> Trajectory:
    return simulate(table, policy, np.atleast_2d(np.asarray(x0, dtype=float)), K, rule, seed,
                    rho=rho, mode=mode)[0]


# ---------------------------------------------------------------- checks

def check_kl_envelope(batch: TrajectoryBatch, beta: KLBound, eps: float = EPS_CHECK,
                      iteration: int | None = None) -> CheckReport:
    """sigma(phi(k, x)) <= beta(sigma(x), k) (1 + eps) on every recorded sample."""
    s0 = batch.sigma[:, 0]
    K = batch.sigma.shape[1] - 1
    bound = beta.table(s0, K)
    excess = batch.sigma - bound * (1.0 + eps)
    return _report("kl_envelope", excess, batch.states[:, 0], iteration)


def _next_values(table: TransitionTable, values: np.ndarray, selection: np.ndarray) -> np.ndarray:
    rows = np.arange(table.n_states)
    idx = table.succ_idx[rows, selection]
    w = table.succ_w[rows, selection]
    with np.errstate(invalid="ignore"):
        return np.where(w > 0, w * values[idx], 0.0).sum(axis=1)


def _W_nodes(table: TransitionTable, W: Callable | None) -> np.ndarray:
    return np.zeros(table.n_states) if W is None else np.asarray(W(table.states), dtype=float)


def _W_next(table: TransitionTable, W: Callable | None, selection: np.ndarray) -> np.ndarray:
    if W is None:
        return np.zeros(table.n_states)
    rows = np.arange(table.n_states)
    if table.model is not None:
        nxt = table.model.dynamics(table.states, table.inputs[rows, selection])
        return np.asarray(W(nxt), dtype=float)
    idx = table.succ_idx[rows, selection]
    w = table.succ_w[rows, selection]
    return (w * np.asarray(W(table.states[idx.ravel()]), dtype=float).reshape(idx.shape)).sum(axis=1)


def check_lyapunov_decrease(table: TransitionTable, bundle, V: ValueTable, selection,
                            W: Callable | None = None, eps: float = EPS_CHECK,
                            iteration: int | None = None) -> CheckReport:
    """Y(f(x, h(x))) - Y(x) <= -alpha_Y(sigma(x)) at every node, Y = rho_V(V) + rho_W(W)."""
    sel = np.asarray(selection, dtype=np.int64)
    v = V.values
    vn = _next_values(table, v, sel)
    ok = np.isfinite(v) & np.isfinite(vn) & ~table.flagged(sel)
    Y = np.where(ok, bundle.rho_V(np.where(ok, v, 0.0)) + bundle.rho_W(_W_nodes(table, W)), np.nan)
    Yn = np.where(ok, bundle.rho_V(np.where(ok, vn, 0.0)) + bundle.rho_W(_W_next(table, W, sel)), np.nan)
    excess = Yn - Y + bundle.alpha_Y(table.sigma) - eps * (1.0 + np.abs(Y))
    return _report("lyapunov_decrease", excess, table.states, iteration)


def check_lyapunov_sandwich(table: TransitionTable, bundle, V: ValueTable, W: Callable | None = None,
                            eps: float = EPS_CHECK, sigma_hi: np.ndarray | None = None,
                            iteration: int | None = None) -> CheckReport:
    """alpha_low_Y(sigma) <= Y <= alpha_bar_Y(sigma_hi) at every node with finite V."""
    v = V.values
    ok = np.isfinite(v)
    Y = np.where(ok, bundle.rho_V(np.where(ok, v, 0.0)) + bundle.rho_W(_W_nodes(table, W)), np.nan)
    s_hi = table.sigma if sigma_hi is None else sigma_hi
    slack = eps * (1.0 + np.abs(Y))
    low = bundle.alpha_low_Y(table.sigma) - Y - slack
    high = Y - bundle.alpha_bar_Y(s_hi) - slack
    rep = _report("lyapunov_sandwich", np.maximum(low, high), table.states, iteration)
    rep.extra = {"lower_worst": float(np.nanmax(low, initial=-np.inf)),
                 "upper_worst": float(np.nanmax(high, initial=-np.inf))}
    return rep


def sigma_upper(table: TransitionTable) -> np.ndarray:
    """Largest measure over the one-cell box around each node (the node's own value without a grid)."""
    if table.grid is None or table.model is None:
        return table.sigma
    return table.grid.cell_measure_range(table.model.measure, table.states)[1]


def policy_matrix(table: TransitionTable, selection) -> sp.csr_matrix:
    rows = np.arange(table.n_states)
    sel = np.asarray(selection, dtype=np.int64)
    idx, w = table.succ_idx[rows, sel], table.succ_w[rows, sel]
    keep = (w > 0) & ~table.absorbing[:, None]
    r = np.broadcast_to(rows[:, None], idx.shape)[keep]
    return sp.csr_matrix((w[keep], (r, idx[keep])), shape=(table.n_states, table.n_states))


def check_near_optimality(table: TransitionTable, values: Sequence[np.ndarray], V_star: ValueTable,
                          bundle, h_star, eps: float = EPS_CHECK,
                          sigma_hi: np.ndarray | None = None) -> CheckReport:
    """Explicit bound V^i - V* <= alpha_tilde(beta(sigma, i)) and the trajectory form
    V^i - V* <= E[(V^0 - V*)(x_i)] along the optimal closed loop, for every listed i."""
    vs = V_star.values
    s_hi = sigma_upper(table) if sigma_hi is None else sigma_hi
    n = len(values)
    bound = bundle.near_opt_table(s_hi, max(n - 1, 0))
    P = policy_matrix(table, h_star)
    fin0 = np.isfinite(values[0]) & np.isfinite(vs)
    carry = np.where(fin0, values[0] - vs, 0.0)
    ex_exp, ex_traj = np.full((table.n_states, n), np.nan), np.full((table.n_states, n), np.nan)
    for i, v in enumerate(values):
        ok = np.isfinite(v) & np.isfinite(vs)
        gap = np.where(ok, v - vs, np.nan)
        slack = eps * (1.0 + np.abs(vs))
        ex_exp[:, i] = gap - bound[:, i] - slack
        ex_traj[:, i] = np.where(fin0, gap - carry - slack, np.nan)
        carry = P @ carry
    r1 = _report("near_optimality_explicit", ex_exp, table.states)
    r2 = _report("near_optimality_trajectory", ex_traj, table.states)
    worst = max(r1.worst_violation, r2.worst_violation)
    witness = r1.witness if r1.worst_violation >= r2.worst_violation else r2.witness
    if witness is not None:
        witness = {**witness, "i": witness["k"], "k": None}
    return CheckReport("near_optimality", r1.passed and r2.passed, worst, witness,
                       r1.n_samples + r2.n_samples,
                       {"explicit": r1.as_dict(), "trajectory": r2.as_dict()})


def check_monotone(values: Sequence[np.ndarray], states: np.ndarray, V_star: np.ndarray | None = None,
                   eps: float = EPS_CHECK) -> CheckReport:
    """V^{i+1} <= V^i node-wise, and the sup gap to V* nonincreasing across iterations."""
    if len(values) < 2:
        return CheckReport("monotone", True, 0.0, None, 0)
    worst, witness, n = -np.inf, None, 0
    for i in range(len(values) - 1):
        a, b = values[i], values[i + 1]
        with np.errstate(invalid="ignore"):
            ex = np.where(np.isinf(a) & np.isinf(b), np.nan, b - a - eps * (1.0 + np.abs(np.where(np.isfinite(a), a, 0.0))))
        ex = np.where(np.isfinite(a) & np.isinf(b), np.inf, ex)
        r = _report("monotone", ex, states, iteration=i + 1)
        n += r.n_samples
        if r.worst_violation > worst:
            worst, witness = r.worst_violation, r.witness
    extra = {}
    passed = worst <= 0
    if V_star is not None:
        fin = np.isfinite(V_star)
        gaps = [float(np.max(np.abs(np.where(fin & np.isfinite(v), v - V_star, 0.0)), initial=0.0)) for v in values]
        rises = [gaps[i + 1] - gaps[i] - eps * (1.0 + gaps[i]) for i in range(len(gaps) - 1)]
        extra = {"sup_gaps": gaps, "gap_nonincreasing": bool(max(rises) <= 0)}
        passed = passed and extra["gap_nonincreasing"]
        if max(rises) > worst:
            worst = max(rises)
            witness = {"state": None, "i": int(np.argmax(rises)) + 1, "k": None}
    return CheckReport("monotone", passed, float(max(worst, 0.0) if not passed else worst), witness, n, extra)


def sample_level_set(table: TransitionTable, Delta: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples of {sigma < Delta} inside the grid box (rejection sampling)."""
    grid, model = table.grid, table.model
    lo, hi = np.array(grid.lower), np.array(grid.upper)
    out = []
    count = 0
    while count < n:
        x = rng.uniform(lo, hi, (max(4 * n, 64), grid.dim))
        x = x[model.measure(x) < Delta]
        out.append(x)
        count += len(x)
    return np.concatenate(out)[:n]


@dataclass
class RobustResult:
    margin: float
    levels: list
    passed_levels: list
    report: CheckReport


def _practical_excess(batch: TrajectoryBatch, bound: np.ndarray, delta: float, eps: float) -> np.ndarray:
    return np.maximum(batch.sigma - delta, 0.0) - bound * (1.0 + eps)


def check_robust_stability(table: TransitionTable, policy, beta: KLBound, levels: Sequence[float],
                           delta: float, Delta: float, trials: int = 200, K: int = 50, seed: int = 0,
                           mode: str = "worst", eps: float = EPS_CHECK,
                           iteration: int | None = None) -> RobustResult:
    """Largest rho on a descending ladder whose perturbed trajectories from {sigma < Delta}
    all satisfy max(sigma - delta, 0) <= beta(sigma(x), k)."""
    rng = np.random.default_rng(seed)
    X0 = sample_level_set(table, Delta, trials, rng)
    bound = beta.table(table.model.measure(X0), K)
    passed, margin, last = [], 0.0, None
    for lvl in levels:
        batch = simulate(table, policy, X0, K, seed=seed, rho=float(lvl), mode=mode)
        rep = _report("robust_stability", _practical_excess(batch, bound, delta, eps), X0, iteration)
        rep.extra = {"rho": float(lvl)}
        passed.append(bool(rep.passed))
        last = rep
        if rep.passed:
            margin = float(lvl)
            break
    rep = CheckReport("robust_stability", margin > 0 or (len(levels) and levels[-1] == 0 and passed[-1]),
                      last.worst_violation if last else 0.0, last.witness if last else None,
                      last.n_samples if last else 0, {"margin": margin, "levels_tried": len(passed)})
    return RobustResult(margin, list(map(float, levels[:len(passed)])), passed, rep)


def validate_robust_level(table: TransitionTable, policy, beta: KLBound, rho: float, delta: float,
                          Delta: float, trials: int = 1000, K: int = 50, seed: int = 1,
                          mode: str = "random", eps: float = EPS_CHECK) -> CheckReport:
    """Fresh seeded perturbed trials at a fixed rho level."""
    rng = np.random.default_rng(seed)
    X0 = sample_level_set(table, Delta, trials, rng)
    batch = simulate(table, policy, X0, K, seed=seed, rho=rho, mode=mode)
    bound = beta.table(batch.sigma[:, 0], K)
    rep = _report("robust_validation", _practical_excess(batch, bound, delta, eps), X0)
    rep.extra = {"rho": rho, "delta": delta, "mode": mode}
    return rep


def check_same_cost(table: TransitionTable, H: PolicyTable, n_random: int = 4, seed: int = 0,
                    tol: float = 1e-6) -> CheckReport:
    """Spread of J over the lowest, highest and seeded-random selections of H."""
    rng = np.random.default_rng(seed)
    sels = [select(H, "lowest"), select(H, "adversarial")] + [select(H, "random", rng) for _ in range(n_random)]
    vals = np.stack([evaluate_policy(table, s).values for s in sels])
    return spread_report(vals, table.states, tol)


def spread_report(values: np.ndarray, states: np.ndarray, tol: float = 1e-6) -> CheckReport:
    """Node-wise max minus min over a family of value arrays (rows)."""
    with np.errstate(invalid="ignore"):
        spread = np.nanmax(values, axis=0) - np.nanmin(values, axis=0)
    spread = np.where(np.isnan(spread), 0.0, spread)
    rep = _report("same_cost", spread - tol, states)
    rep.extra = {"max_spread": float(spread.max(initial=0.0))}
    return rep


__all__ = [
    "CheckReport", "Trajectory", "TrajectoryBatch", "GridPolicy", "simulate", "rollout",
    "perturbed_rollout", "check_kl_envelope", "check_lyapunov_decrease", "check_lyapunov_sandwich",
    "check_near_optimality", "check_monotone", "check_robust_stability", "validate_robust_level",
    "check_same_cost", "spread_report", "sigma_upper", "sample_level_set", "worker_count",
    "parallel_map", "policy_matrix", "RobustResult", "EPS_CHECK",
]

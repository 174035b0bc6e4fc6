"""Control problems, state grids, certificates and the gridded transition tables.

A `SystemModel` holds vectorized callables: states are arrays of shape (..., n_x),
inputs (..., n_u). `discretize` turns a model and a `Grid` into a `TransitionTable`,
the finite object every dynamic-programming routine works on: per state a padded
list of input samples, their costs, and multilinear interpolation weights of the
successor.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .funcs import MonotoneFn, identity, linear, zero


class ModelError(ValueError):
    """Invalid model data or model evaluation."""


class DynamicsError(ModelError):
    def __init__(self, message: str, x=None, u=None):
        super().__init__(message)
        self.x = x
        self.u = u


@dataclass(frozen=True)
class SystemModel:
    """x+ = f(x, u) with stage cost l(x, u) >= 0 and input box U(x)."""

    name: str
    state_dim: int
    input_dim: int
    dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]
    stage_cost: Callable[[np.ndarray, np.ndarray], np.ndarray]
    input_box: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    measure: Callable[[np.ndarray], np.ndarray]
    initial_policy: Callable[[np.ndarray], np.ndarray] | None = None
    key_inputs: np.ndarray | None = None
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Certificate:
    """Detectability function W with its comparison functions, plus the bound on V0."""

    W: Callable[[np.ndarray], np.ndarray]
    alpha_W: MonotoneFn
    chi_W: MonotoneFn
    alpha_bar_W: MonotoneFn
    alpha_bar_V: MonotoneFn
    case: str = "general"
    c_W: float | None = None
    a_W: float | None = None
    a_bar_V: float | None = None
    a_bar_W: float | None = None

    def __post_init__(self):
        if self.case not in ("general", "chi_leq_identity", "exponential"):
            raise ModelError(f"unknown certificate case {self.case!r}")

    @property
    def has_exponential(self) -> bool:
        return None not in (self.c_W, self.a_W, self.a_bar_V, self.a_bar_W)


def _states(x, n_x: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != n_x:
        arr = arr.reshape(arr.shape + (1,)) if n_x == 1 else arr
    return arr


def step(model: SystemModel, x, u) -> np.ndarray:
    xs = _states(x, model.state_dim)
    us = _states(u, model.input_dim)
    lo, hi = model.input_box(xs)
    if np.any(us < lo - 1e-12) or np.any(us > hi + 1e-12):
        raise DynamicsError("input outside U(x)", x, u)
    out = np.asarray(model.dynamics(xs, us), dtype=float)
    if not np.all(np.isfinite(out)):
        raise DynamicsError("non-finite successor", x, u)
    return out


def stage_cost(model: SystemModel, x, u):
    xs = _states(x, model.state_dim)
    us = _states(u, model.input_dim)
    c = np.asarray(model.stage_cost(xs, us), dtype=float)
    if np.any(c < 0):
        raise ModelError(f"negative stage cost {c.min()}")
    return float(c) if c.ndim == 0 else c


# ---------------------------------------------------------------- grid

@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid over a state box; flat indices are C-ordered."""

    lower: tuple
    upper: tuple
    num: tuple
    sigma_abs: float | None = None

    def __post_init__(self):
        lo, hi, n = (tuple(float(v) for v in self.lower), tuple(float(v) for v in self.upper),
                     tuple(int(v) for v in self.num))
        if not (len(lo) == len(hi) == len(n)) or any(a >= b for a, b in zip(lo, hi)) or min(n) < 2:
            raise ModelError("grid needs matching bounds with lower < upper and >= 2 nodes per axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "num", n)

    @property
    def dim(self) -> int:
        return len(self.num)

    @property
    def size(self) -> int:
        return int(np.prod(self.num))

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / (np.array(self.num) - 1)

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, n) for a, b, n in zip(self.lower, self.upper, self.num)]

    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def flat_index(self, multi) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.moveaxis(np.asarray(multi), -1, 0)), self.num)

    def multi_index(self, flat) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(flat), self.num), axis=-1)

    def contains(self, x, tol: float = 1e-12) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        span = np.array(self.upper) - np.array(self.lower)
        return np.all((x >= np.array(self.lower) - tol * span) & (x <= np.array(self.upper) + tol * span), axis=-1)

    def clamp(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        inside = self.contains(x)
        return np.clip(x, self.lower, self.upper), ~inside

    def locate(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Corner indices (..., 2**n), weights (..., 2**n) and an out-of-bounds flag."""
        xc, oob = self.clamp(x)
        h = self.spacing
        pos = (xc - np.array(self.lower)) / h
        n = np.array(self.num)
        near = np.rint(pos)
        pos = np.where(np.abs(pos - near) <= 1e-9, near, pos)
        base = np.clip(np.floor(pos), 0, n - 2).astype(np.int64)
        t = pos - base
        corners = np.array(list(itertools.product((0, 1), repeat=self.dim)), dtype=np.int64)
        idx = base[..., None, :] + corners
        w = np.prod(np.where(corners == 1, t[..., None, :], 1.0 - t[..., None, :]), axis=-1)
        return self.flat_index(idx), w, oob

    def nearest(self, x) -> np.ndarray:
        xc, _ = self.clamp(x)
        pos = np.rint((xc - np.array(self.lower)) / self.spacing).astype(np.int64)
        pos = np.clip(pos, 0, np.array(self.num) - 1)
        return self.flat_index(pos)

    def neighbors(self, radius: int = 1) -> np.ndarray:
        """Flat indices of nodes within `radius` cells in every axis (excluding self); -1 pads."""
        multi = self.multi_index(np.arange(self.size))
        offs = [o for o in itertools.product(range(-radius, radius + 1), repeat=self.dim) if any(o)]
        out = np.full((self.size, len(offs)), -1, dtype=np.int64)
        for j, o in enumerate(offs):
            m = multi + np.array(o)
            ok = np.all((m >= 0) & (m < np.array(self.num)), axis=-1)
            out[ok, j] = self.flat_index(m[ok])
        return out

    def cell_measure_range(self, measure, x) -> tuple[np.ndarray, np.ndarray]:
        """Min and max of the measure over the one-cell box around each point."""
        x = np.asarray(x, dtype=float)
        offs = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=self.dim))) * self.spacing
        vals = np.stack([measure(x + o) for o in offs], axis=-1)
        return vals.min(axis=-1), vals.max(axis=-1)


@dataclass(frozen=True)
class ValueTable:
    values: np.ndarray
    grid: Grid | None = None

    def __call__(self, x):
        return interpolate(self, x)


@dataclass(frozen=True)
class PolicyTable:
    """Set-valued policy over input-sample indices plus a distinguished selection."""

    sets: np.ndarray
    selection: np.ndarray

    def __post_init__(self):
        rows = np.arange(self.sets.shape[0])
        has = self.sets.any(axis=1)
        if not np.all(self.sets[rows[has], self.selection[has]]):
            raise ModelError("selection outside its set")

    @property
    def sizes(self) -> np.ndarray:
        return self.sets.sum(axis=1)

    @classmethod
    def singleton(cls, selection, n_inputs: int) -> "PolicyTable":
        sel = np.asarray(selection, dtype=np.int64)
        sets = np.zeros((sel.size, n_inputs), dtype=bool)
        sets[np.arange(sel.size), sel] = True
        return cls(sets, sel)


def interpolate(table: ValueTable, x, return_flags: bool = False):
    """Multilinear interpolation; exact on nodes; +inf if a weighted corner is +inf."""
    if table.grid is None:
        raise ModelError("interpolation needs a grid")
    idx, w, oob = table.grid.locate(_states(x, table.grid.dim))
    vals = table.values[idx]
    contrib = np.where(w > 0, w * vals, 0.0)
    out = contrib.sum(axis=-1)
    if return_flags:
        return out, oob, ~np.isfinite(out)
    return out


# ---------------------------------------------------------------- transition tables

@dataclass(frozen=True)
class TransitionTable:
    """Finite control problem: N states, M padded input slots, C successor corners."""

    states: np.ndarray          # (N, n_x)
    inputs: np.ndarray          # (N, M, n_u)
    valid: np.ndarray           # (N, M)
    cost: np.ndarray            # (N, M)
    succ_idx: np.ndarray        # (N, M, C)
    succ_w: np.ndarray          # (N, M, C)
    out_of_bounds: np.ndarray   # (N, M)
    absorbing: np.ndarray       # (N,)
    sigma: np.ndarray           # (N,)
    grid: Grid | None = None
    model: SystemModel | None = None
    initial: np.ndarray | None = None
    input_spacing: np.ndarray | None = None
    sigma_abs: float = 0.0

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.inputs.shape[1]

    def flagged(self, selection) -> np.ndarray:
        return self.out_of_bounds[np.arange(self.n_states), np.asarray(selection)]

    def selected_inputs(self, selection) -> np.ndarray:
        return self.inputs[np.arange(self.n_states), np.asarray(selection)]

    def lowest(self) -> np.ndarray:
        return np.argmax(self.valid, axis=1)


def _input_samples(model: SystemModel, nodes: np.ndarray, n_inputs: int):
    lo, hi = model.input_box(nodes)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (nodes.shape[0], model.input_dim))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (nodes.shape[0], model.input_dim))
    if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)):
        raise ModelError("input box must be bounded to be sampled")
    if np.any(lo > hi):
        raise ModelError("empty input set at some state")
    t = np.linspace(0.0, 1.0, n_inputs)
    lattice = np.array(list(itertools.product(range(n_inputs), repeat=model.input_dim)))
    frac = t[lattice]                                              # (Mu, n_u)
    # convex combination keeps lattice points such as 0 exact when representable
    uni = lo[:, None, :] * (1.0 - frac)[None] + hi[:, None, :] * frac[None]
    extra = []
    if model.key_inputs is not None:
        keys = np.asarray(model.key_inputs, dtype=float).reshape(-1, model.input_dim)
        extra.append(np.broadcast_to(keys, (nodes.shape[0],) + keys.shape))
    if model.initial_policy is not None:
        extra.append(np.asarray(model.initial_policy(nodes), dtype=float).reshape(-1, 1, model.input_dim))
    samples = np.concatenate([uni] + extra, axis=1) if extra else uni
    inside = np.all((samples >= lo[:, None] - 1e-12) & (samples <= hi[:, None] + 1e-12), axis=-1)
    samples = np.clip(samples, lo[:, None], hi[:, None])
    spacing = (hi[0] - lo[0]) / max(n_inputs - 1, 1)
    return samples, inside, spacing


def _sort_dedupe(samples: np.ndarray, inside: np.ndarray):
    """Sort each state's samples lexicographically, mark duplicates and outsiders invalid."""
    keys = tuple(samples[..., j] for j in reversed(range(samples.shape[-1])))
    order = np.lexsort(keys, axis=-1)
    rows = np.arange(samples.shape[0])[:, None]
    s = samples[rows, order]
    ok = inside[rows, order]
    dup = np.zeros(ok.shape, dtype=bool)
    dup[:, 1:] = np.all(s[:, 1:] == s[:, :-1], axis=-1)
    return s, ok & ~dup, order


def discretize(model: SystemModel, grid: Grid, n_inputs: int = 201) -> TransitionTable:
    """Sample inputs per node, roll one step, and interpolate successors onto the grid."""
    if grid.dim != model.state_dim:
        raise ModelError("grid dimension does not match the model")
    nodes = grid.nodes()
    samples, inside, spacing = _input_samples(model, nodes, n_inputs)
    samples, valid, order = _sort_dedupe(samples, inside)
    initial = None
    if model.initial_policy is not None:
        raw_pos = samples.shape[1] - 1
        initial = np.argmax(order == raw_pos, axis=1)
        dup_first = np.argmax(np.all(samples == samples[np.arange(len(nodes)), initial][:, None], axis=-1)
                              & valid, axis=1)
        initial = dup_first
    N, M = valid.shape
    x = np.broadcast_to(nodes[:, None, :], (N, M, grid.dim))
    nxt = np.asarray(model.dynamics(x, samples), dtype=float)
    cost = np.asarray(model.stage_cost(x, samples), dtype=float)
    if not np.all(np.isfinite(nxt[valid])):
        raise DynamicsError("non-finite successor on the grid")
    if np.any(cost[valid] < 0):
        raise ModelError("negative stage cost on the grid")
    idx, w, oob = grid.locate(nxt)
    sigma = np.asarray(model.measure(nodes), dtype=float)
    sigma_abs = grid.sigma_abs
    if sigma_abs is None:
        pos = sigma[sigma > 0]
        sigma_abs = 0.5 * float(pos.min()) if pos.size else 0.0
    absorbing = sigma <= sigma_abs
    cost = np.where(valid, cost, np.inf)
    return TransitionTable(states=nodes, inputs=samples, valid=valid, cost=cost, succ_idx=idx,
                           succ_w=w, out_of_bounds=oob & valid, absorbing=absorbing, sigma=sigma,
                           grid=grid, model=model, initial=initial,
                           input_spacing=np.atleast_1d(spacing), sigma_abs=float(sigma_abs))


def tabular(next_index, cost, absorbing, valid=None, inputs=None, sigma=None,
            initial=None) -> TransitionTable:
    """Deterministic finite problem: next_index (N, M) and cost (N, M)."""
    nxt = np.asarray(next_index, dtype=np.int64)
    c = np.asarray(cost, dtype=float)
    N, M = nxt.shape
    v = np.ones((N, M), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if not v.any(axis=1).all():
        raise ModelError("every state needs at least one input")
    ab = np.asarray(absorbing, dtype=bool)
    u = np.broadcast_to(np.arange(M, dtype=float)[None, :, None], (N, M, 1)) if inputs is None \
        else np.asarray(inputs, dtype=float).reshape(N, M, -1)
    sig = np.where(ab, 0.0, 1.0) if sigma is None else np.asarray(sigma, dtype=float)
    return TransitionTable(states=np.arange(N, dtype=float)[:, None], inputs=u, valid=v,
                           cost=np.where(v, c, np.inf), succ_idx=np.where(v, nxt, 0)[..., None],
                           succ_w=np.ones((N, M, 1)), out_of_bounds=np.zeros((N, M), dtype=bool),
                           absorbing=ab, sigma=sig, initial=None if initial is None else np.asarray(initial))


def load_table_csv(path, state_dim: int, input_dim: int, attractor_tol: float = 0.0,
                   initial_inputs=None) -> TransitionTable:
    """Read rows (state..., input..., next_state..., cost) into a deterministic table.

    States are the distinct state tuples; successors must coincide with one of them.
    States whose Euclidean norm is <= attractor_tol are absorbing.
    """
    rows = []
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ModelError(f"{path}:{lineno}: non-numeric entry")
            if len(vals) != 2 * state_dim + input_dim + 1:
                raise ModelError(f"{path}:{lineno}: expected {2 * state_dim + input_dim + 1} columns")
            rows.append(vals)
    if not rows:
        raise ModelError(f"{path}: no transitions")
    data = np.array(rows)
    xs, us = data[:, :state_dim], data[:, state_dim:state_dim + input_dim]
    nx, cs = data[:, state_dim + input_dim:-1], data[:, -1]
    states, inverse = np.unique(xs, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    lookup = {tuple(s): i for i, s in enumerate(states)}
    N = len(states)
    per_state = [np.flatnonzero(inverse == i) for i in range(N)]
    M = max(len(p) for p in per_state)
    nxt = np.zeros((N, M), dtype=np.int64)
    cost = np.full((N, M), np.inf)
    valid = np.zeros((N, M), dtype=bool)
    inputs = np.zeros((N, M, input_dim))
    for i, rows_i in enumerate(per_state):
        rows_i = rows_i[np.lexsort(tuple(us[rows_i, j] for j in reversed(range(input_dim))))]
        for j, r in enumerate(rows_i):
            key = tuple(nx[r])
            if key not in lookup:
                raise ModelError(f"{path}: successor {key} is not a listed state")
            nxt[i, j], cost[i, j], valid[i, j], inputs[i, j] = lookup[key], cs[r], True, us[r]
    if np.any(cost[valid] < 0):
        raise ModelError(f"{path}: negative stage cost")
    sigma = np.linalg.norm(states, axis=1)
    initial = None
    if initial_inputs is not None:
        target = np.asarray(initial_inputs, dtype=float).reshape(N, input_dim)
        initial = np.argmin(np.where(valid, np.abs(inputs - target[:, None]).max(axis=-1), np.inf), axis=1)
    table = tabular(nxt, cost, sigma <= attractor_tol, valid=valid, inputs=inputs, sigma=sigma,
                    initial=initial)
    return TransitionTable(**{**table.__dict__, "states": states})


# ---------------------------------------------------------------- benchmarks

CE_DELTA = 0.01


def counterexample_v0(x) -> np.ndarray:
    """Cost of the zero input from x: 3 * sum_j max(0, |x| - j)."""
    s = np.abs(np.asarray(x, dtype=float))
    n = np.ceil(s)
    return 3.0 * n * s - 1.5 * n * (n - 1.0)


def counterexample_v0_inverse(y) -> np.ndarray:
    """Inverse of the radial profile of counterexample_v0; the slope on [n-1, n] is 3n."""
    y = np.asarray(y, dtype=float)
    n = np.maximum(np.ceil((np.sqrt(1.0 + 8.0 * y / 3.0) - 1.0) / 2.0), 1.0)
    return np.where(y <= 0.0, 0.0, (y + 1.5 * n * (n - 1.0)) / (3.0 * n))


def _ce_g1(u):
    return np.clip(2.0 * (1.0 - u), 0.0, 1.0)


def _ce_g2(u):
    return np.clip(2.0 * u, 0.0, 1.0)


def counterexample_model(delta: float = CE_DELTA) -> tuple[SystemModel, Certificate]:
    """Scalar plant x+ = (1 - u) max(0, |x| - 1), u in [-delta, 1], zero initial input."""

    def f(x, u):
        x0, u0 = x[..., 0], u[..., 0]
        return ((1.0 - u0) * np.maximum(0.0, np.abs(x0) - 1.0))[..., None]

    def cost(x, u):
        a, u0 = np.abs(x[..., 0]), u[..., 0]
        return 3.0 * a * _ce_g1(u0) + (a + 1.75 * a * a) * _ce_g2(u0)

    def box(x):
        shape = np.shape(x)[:-1] + (1,)
        return np.full(shape, -delta), np.full(shape, 1.0)

    model = SystemModel(
        name="counterexample", state_dim=1, input_dim=1, dynamics=f, stage_cost=cost,
        input_box=box, measure=lambda x: np.abs(np.asarray(x)[..., 0]),
        initial_policy=lambda x: np.zeros(np.shape(x)[:-1] + (1,)),
        key_inputs=np.array([[0.0], [0.5]]), params={"delta": delta},
    )
    v0 = MonotoneFn(counterexample_v0, s_max=4.0, name="V0", inverse_evaluator=counterexample_v0_inverse)
    cert = Certificate(W=lambda x: np.zeros(np.shape(x)[:-1]), alpha_W=identity(), chi_W=identity(),
                       alpha_bar_W=zero(), alpha_bar_V=v0, case="chi_leq_identity")
    return model, cert


def lq_coefficient(a: float, b: float, q: float, r: float, k0: float) -> float:
    """Closed-loop cost coefficient p0 of u = k0 x: p0 = (q + r k0^2) / (1 - (a + b k0)^2)."""
    rho = a + b * k0
    if abs(rho) >= 1.0:
        raise ModelError(f"initial gain {k0} is not stabilizing (|a + b k0| = {abs(rho)})")
    return (q + r * k0 * k0) / (1.0 - rho * rho)


def lq_model(a: float, b: float, q: float, r: float, u_max: float, k0: float,
             ) -> tuple[SystemModel, Certificate]:
    """Scalar linear plant with quadratic cost, measure x^2, and W = 0."""
    if q <= 0 or r < 0:
        raise ModelError("need q > 0 and r >= 0")
    if a != 0 and b == 0 and abs(a) >= 1:
        raise ModelError("pair (a, b) is not stabilizable")
    p0 = lq_coefficient(a, b, q, r, k0)

    def box(x):
        shape = np.shape(x)[:-1] + (1,)
        return np.full(shape, -u_max), np.full(shape, u_max)

    model = SystemModel(
        name="lq", state_dim=1, input_dim=1,
        dynamics=lambda x, u: a * x + b * u,
        stage_cost=lambda x, u: q * x[..., 0] ** 2 + r * u[..., 0] ** 2,
        input_box=box, measure=lambda x: np.asarray(x)[..., 0] ** 2,
        initial_policy=lambda x: np.clip(k0 * np.asarray(x), -u_max, u_max),
        key_inputs=np.array([[0.0]]),
        params={"a": a, "b": b, "q": q, "r": r, "u_max": u_max, "k0": k0, "p0": p0},
    )
    cert = Certificate(W=lambda x: np.zeros(np.shape(x)[:-1]), alpha_W=identity(),
                       chi_W=linear(1.0 / q), alpha_bar_W=zero(), alpha_bar_V=linear(p0),
                       case="chi_leq_identity" if q >= 1.0 else "general",
                       c_W=1.0 / q, a_W=1.0, a_bar_V=p0, a_bar_W=0.0)
    return model, cert


# ---------------------------------------------------------------- validation

@dataclass
class Violation:
    check: str
    magnitude: float
    state: list
    input: list | None = None


@dataclass
class AssumptionReport:
    violations: list = field(default_factory=list)
    checked: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, check, magnitude, state, inp=None):
        self.violations.append(Violation(check, float(magnitude), np.atleast_1d(state).tolist(),
                                         None if inp is None else np.atleast_1d(inp).tolist()))


def _worst(report, name, excess, states, inputs=None):
    report.checked[name] = int(excess.size)
    if excess.size and np.nanmax(excess) > 0:
        j = np.unravel_index(np.nanargmax(excess), excess.shape)
        report.add(name, excess[j], states[j[0]], None if inputs is None else inputs[j])


def validate_assumptions(model: SystemModel, cert: Certificate | None, states, inputs,
                         v0=None, grid: Grid | None = None, level: float | None = None,
                         eps: float = 1e-6) -> AssumptionReport:
    """Sampled checks of the cost, measure and certificate hypotheses; every failure carries a witness.

    Args:
        states: sample states (S, n_x).
        inputs: input samples per state (S, M, n_u); NaN rows are ignored.
        v0: values of the initial policy's cost at `states`, for the bound on V0.
        grid: grid used for the one-cell slack and for the level-set containment check.
        level: Delta for the containment of {sigma <= Delta} inside the grid.
    """
    rep = AssumptionReport()
    X = np.asarray(states, dtype=float)
    U = np.asarray(inputs, dtype=float)
    ok = np.all(np.isfinite(U), axis=-1)
    Xb = np.broadcast_to(X[:, None, :], U.shape[:2] + (X.shape[-1],))
    lo, hi = model.input_box(X)
    lo = np.broadcast_to(lo, X.shape[:1] + (model.input_dim,))
    hi = np.broadcast_to(hi, X.shape[:1] + (model.input_dim,))
    empty = np.any(lo > hi, axis=-1)
    rep.checked["inputs_nonempty"] = int(X.shape[0])
    for j in np.flatnonzero(empty):
        rep.add("inputs_nonempty", 1.0, X[j])
    Uz = np.where(ok[..., None], U, 0.0)
    cost = np.where(ok, np.asarray(model.stage_cost(Xb, Uz), dtype=float), np.nan)
    _worst(rep, "cost_nonnegative", np.where(ok, -cost, np.nan), X, U)
    bounded = np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))
    if not bounded:
        base = np.asarray(model.stage_cost(X, np.zeros(X.shape[:1] + (model.input_dim,))), dtype=float)
        worst = np.full(X.shape[0], -np.inf)
        for t in 10.0 ** np.arange(1, 7):
            for sgn in (-1.0, 1.0):
                for j in range(model.input_dim):
                    u = np.zeros(X.shape[:1] + (model.input_dim,))
                    u[:, j] = sgn * t
                    inbox = np.all((u >= lo) & (u <= hi), axis=-1)
                    c = np.asarray(model.stage_cost(X, u), dtype=float)
                    flat = np.where(inbox, base + 1.0 - c, -np.inf)
                    worst = np.maximum(worst, flat)
        _worst(rep, "level_bounded_in_u", worst, X)
    sigma = np.asarray(model.measure(X), dtype=float)
    if cert is not None:
        nxt = np.asarray(model.dynamics(Xb, Uz), dtype=float)
        Wx = np.asarray(cert.W(X), dtype=float)
        Wn = np.asarray(cert.W(nxt), dtype=float)
        rhs = -cert.alpha_W(sigma)[:, None] + cert.chi_W(np.where(ok, cost, 0.0))
        lhs = Wn - Wx[:, None]
        _worst(rep, "detectability_decrease", np.where(ok, lhs - rhs - eps * (1 + np.abs(rhs)), np.nan), X, U)
        _worst(rep, "detectability_upper", Wx - cert.alpha_bar_W(sigma) - eps, X)
        if v0 is not None:
            v = np.asarray(v0, dtype=float)
            s_hi = grid.cell_measure_range(model.measure, X)[1] if grid is not None else sigma
            _worst(rep, "initial_cost_bound", v - cert.alpha_bar_V(s_hi) - eps * (1 + np.abs(v)), X)
    if grid is not None and level is not None:
        nodes = grid.nodes()
        multi = grid.multi_index(np.arange(grid.size))
        edge = np.any((multi == 0) | (multi == np.array(grid.num) - 1), axis=-1)
        s_edge = np.asarray(model.measure(nodes[edge]), dtype=float)
        _worst(rep, "level_set_inside_grid", level - s_edge, nodes[edge])
    return rep


def table_samples(table: TransitionTable) -> tuple[np.ndarray, np.ndarray]:
    """States and NaN-padded input samples of a table, for validate_assumptions."""
    U = np.where(table.valid[..., None], table.inputs, np.nan)
    return table.states, U


__all__ = [
    "SystemModel", "Certificate", "Grid", "ValueTable", "PolicyTable", "TransitionTable",
    "ModelError", "DynamicsError", "step", "stage_cost", "interpolate", "discretize", "tabular",
    "load_table_csv", "counterexample_model", "counterexample_v0", "lq_model", "lq_coefficient",
    "validate_assumptions", "AssumptionReport", "table_samples", "CE_DELTA",
]

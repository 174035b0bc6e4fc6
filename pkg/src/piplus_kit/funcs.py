"""Scalar comparison functions (class-K, K-infinity, KL) as evaluator-plus-bracket objects.

Every evaluator is vectorized: it takes a float ndarray of measures and returns an
array of the same shape. Inverses use an attached exact inverse when available and
bisection otherwise, integrals use Simpson quadrature, and iterated decays go
through a nondecreasing envelope.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

TOL_INV = 1e-10
MAX_EXPANSIONS = 20
ENVELOPE_POINTS = 512
TOL_QUAD = 1e-8
ENVELOPE_CHUNK = 1 << 20


class FunctionError(ValueError):
    """Evaluation failure of a comparison function."""


class BracketError(FunctionError):
    """Target value outside the range reachable inside the inversion bracket."""

    def __init__(self, message: str, lower: float, upper: float):
        super().__init__(message)
        self.lower = lower
        self.upper = upper


class DomainError(FunctionError):
    """Argument outside the declared domain of a function."""

    def __init__(self, message: str, s: float):
        super().__init__(message)
        self.s = s


class CertificateError(ValueError):
    """Certificate data inconsistent with the inequalities it must satisfy."""

    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = witness


def _as_output(arr: np.ndarray, scalar: bool):
    return float(np.asarray(arr).reshape(-1)[0]) if scalar else arr


@dataclass(frozen=True)
class MonotoneFn:
    """Nondecreasing map [0, inf) -> [0, inf).

    Attributes:
        evaluator: vectorized callable on float arrays.
        s_max: initial bracket [0, s_max] used when inverting.
        strict: True for strictly increasing maps (invertible).
        zero_at_zero: True when evaluator(0) == 0.
        domain_max: hard upper end of the domain; compositions check against it.
        name: label used in error messages.
        inverse_evaluator: optional exact inverse, used by `invert` instead of bisection.
        slope: set for exactly linear maps s -> slope * s; sums and scalings keep it.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    s_max: float = 1.0
    strict: bool = True
    zero_at_zero: bool = True
    domain_max: float = np.inf
    name: str = ""
    inverse_evaluator: Callable[[np.ndarray], np.ndarray] | None = None
    slope: float | None = None

    def __call__(self, s):
        arr = np.asarray(s, dtype=float)
        if arr.size and np.nanmax(arr) > self.domain_max:
            bad = float(arr.ravel()[np.nanargmax(arr)])
            raise DomainError(f"{self.name or 'function'} evaluated at {bad} > {self.domain_max}", bad)
        out = np.asarray(self.evaluator(arr), dtype=float)
        if out.shape != arr.shape:
            out = np.broadcast_to(out, arr.shape).copy()
        return _as_output(out, arr.ndim == 0)

    def inverse(self, y, extend: bool = False):
        return invert(self, y, extend=extend)

    def inverse_fn(self, extend: bool = False) -> "MonotoneFn":
        """The generalized inverse as a function of its own."""
        return MonotoneFn(
            lambda y: invert(self, y, extend=extend),
            s_max=float(self(self.s_max)) if np.isfinite(self.s_max) else 1.0,
            strict=self.strict,
            zero_at_zero=self.zero_at_zero,
            name=f"inv({self.name})",
            inverse_evaluator=self.evaluator,
        )


def identity(s_max: float = 1.0) -> MonotoneFn:
    return MonotoneFn(lambda s: s.copy(), s_max=s_max, name="id", inverse_evaluator=lambda y: y.copy(),
                      slope=1.0)


def zero(s_max: float = 1.0) -> MonotoneFn:
    return MonotoneFn(np.zeros_like, s_max=s_max, strict=False, name="zero", slope=0.0)


def linear(c: float, s_max: float = 1.0) -> MonotoneFn:
    if c < 0:
        raise FunctionError(f"negative slope {c}")
    if c == 0:
        return zero(s_max)
    return MonotoneFn(lambda s: c * s, s_max=s_max, name=f"{c:g}*id", inverse_evaluator=lambda y: y / c,
                      slope=float(c))


def power(p: float, c: float = 1.0, s_max: float = 1.0) -> MonotoneFn:
    if p <= 0 or c <= 0:
        raise FunctionError("power map needs positive exponent and coefficient")
    return MonotoneFn(lambda s: c * np.power(s, p), s_max=s_max, name=f"{c:g}*s^{p:g}",
                      inverse_evaluator=lambda y: np.power(y / c, 1.0 / p))


def piecewise_linear(knots, values, s_max: float | None = None) -> MonotoneFn:
    """Interpolate (knots, values); beyond the last knot the last slope continues."""
    xs = np.asarray(knots, dtype=float)
    ys = np.asarray(values, dtype=float)
    if xs[0] != 0.0 or np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) < 0):
        raise FunctionError("knots must start at 0 and increase; values must not decrease")
    slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])

    def ev(s):
        s = np.asarray(s, dtype=float)
        out = np.atleast_1d(np.interp(s, xs, ys))
        tail = np.atleast_1d(s > xs[-1])
        out[tail] = ys[-1] + slope * (np.atleast_1d(s)[tail] - xs[-1])
        return out.reshape(s.shape)

    strict = bool(np.all(np.diff(ys) > 0)) and slope > 0
    inv = None
    if strict:
        def inv(y):
            y = np.asarray(y, dtype=float)
            out = np.atleast_1d(np.interp(y, ys, xs))
            tail = np.atleast_1d(y > ys[-1])
            out[tail] = xs[-1] + (np.atleast_1d(y)[tail] - ys[-1]) / slope
            return np.where(y < ys[0], 0.0, out.reshape(y.shape))
    return MonotoneFn(ev, s_max=s_max or float(xs[-1]), strict=strict,
                      zero_at_zero=ys[0] == 0.0, name="pwl", inverse_evaluator=inv)


def scale(c: float, f: MonotoneFn) -> MonotoneFn:
    inv = None
    if f.inverse_evaluator is not None and c > 0:
        inv = lambda y: f.inverse_evaluator(y / c)
    return MonotoneFn(lambda s: c * f.evaluator(s), s_max=f.s_max, strict=f.strict and c > 0,
                      zero_at_zero=f.zero_at_zero, domain_max=f.domain_max, name=f"{c:g}*{f.name}",
                      inverse_evaluator=inv, slope=None if f.slope is None else c * f.slope)


def add(f: MonotoneFn, g: MonotoneFn) -> MonotoneFn:
    slope, inv = None, None
    if f.slope is not None and g.slope is not None:
        slope = f.slope + g.slope
        if slope > 0:
            inv = lambda y: y / slope
    elif g.slope == 0.0:
        inv = f.inverse_evaluator
    elif f.slope == 0.0:
        inv = g.inverse_evaluator
    return MonotoneFn(lambda s: f.evaluator(s) + g.evaluator(s), s_max=max(f.s_max, g.s_max),
                      strict=f.strict or g.strict, zero_at_zero=f.zero_at_zero and g.zero_at_zero,
                      domain_max=min(f.domain_max, g.domain_max), name=f"({f.name}+{g.name})",
                      inverse_evaluator=inv, slope=slope)


def minimum(f: MonotoneFn, g: MonotoneFn) -> MonotoneFn:
    return MonotoneFn(lambda s: np.minimum(f.evaluator(s), g.evaluator(s)),
                      s_max=max(f.s_max, g.s_max), strict=f.strict and g.strict,
                      zero_at_zero=f.zero_at_zero or g.zero_at_zero,
                      domain_max=min(f.domain_max, g.domain_max), name=f"min({f.name},{g.name})")


def compose(f: MonotoneFn, g: MonotoneFn) -> MonotoneFn:
    """s -> f(g(s)); raises DomainError when g leaves the domain of f."""

    def ev(s):
        inner = np.asarray(g(s), dtype=float)
        if inner.size and np.nanmax(inner) > f.domain_max:
            j = int(np.nanargmax(inner))
            bad = float(np.asarray(s).ravel()[j])
            raise DomainError(f"{g.name}({bad}) = {inner.ravel()[j]} exceeds domain of {f.name}", bad)
        return np.asarray(f(inner), dtype=float)

    inv = None
    if f.inverse_evaluator is not None and g.inverse_evaluator is not None:
        inv = lambda y: g.inverse_evaluator(np.asarray(f.inverse_evaluator(y), dtype=float))
    return MonotoneFn(ev, s_max=g.s_max, strict=f.strict and g.strict,
                      zero_at_zero=f.zero_at_zero and g.zero_at_zero,
                      domain_max=g.domain_max, name=f"{f.name}o{g.name}", inverse_evaluator=inv,
                      slope=None if f.slope is None or g.slope is None else f.slope * g.slope)


def invert(f: MonotoneFn, y, tol: float = TOL_INV, extend: bool = False):
    """Generalized inverse min{s >= 0 : f(s) >= y} by vectorized bisection.

    Args:
        f: nondecreasing function; strictly increasing for a true inverse.
        y: target value(s), nonnegative.
        tol: relative residual tolerance, |f(s) - y| <= tol * (1 + y).
        extend: if True, targets above the reachable range map to the bracket
            ceiling s_max * 2**20 instead of raising.

    Returns:
        Preimage(s) with the shape of y.
    """
    yy = np.asarray(y, dtype=float)
    scalar = yy.ndim == 0
    y1 = np.atleast_1d(yy).astype(float).ravel()
    if np.any(~np.isfinite(y1)):
        raise FunctionError(f"non-finite inversion target in {f.name}")
    if f.inverse_evaluator is not None:
        if np.any(y1 < 0):
            raise BracketError(f"negative target for {f.name}", 0.0, np.inf)
        out = np.asarray(f.inverse_evaluator(y1), dtype=float).reshape(np.shape(yy))
        return _as_output(out, scalar)
    f0 = float(f(0.0))
    slack = tol * (1.0 + np.abs(y1))
    if np.any(y1 < f0 - slack):
        raise BracketError(f"target below f(0) = {f0} for {f.name}", f0, np.inf)
    s_max = f.s_max if np.isfinite(f.s_max) and f.s_max > 0 else 1.0
    ceiling = min(s_max * 2.0 ** MAX_EXPANSIONS, f.domain_max)
    hi = np.full_like(y1, min(s_max, ceiling))
    fhi = np.asarray(f(hi), dtype=float)
    for _ in range(MAX_EXPANSIONS + 1):
        short = fhi < y1 - slack
        if not short.any():
            break
        hi[short] = np.minimum(hi[short] * 2.0, ceiling)
        fhi[short] = f(hi[short])
        if np.all(hi[short] >= ceiling):
            break
    short = fhi < y1 - slack
    if short.any():
        if not extend:
            raise BracketError(
                f"target {y1[short][0]} above range of {f.name} on [0, {ceiling}]",
                f0, float(f(ceiling)))
    lo = np.zeros_like(y1)
    active = ~short & (y1 > f0)
    for _ in range(200):
        if not active.any():
            break
        mid = 0.5 * (lo[active] + hi[active])
        fm = np.asarray(f(mid), dtype=float)
        below = fm < y1[active]
        idx = np.flatnonzero(active)
        lo[idx[below]] = mid[below]
        hi[idx[~below]] = mid[~below]
        width = hi[idx] - lo[idx]
        done = width <= 4.0 * np.finfo(float).eps * hi[idx]
        active[idx[done]] = False
    out = np.where(y1 <= f0, 0.0, hi)
    out = out.reshape(np.shape(yy)) if not scalar else out
    return _as_output(np.asarray(out), scalar)


def _adaptive_simpson(q: Callable[[float], float], a: float, b: float, tol: float) -> float:
    def sample(t):
        v = float(q(t))
        if not np.isfinite(v):
            raise FunctionError(f"non-finite integrand sample at {t}")
        return v

    fa, fb = sample(a), sample(b)
    m = 0.5 * (a + b)
    fm = sample(m)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    atol = tol * max(abs(whole), 1e-300)
    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, atol, 0)]
    while stack:
        a0, b0, fa0, fm0, fb0, est, eps, depth = stack.pop()
        m0 = 0.5 * (a0 + b0)
        lm, rm = 0.5 * (a0 + m0), 0.5 * (m0 + b0)
        flm, frm = sample(lm), sample(rm)
        left = (m0 - a0) / 6.0 * (fa0 + 4.0 * flm + fm0)
        right = (b0 - m0) / 6.0 * (fm0 + 4.0 * frm + fb0)
        err = left + right - est
        if depth >= 48 or abs(err) <= 15.0 * eps:
            total += left + right + err / 15.0
        else:
            stack.append((a0, m0, fa0, flm, fm0, left, eps / 2.0, depth + 1))
            stack.append((m0, b0, fm0, frm, fb0, right, eps / 2.0, depth + 1))
    return total


def integrate_rho(q: MonotoneFn, s, tol: float = TOL_QUAD):
    """Integral of q over [0, s] for each entry of s (adaptive Simpson)."""
    ss = np.asarray(s, dtype=float)
    flat = np.atleast_1d(ss).ravel()
    if np.any(flat < 0):
        raise FunctionError("integration upper limit must be nonnegative")
    order = np.argsort(flat, kind="stable")
    out = np.empty_like(flat)
    acc, prev = 0.0, 0.0
    qs = lambda t: q(t)
    for j in order:
        upper = flat[j]
        if upper > prev:
            acc += _adaptive_simpson(qs, prev, upper, tol)
            prev = upper
        out[j] = acc
    return _as_output(out.reshape(ss.shape) if ss.ndim else out[0], ss.ndim == 0)


def _simpson_panels(q: MonotoneFn, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m = 0.5 * (a + b)
    vals = np.asarray(q(np.concatenate([a, m, b])), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise FunctionError(f"non-finite integrand sample in {q.name}")
    fa, fm, fb = np.split(vals, 3)
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb)


def _knots(upper: float, n: int) -> np.ndarray:
    head = upper * np.logspace(-12, -10 * np.log10(2.0), 200)
    body = np.linspace(upper * 2.0 ** -10, upper, n + 1)
    return np.concatenate([[0.0], head, body])


def antiderivative(q: MonotoneFn, tol: float = TOL_QUAD, n_knots: int = 4096,
                   max_doublings: int = 6) -> MonotoneFn:
    """rho(s) = int_0^s q as a MonotoneFn.

    The cumulative integral is tabulated once on a knot grid by composite Simpson,
    doubling the grid until halving every panel changes no cumulative value by
    more than tol (relative). A query adds one Simpson panel from the knot below.
    The table grows on demand when queried beyond its range.
    """
    cache: dict = {}

    def build(upper: float):
        n = n_knots
        for _ in range(max_doublings + 1):
            k = _knots(upper, n)
            coarse = _simpson_panels(q, k[:-1], k[1:])
            mid = 0.5 * (k[:-1] + k[1:])
            fine = _simpson_panels(q, k[:-1], mid) + _simpson_panels(q, mid, k[1:])
            cf, cc = np.cumsum(fine), np.cumsum(coarse)
            if np.all(np.abs(cf - cc) <= tol * np.maximum(np.abs(cf), 1e-300)):
                break
            n *= 2
        cache["knots"], cache["cum"] = k, np.concatenate([[0.0], cf])

    def ev(s):
        flat = np.atleast_1d(np.asarray(s, dtype=float)).ravel()
        if np.any(flat < 0):
            raise FunctionError("integration upper limit must be nonnegative")
        top = float(flat.max(initial=0.0))
        if "knots" not in cache or top > cache["knots"][-1]:
            build(max(top, q.s_max if np.isfinite(q.s_max) else 1.0, 2.0 * cache.get("knots", [0.0])[-1]))
        k, cum = cache["knots"], cache["cum"]
        j = np.clip(np.searchsorted(k, flat, side="right") - 1, 0, k.size - 1)
        out = cum[j] + _simpson_panels(q, k[j], flat)
        return out.reshape(np.shape(s))

    return MonotoneFn(ev, s_max=q.s_max, strict=True, zero_at_zero=True,
                      domain_max=q.domain_max, name=f"int({q.name})")


def _decay_step(alpha_tilde: MonotoneFn, z: np.ndarray) -> np.ndarray:
    a = np.asarray(alpha_tilde(z), dtype=float)
    over = a > z * (1.0 + 1e-9) + 1e-12
    if over.any():
        w = float(z[over].ravel()[0])
        raise CertificateError(f"decay rate exceeds identity at s = {w}", witness=w)
    return np.maximum(z - a, 0.0)


def _envelope_grid(s: np.ndarray, n_env: int) -> np.ndarray:
    return s[:, None] * np.linspace(0.0, 1.0, n_env)[None, :]


def iterate_decay(alpha_tilde: MonotoneFn, k: int, s, n_env: int = ENVELOPE_POINTS):
    """max over s_hat in [0, s] of the k-fold iterate of s -> max(s - alpha_tilde(s), 0)."""
    if k < 0:
        raise ValueError("iteration count must be nonnegative")
    ss = np.asarray(s, dtype=float)
    flat = np.atleast_1d(ss).ravel()
    if k == 0:
        out = flat.copy()
    else:
        z = _envelope_grid(flat, n_env)
        for _ in range(k):
            z = _decay_step(alpha_tilde, z)
        out = np.maximum(z.max(axis=1), 0.0)
    return _as_output(out.reshape(ss.shape) if ss.ndim else out[0], ss.ndim == 0)


@dataclass(frozen=True)
class KLBound:
    """beta(s, k), nondecreasing in s and nonincreasing in k.

    Either `evaluator` is given directly (closed forms), or beta is assembled as
    lower^{-1} o envelope((id - decay)^(k)) o s_map.
    """

    s_map: MonotoneFn | None = None
    decay: MonotoneFn | None = None
    lower: MonotoneFn | None = None
    evaluator: Callable[[np.ndarray, int], np.ndarray] | None = None
    n_env: int = ENVELOPE_POINTS
    name: str = "beta"

    def __call__(self, s, k: int):
        ss = np.asarray(s, dtype=float)
        flat = np.atleast_1d(ss).ravel()
        if self.evaluator is not None:
            out = np.asarray(self.evaluator(flat, int(k)), dtype=float)
        else:
            y = iterate_decay(self.decay, int(k), np.asarray(self.s_map(flat)), self.n_env)
            out = np.asarray(invert(self.lower, y, extend=True), dtype=float)
        out = np.where(flat == 0.0, 0.0, out)
        return _as_output(out.reshape(ss.shape) if ss.ndim else out[0], ss.ndim == 0)

    def table(self, s, k_max: int) -> np.ndarray:
        """beta(s_j, k) for k = 0..k_max as an array of shape (len(s), k_max + 1)."""
        flat = np.atleast_1d(np.asarray(s, dtype=float)).ravel()
        out = np.empty((flat.size, k_max + 1))
        if self.evaluator is not None:
            for k in range(k_max + 1):
                out[:, k] = self.evaluator(flat, k)
        else:
            z = _envelope_grid(np.asarray(self.s_map(flat), dtype=float), self.n_env)
            for k in range(k_max + 1):
                if k > 0:
                    z = _decay_step(self.decay, z)
                out[:, k] = invert(self.lower, np.maximum(z.max(axis=1), 0.0), extend=True)
        out[flat == 0.0, :] = 0.0
        return out


def build_kl(lower: MonotoneFn, upper: MonotoneFn, decay: MonotoneFn,
             n_env: int = ENVELOPE_POINTS) -> KLBound:
    """beta(s, k) = lower^{-1}(envelope of (id - decay)^(k) evaluated at upper(s))."""
    if not lower.strict:
        raise CertificateError(f"lower bound {lower.name} must be strictly increasing")
    return KLBound(s_map=upper, decay=decay, lower=lower, n_env=n_env)


def envelope(f: MonotoneFn, n_env: int = ENVELOPE_POINTS) -> MonotoneFn:
    """s -> max over s_hat in [0, s] of max(f(s_hat), 0), on an n_env-point grid."""

    def ev(s):
        flat = np.atleast_1d(s).ravel()
        out = np.empty_like(flat)
        step = max(1, ENVELOPE_CHUNK // n_env)
        for a in range(0, flat.size, step):
            grid = _envelope_grid(flat[a:a + step], n_env)
            out[a:a + step] = np.maximum(np.asarray(f(grid), dtype=float), 0.0).max(axis=1)
        return out.reshape(np.shape(s))

    return MonotoneFn(ev, s_max=f.s_max, strict=False, zero_at_zero=True, name=f"env({f.name})")


def sample_monotone(f: MonotoneFn, s_max: float, n: int = 1001, eps: float = 1e-12):
    """Return the first s where f decreases on a sample grid, or None."""
    s = np.linspace(0.0, s_max, n)
    v = np.asarray(f(s), dtype=float)
    drop = np.flatnonzero(np.diff(v) < -eps * (1.0 + np.abs(v[:-1])))
    return None if drop.size == 0 else float(s[drop[0] + 1])


__all__ = [
    "MonotoneFn", "KLBound", "FunctionError", "BracketError", "DomainError", "CertificateError",
    "identity", "zero", "linear", "power", "piecewise_linear", "scale", "add", "minimum",
    "compose", "invert", "integrate_rho", "antiderivative", "iterate_decay", "build_kl",
    "envelope", "sample_monotone",
]

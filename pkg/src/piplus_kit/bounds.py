"""Lyapunov functions, KL bounds, near-optimality envelopes and stopping iterations built
from a detectability certificate.

Three certificate shapes are supported: the general one (integrated weights
rho_V, rho_W), the one where chi_W never exceeds the identity (unit weights),
and the linear one with exponential constants (closed-form geometric bound).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .funcs import (
    CertificateError,
    KLBound,
    MonotoneFn,
    add,
    antiderivative,
    build_kl,
    compose,
    envelope,
    identity,
    invert,
    linear,
    minimum,
)
from .model import Certificate, ValueTable

CHECK_POINTS = 2001


@dataclass(frozen=True)
class BoundBundle:
    alpha_Y: MonotoneFn
    alpha_bar_Y: MonotoneFn
    alpha_low_Y: MonotoneFn
    alpha_tilde_Y: MonotoneFn
    rho_V: MonotoneFn
    rho_W: MonotoneFn
    beta: KLBound
    alpha_hat: MonotoneFn
    alpha_tilde: MonotoneFn
    case: str
    q_V: MonotoneFn | None = None
    q_W: MonotoneFn | None = None

    def near_opt(self, s, i: int):
        """alpha_tilde(beta(s, i))."""
        return self.alpha_tilde(self.beta(s, i))

    def near_opt_table(self, s, i_max: int) -> np.ndarray:
        b = self.beta.table(s, i_max)
        return np.asarray(self.alpha_tilde(b), dtype=float)


def _sample_grid(s_max: float, n: int = CHECK_POINTS) -> np.ndarray:
    lin = np.linspace(0.0, s_max, n)[1:]
    geo = s_max * np.logspace(-8, 0, 200)
    return np.unique(np.concatenate([lin, geo]))


def chi_exceeds_identity(chi: MonotoneFn, s_max: float) -> float | None:
    s = _sample_grid(s_max)
    over = np.asarray(chi(s)) > s * (1.0 + 1e-12)
    return float(s[over][0]) if over.any() else None


def _unit_weights(cert: Certificate) -> dict:
    one = identity()
    return dict(rho_V=one, rho_W=one, alpha_Y=cert.alpha_W, alpha_low_Y=cert.alpha_W,
                alpha_bar_Y=add(cert.alpha_bar_V, cert.alpha_bar_W))


def _general_weights(cert: Certificate) -> dict:
    chi, aW, abW, abV = cert.chi_W, cert.alpha_W, cert.alpha_bar_W, cert.alpha_bar_V
    aW_inv = aW.inverse_fn(extend=True)
    chi_inv = chi.inverse_fn(extend=True)
    q_V = MonotoneFn(lambda s: 2.0 * np.asarray(chi(2.0 * s)), s_max=chi.s_max, name="q_V")

    def g(s):
        t = np.asarray(aW_inv(2.0 * np.asarray(chi(s))))
        return np.asarray(chi(s)) + np.asarray(abW(t)) + t

    g_fn = MonotoneFn(g, s_max=chi.s_max, name="g_W")
    q_W = MonotoneFn(lambda s: 0.5 * np.asarray(invert(g_fn, s, extend=True)), s_max=chi.s_max, name="q_W")
    rho_V, rho_W = antiderivative(q_V), antiderivative(q_W)
    quarter = MonotoneFn(lambda s: 0.25 * np.asarray(aW(s)), s_max=aW.s_max, name="aW/4")
    half = MonotoneFn(lambda s: 0.5 * np.asarray(aW(s)), s_max=aW.s_max, name="aW/2")
    alpha_Y = MonotoneFn(lambda s: np.asarray(q_W(quarter(s))) * np.asarray(quarter(s)),
                         s_max=aW.s_max, name="alpha_Y")
    alpha_bar_Y = add(compose(rho_V, abV), compose(rho_W, abW))
    alpha_low_Y = minimum(compose(rho_V, compose(chi_inv, half)), compose(rho_W, half))
    return dict(rho_V=rho_V, rho_W=rho_W, alpha_Y=alpha_Y, alpha_low_Y=alpha_low_Y,
                alpha_bar_Y=alpha_bar_Y, q_V=q_V, q_W=q_W)


def _exponential_weights(cert: Certificate) -> dict:
    if not cert.has_exponential:
        raise CertificateError("exponential constants missing from certificate")
    if cert.c_W > 1.0:
        warnings.warn(f"c_W = {cert.c_W} > 1: unit weights assume chi_W <= identity", stacklevel=3)
    one = identity()
    aw = linear(cert.a_W)
    return dict(rho_V=one, rho_W=one, alpha_Y=aw, alpha_low_Y=aw,
                alpha_bar_Y=linear(cert.a_bar_V + cert.a_bar_W))


def build_lyapunov(cert: Certificate, s_max: float = 1.0, on_misdeclared: str = "fallback") -> dict:
    """Weights rho_V, rho_W and comparison functions of Y = rho_V(V) + rho_W(W).

    Args:
        cert: the certificate; its `case` selects the construction.
        s_max: upper end of the measure range sampled when verifying the case.
        on_misdeclared: "fallback" switches to the general construction with a
            warning when chi_W exceeds the identity; "raise" raises CertificateError.

    Returns:
        Dict with rho_V, rho_W, alpha_Y, alpha_bar_Y, alpha_low_Y (q_V, q_W in the
        general case) and the case actually used.
    """
    case = cert.case
    if case == "chi_leq_identity":
        w = chi_exceeds_identity(cert.chi_W, max(s_max, 1.0))
        if w is not None:
            if on_misdeclared == "raise":
                raise CertificateError(f"chi_W(s) > s at s = {w}", witness=w)
            warnings.warn(f"chi_W(s) > s at s = {w}; using the general construction", stacklevel=2)
            case = "general"
    if case == "chi_leq_identity":
        out = _unit_weights(cert)
    elif case == "exponential":
        out = _exponential_weights(cert)
    else:
        out = _general_weights(cert)
    out["case"] = case
    return out


def _alpha_hat(cert: Certificate, parts: dict) -> MonotoneFn:
    if parts["case"] == "general":
        chi_inv = cert.chi_W.inverse_fn(extend=True)
        aW, abW, abV = cert.alpha_W, cert.alpha_bar_W, cert.alpha_bar_V
        return MonotoneFn(
            lambda s: np.asarray(abV(s)) - np.asarray(chi_inv(np.maximum(0.0, np.asarray(aW(s)) - np.asarray(abW(s))))),
            strict=False, name="alpha_hat")
    abV = cert.alpha_bar_V if parts["case"] != "exponential" else linear(cert.a_bar_V)
    abY, alY = parts["alpha_bar_Y"], parts["alpha_low_Y"]
    return MonotoneFn(lambda s: np.minimum(np.asarray(abV(s)), np.asarray(abY(s)) - np.asarray(alY(s))),
                      strict=False, name="alpha_hat")


def bound_bundle(cert: Certificate, s_max: float = 1.0, on_misdeclared: str = "fallback") -> BoundBundle:
    parts = build_lyapunov(cert, s_max, on_misdeclared)
    abY_inv = parts["alpha_bar_Y"].inverse_fn(extend=True)
    alpha_tilde_Y = compose(parts["alpha_Y"], abY_inv)
    beta = stability_bound(cert, parts=parts, alpha_tilde_Y=alpha_tilde_Y)
    ahat = _alpha_hat(cert, parts)
    return BoundBundle(parts["alpha_Y"], parts["alpha_bar_Y"], parts["alpha_low_Y"], alpha_tilde_Y,
                       parts["rho_V"], parts["rho_W"], beta, ahat, envelope(ahat), parts["case"],
                       parts.get("q_V"), parts.get("q_W"))


def stability_bound(cert: Certificate, s_max: float = 1.0, parts: dict | None = None,
                    alpha_tilde_Y: MonotoneFn | None = None) -> KLBound:
    """beta(s, k) from the Lyapunov comparison functions; it takes no iteration index."""
    parts = parts or build_lyapunov(cert, s_max)
    if alpha_tilde_Y is None:
        alpha_tilde_Y = compose(parts["alpha_Y"], parts["alpha_bar_Y"].inverse_fn(extend=True))
    return build_kl(parts["alpha_low_Y"], parts["alpha_bar_Y"], alpha_tilde_Y)


def exp_bound(cert: Certificate) -> KLBound:
    """(abar_Y / a_W) (1 - a_W / abar_Y)^k s with abar_Y = abar_V + abar_W."""
    if not cert.has_exponential:
        raise CertificateError("exponential constants missing from certificate")
    if cert.c_W > 1.0:
        warnings.warn(f"c_W = {cert.c_W} > 1: constants used without 1/c_W scaling", stacklevel=2)
    a_bar = cert.a_bar_V + cert.a_bar_W
    rate = cert.a_W / a_bar
    if not 0.0 < rate < 1.0:
        raise CertificateError(f"decay ratio {rate} outside (0, 1)", witness=rate)
    gain, factor = a_bar / cert.a_W, 1.0 - rate
    return KLBound(evaluator=lambda s, k: gain * factor ** k * s, name="beta_exp")


def near_opt_bound(bundle: BoundBundle) -> Callable:
    """(s, i) -> alpha_tilde(beta(s, i))."""
    return bundle.near_opt


@dataclass
class StoppingResult:
    i_star: int | None
    found: bool
    worst_s: float | None = None
    worst_ratio: float | None = None


def stopping_iteration(bundle: BoundBundle, eps_target: Callable, delta: float,
                       i_max: int = 1000, n: int = 512) -> StoppingResult:
    """Smallest i with alpha_tilde(beta(s, i)) <= eps_target(s) on a dense grid of (0, delta]."""
    if delta <= 0:
        return StoppingResult(0, True)
    s = np.linspace(delta / n, delta, n)
    target = np.asarray(eps_target(s), dtype=float)
    if np.any(target <= 0):
        j = int(np.flatnonzero(target <= 0)[0])
        raise CertificateError(f"target vanishes at s = {s[j]}", witness=float(s[j]))
    horizon = min(16, i_max)
    while True:
        table = bundle.near_opt_table(s, horizon)
        ok = np.all(table <= target[:, None], axis=0)
        if ok.any():
            return StoppingResult(int(np.argmax(ok)), True)
        if horizon >= i_max:
            break
        horizon = min(4 * horizon, i_max)
    ratio = table[:, -1] / target
    j = int(np.argmax(ratio))
    return StoppingResult(None, False, float(s[j]), float(ratio[j]))


def lyapunov_value(bundle: BoundBundle, V, W: Callable, x) -> np.ndarray:
    """Y(x) = rho_V(V(x)) + rho_W(W(x)) at states x (or node values when V is an array)."""
    xs = np.asarray(x, dtype=float)
    v = np.asarray(V(xs) if callable(V) else V, dtype=float)
    w = np.asarray(W(xs), dtype=float)
    return np.asarray(bundle.rho_V(v), dtype=float) + np.asarray(bundle.rho_W(w), dtype=float)


def bound_lattice(bundle: BoundBundle, s, k_max: int, exp: KLBound | None = None) -> list[tuple]:
    """Rows (s, k, beta, alpha_tilde(beta)[, beta_exp]) over the lattice s x {0..k_max}."""
    s = np.asarray(s, dtype=float)
    b = bundle.beta.table(s, k_max)
    nb = np.asarray(bundle.alpha_tilde(b), dtype=float)
    be = exp.table(s, k_max) if exp is not None else None
    rows = []
    for a in range(s.size):
        for k in range(k_max + 1):
            row = (float(s[a]), k, float(b[a, k]), float(nb[a, k]))
            rows.append(row + ((float(be[a, k]),) if be is not None else ()))
    return rows


__all__ = ["BoundBundle", "build_lyapunov", "bound_bundle", "stability_bound", "exp_bound",
           "near_opt_bound", "stopping_iteration", "StoppingResult", "lyapunov_value",
           "bound_lattice", "chi_exceeds_identity"]

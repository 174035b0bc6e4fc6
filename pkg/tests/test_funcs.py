import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from piplus_kit.funcs import (
    BracketError,
    CertificateError,
    FunctionError,
    KLBound,
    MonotoneFn,
    add,
    antiderivative,
    build_kl,
    compose,
    envelope,
    identity,
    integrate_rho,
    invert,
    iterate_decay,
    linear,
    minimum,
    piecewise_linear,
    power,
    sample_monotone,
    scale,
    zero,
)

pos = st.floats(min_value=1e-6, max_value=1e3, allow_nan=False)


def test_power_inverse():
    assert invert(power(3.0), 27.0) == pytest.approx(3.0, rel=1e-12)


def test_bisection_inverse_of_generic_map():
    f = MonotoneFn(lambda s: s + np.sqrt(s), s_max=1.0)
    assert invert(f, 6.0) == pytest.approx(4.0, rel=1e-10)


@given(pos, st.floats(min_value=0.2, max_value=5.0))
def test_invert_roundtrip_bisection(y, p):
    f = MonotoneFn(lambda s, p=p: s ** p + s, s_max=1.0)
    s = invert(f, y)
    assert f(s) == pytest.approx(y, rel=1e-9, abs=1e-12)


@given(pos, st.floats(min_value=0.1, max_value=10.0))
def test_linear_sum_stays_exact(y, c):
    f = add(linear(c), zero())
    assert f.slope == c
    assert invert(f, y) == pytest.approx(y / c, rel=1e-14)
    g = add(linear(c), identity())
    assert invert(g, y) == pytest.approx(y / (c + 1.0), rel=1e-14)


def test_invert_rejects_negative_target():
    with pytest.raises(BracketError):
        invert(power(2.0), -1.0)


def test_invert_out_of_range_raises_without_extend():
    bounded = MonotoneFn(lambda s: np.minimum(s, 1.0), s_max=1.0, strict=False)
    with pytest.raises(BracketError):
        invert(bounded, 2.0)
    assert invert(bounded, 2.0, extend=True) > 1.0


def test_integrate_identity():
    np.testing.assert_allclose(integrate_rho(identity(), np.array([1.0, 2.0])), [0.5, 2.0], rtol=1e-10)


def test_antiderivative_linear():
    assert antiderivative(linear(4.0))(1.0) == pytest.approx(2.0, rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=0.01, max_value=8.0))
def test_antiderivative_of_composition_matches_quad(s):
    q = compose(power(1.5), MonotoneFn(lambda t: t + np.sin(t) ** 2 * 0.1, s_max=1.0))
    rho = antiderivative(q)
    ref, _ = quad(lambda t: float(q(t)), 0.0, s, epsabs=1e-13, epsrel=1e-12)
    assert rho(s) == pytest.approx(ref, rel=1e-7, abs=1e-12)


def test_compose_and_minimum():
    f = compose(linear(2.0), power(2.0))
    assert f(3.0) == pytest.approx(18.0)
    assert invert(f, 18.0) == pytest.approx(3.0)
    m = minimum(linear(2.0), power(2.0))
    np.testing.assert_allclose(m(np.array([0.5, 1.0, 3.0])), [0.25, 1.0, 6.0])


def test_scale_keeps_inverse():
    f = scale(3.0, power(2.0))
    assert invert(f, 12.0) == pytest.approx(2.0)


def test_linear_rejects_negative_slope():
    with pytest.raises(FunctionError):
        linear(-1.0)


def test_piecewise_linear_inverse_and_tail():
    f = piecewise_linear([0, 1, 2], [0, 1, 3])
    assert f(3.0) == pytest.approx(5.0)
    np.testing.assert_allclose(invert(f, np.array([0.5, 2.0, 5.0])), [0.5, 1.5, 3.0])


def test_iterate_decay_halving():
    assert iterate_decay(MonotoneFn(lambda s: s / 2, s_max=1.0), 3, 8.0) == pytest.approx(1.0)


def test_iterate_decay_rejects_rate_above_identity():
    with pytest.raises(CertificateError):
        iterate_decay(linear(2.0), 1, 1.0)


@given(st.floats(min_value=0.0, max_value=10.0), st.integers(min_value=0, max_value=20))
def test_kl_monotone_in_both_arguments(s, k):
    beta = build_kl(identity(), linear(2.0), linear(0.25))
    b = beta(s, k)
    assert beta(s * 1.5 + 0.1, k) >= b - 1e-12
    assert beta(s, k + 1) <= b + 1e-12
    assert beta(0.0, k) == 0.0


def test_kl_table_matches_pointwise():
    beta = build_kl(identity(), linear(2.0), linear(0.25))
    s = np.array([0.0, 0.5, 2.0])
    tab = beta.table(s, 5)
    for k in range(6):
        np.testing.assert_allclose(tab[:, k], beta(s, k), rtol=1e-12)
    np.testing.assert_allclose(tab[:, 3], 2.0 * s * 0.75 ** 3, rtol=1e-12)


def test_closed_form_kl():
    beta = KLBound(evaluator=lambda s, k: 2 * 0.5 ** k * s)
    assert beta(4.0, 2) == pytest.approx(2.0)


def test_envelope_of_nonmonotone():
    env = envelope(MonotoneFn(lambda s: np.sin(s), s_max=1.0, strict=False))
    assert env(np.pi) == pytest.approx(1.0, abs=1e-4)
    assert env(0.5) == pytest.approx(np.sin(0.5), rel=1e-6)


def test_sample_monotone_finds_drop():
    assert sample_monotone(MonotoneFn(lambda s: -s, strict=False), 1.0) is not None
    assert sample_monotone(identity(), 1.0) is None

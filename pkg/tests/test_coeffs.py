import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dampwave import coeffs
from dampwave.coeffs import (ExpShape, ParameterDomainError, PowerShape, Profile, detect_t0,
                             integrate_B_lambda, integrate_delta_log, make_exponential_family,
                             make_polynomial_family, make_superexponential_family)

times = st.floats(min_value=0.0, max_value=500.0, allow_nan=False)


# closed forms for the polynomial example: lam = 2(1+t), rho = 1.6 (1+t)^0.5
def B_exact(s, t):
    return (1 + t) ** 2.5 - (1 + s) ** 2.5


def half_rho_exact(s, t):
    return 0.8 * (2.0 / 3.0) * ((1 + t) ** 1.5 - (1 + s) ** 1.5)


@given(times)
def test_power_shape_matches_closed_form(t):
    sh = PowerShape(2.5, 1.25)
    assert sh.value(t) == pytest.approx(2.5 * (1 + t) ** 1.25, rel=1e-13)


@given(st.floats(0.0, 100.0), st.sampled_from([1, 2, 3]))
def test_shape_log_derivative_against_finite_difference(t, k):
    sh = PowerShape(1.0, 1.7)
    h = 1e-4 * (1 + t)
    f = lambda x: float(sh.logv(x))  # noqa: E731
    if k == 1:
        fd = (f(t + h) - f(t - h)) / (2 * h) if t > h else (f(t + h) - f(t)) / h
        assert float(sh.dphi(t, 1)) == pytest.approx(fd, rel=1e-4)
    # ratio(t, k) = f^{(k)}/f for f = (1+t)^a is a falling factorial times (1+t)^{-k}
    a = 1.7
    expect = np.prod([a - i for i in range(k)]) / (1 + t) ** k
    assert float(sh.ratio(t, k)) == pytest.approx(expect, rel=1e-10)


@given(st.floats(0.0, 20.0))
def test_exp_shape_derivatives(t):
    sh = ExpShape(3.0, 0.7)
    assert float(sh.value(t)) == pytest.approx(3.0 * math.exp(0.7 * t), rel=1e-12)
    assert float(sh.ratio(t, 2)) == pytest.approx(0.49, rel=1e-12)


def test_family_shapes(poly):
    t = np.array([0.0, 1.0, 10.0])
    np.testing.assert_allclose(poly.lam.value(t), 2 * (1 + t))
    np.testing.assert_allclose(poly.Lam.value(t), (1 + t) ** 2)
    np.testing.assert_allclose(poly.rho.value(t), 1.6 * (1 + t) ** 0.5)
    np.testing.assert_allclose(np.exp(poly.eta.logv(t)), 0.4 * (1 + t) ** -0.5)
    np.testing.assert_allclose(poly.F.value(t), 2.5 * (1 + t) ** 1.25)


@given(st.floats(0.0, 50.0), st.floats(0.0, 50.0))
def test_B_lambda_closed_form(a, b):
    s, t = min(a, b), max(a, b)
    fam = make_polynomial_family(1.0, 0.5, 0.0, 0.625)
    assert integrate_B_lambda(fam, s, t) == pytest.approx(B_exact(s, t), rel=1e-9, abs=1e-12)


@given(st.floats(0.0, 50.0), st.floats(0.0, 50.0))
def test_delta_log_closed_form(a, b):
    s, t = min(a, b), max(a, b)
    fam = make_polynomial_family(1.0, 0.5, 0.0, 0.625)
    assert integrate_delta_log(fam, s, t) == pytest.approx(half_rho_exact(s, t), rel=1e-9, abs=1e-12)


def test_cumulative_is_monotone_and_matches(poly):
    tt = np.array([0.0, 1.0, 5.0, 20.0])
    out = coeffs.cumulative(poly, lambda x: 2.5 * (1 + x) ** 1.5, tt)
    np.testing.assert_allclose(out, B_exact(0.0, tt), rtol=1e-9)


def test_F_is_reciprocal_tail(poly, expo):
    # 1/F(t) = int_t^inf 1/(lam Xi^2)
    for fam in (poly, expo):
        for t in (0.0, 3.0, 10.0):
            logf = lambda s, fam=fam: -float(fam.lam.logv(s)) - 2 * float(fam.Xi.logv(s))  # noqa: E731
            assert coeffs._log_tail(logf, t) == pytest.approx(-float(fam.F.logv(t)), abs=1e-8)


def test_log_tail_exponential_and_double_exponential():
    assert coeffs._log_tail(lambda s: -2.0 * s, 1.5) == pytest.approx(-3.0 - math.log(2.0), abs=1e-10)
    # int_t^inf e^{s} e^{-e^s} ds = e^{-e^t}
    assert coeffs._log_tail(lambda s: s - math.exp(s), 1.0) == pytest.approx(-math.e, abs=1e-9)


def test_profile_normalisation_and_range():
    p = Profile(M=2)
    s = np.linspace(0, 1, 200001)
    psi = p(s)
    assert np.trapezoid(np.abs(psi), s) == pytest.approx(0.5, abs=1e-6)
    assert np.max(np.abs(psi)) < 1.0


def test_omega_is_one_away_from_bumps(poly_bumps):
    osc = poly_bumps.oscillator
    far = np.array([0.0, osc.centers[-1] + 10 * osc.widths[-1] + 10.0])
    np.testing.assert_allclose(poly_bumps.omega(far), 1.0)
    tt = np.linspace(0, 20, 20001)
    w = poly_bumps.omega(tt)
    assert np.all(w > 0) and np.all(w < 2)


def test_detect_t0_matches_closed_form(poly):
    # |p'| / (2 p^2) = 0.3125 (1+t)^{-3/2} <= eps/4 = 0.05 from (1+t) = 6.25^{2/3}
    exact = 6.25 ** (2 / 3) - 1
    assert detect_t0(poly, 0.2, 200, n=20001) == pytest.approx(exact, abs=0.02)


def test_constructor_windows():
    with pytest.raises(ParameterDomainError):
        make_polynomial_family(1.0, 3.5, 0.0, 0.625)  # over-damped
    fam = make_polynomial_family(1.0, 3.5, 0.0, 0.625, strict=False)
    assert fam.warnings
    with pytest.raises(ParameterDomainError):
        make_exponential_family(1.5, 0.5, -0.375)  # below the A4 threshold r-1+(1-r)/(M+1)
    with pytest.raises(ParameterDomainError):
        make_exponential_family(1.5, 0.5, -0.5)
    with pytest.raises(ParameterDomainError):
        make_superexponential_family(1.5, 1.2, -0.25)
    with pytest.raises(ParameterDomainError):
        make_polynomial_family(1.0, 0.5, 0.0, 0.0, strict=False)  # F undefined


@given(st.floats(0.05, 0.95), st.floats(0.0, 1.0))
def test_exponential_window_is_consistent(r, u):
    q = 1 - r + u * (1 + r) * 0.999 + 1e-3
    q = min(q, 1.999)
    lo = max(-q / 4, r - 1 + (1 - r) / 3)
    fam = make_exponential_family(q, r, lo + 1e-9 if lo < 0 else 0.0)
    assert fam.kind == "exponential"

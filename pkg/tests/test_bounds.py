import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dampwave import bounds as b
from dampwave.bounds import BoundKind, SampleSpec
from dampwave.wkb import ApplicabilityError


def test_c_sigma_and_closed_form(poly):
    assert b.c_sigma(0.0, 2, 1.0) == pytest.approx(0.5)
    assert b.c_sigma(1.0, 3, 1.5) == pytest.approx(0.5 + 1.5 * (2 / 3 - 0.5))
    assert b.closed_form_exponent(poly, l=0) == pytest.approx(-1.25)
    assert b.closed_form_exponent(poly, l=1) == pytest.approx(-1.5)


def test_theorem_rate_matches_closed_form_asymptotically(poly):
    # log(1 + B) ~ 2.5 log(1 + t): the local slope of the rate tends to the closed form
    t1, t2 = 1e4, 2e4
    r1, r2 = b.theorem_rate(poly, t1), b.theorem_rate(poly, t2)
    slope = (r2 - r1) / (math.log1p(t2) - math.log1p(t1))
    assert slope == pytest.approx(-1.25, abs=1e-3)
    with pytest.raises(ValueError):
        b.theorem_rate(poly, 1.0, m=2.0)


@given(st.floats(-4.0, -0.1), st.floats(-3.0, 3.0), st.integers(8, 60))
def test_fit_decay_recovers_power_law(slope, icpt, n):
    t = np.geomspace(5, 5000, n)
    rep = b.fit_decay(t, np.exp(icpt) * (1 + t) ** slope, predicted=slope)
    assert rep.slope == pytest.approx(slope, abs=1e-10)
    assert rep.deviation == pytest.approx(0.0, abs=1e-10)


@given(st.floats(-2.0, -0.01))
def test_fit_decay_loglinear(rate):
    t = np.linspace(0, 20, 30)
    rep = b.fit_decay(t, np.exp(rate * t), axes="loglinear")
    assert rep.slope == pytest.approx(rate, abs=1e-10)


def test_fit_decay_errors():
    with pytest.raises(ValueError):
        b.fit_decay(np.arange(5.0), np.ones(5))
    with pytest.raises(ValueError):
        b.fit_decay(np.arange(10.0), np.r_[np.ones(9), 0.0])
    with pytest.raises(ValueError):
        b.fit_decay(np.arange(10.0), np.ones(10), axes="semilog")


def test_fit_exponent_constant_on_synthetic_data():
    # log ratios r0 = -0.5 X with sup 0 at X = 0: C may go up to 0.5 + log 2 / X_max
    X = np.linspace(0.0, 10.0, 50)
    r0 = -0.5 * X
    C = b.fit_exponent_constant(r0[:, None, None], X, cap=10.0)
    assert C == pytest.approx(0.5 + math.log(2) / 10.0)
    assert b.fit_exponent_constant(r0[:, None, None], X, cap=0.3) == pytest.approx(0.3)


def test_case_two_kinds_need_increasing_eta(poly, poly_cfg):
    with pytest.raises(ApplicabilityError):
        b.predicted_bound(poly, poly_cfg, BoundKind.GLUED_CASE22, 0.0, 5.0, 1.0)
    with pytest.raises(ValueError):
        b.predicted_bound(poly, poly_cfg, BoundKind.THEOREM_RATE, 0.0, 5.0, 1.0)


def test_hyp_bound_form(poly, poly_cfg):
    # log bound = (log lam(t) - log lam(s))/2 - 1/2 int rho, all entries equal
    s, t, xi = 0.0, 10.0, 5.0
    lb = b.predicted_bound(poly, poly_cfg, BoundKind.HYP_ZONE, s, t, xi)
    expect = 0.5 * math.log(22.0 / 2.0) - 0.8 * (2 / 3) * (11 ** 1.5 - 1)
    np.testing.assert_allclose(lb, expect, rtol=1e-8)


@given(st.floats(0.0, 30.0), st.floats(0.0, 30.0), st.floats(0.0, 30.0))
def test_translation_consistency(a, c, d):
    from dampwave.coeffs import make_polynomial_family
    from dampwave.zones import ZoneConfig

    fam = make_polynomial_family(1.0, 0.5, 0.0, 0.625)
    s, t, t2 = sorted((a, c, d))
    for kind in ("HypZone", "OscZone", "RedZone"):
        assert abs(b.translation_defect(fam, ZoneConfig(), kind, s, t, t2)) <= 1e-8


def test_ell_aux_inequality(poly, poly_cfg):
    from dampwave.zones import Tag, sample_zone

    ts, xs = sample_zone(poly, poly_cfg, Tag.ELL, 100, (poly_cfg.t0, 300.0), seed=3)
    rep = b.ell_aux_check(poly, poly_cfg, ts, xs)
    assert rep.holds and rep.n == 100


def test_b6_ratio_bounded(poly):
    r = b.b6_ratio(poly, np.geomspace(1, 1e4, 30))
    assert np.all(np.isfinite(r)) and r.max() < 1.0


def test_gluing_aux_lower_bound(poly, poly_cfg):
    rep = b.gluing_aux_check(poly, poly_cfg, np.geomspace(1e-4, 0.3, 20))
    assert rep.lower > 0 and np.all(rep.factor <= 1.0)


def test_diss_lemma(poly):
    rep = b.diss_lemma_check(poly, 50.0)
    assert np.isfinite(rep.sup_tail_ratio)
    assert rep.decreasing_from is not None


def test_sample_points_are_prefix_stable(poly, poly_cfg):
    s1, t1, x1 = b.sample_points(poly, poly_cfg, BoundKind.HYP_ZONE, SampleSpec(10, (0, 20), (0.1, 5)))
    s2, t2, x2 = b.sample_points(poly, poly_cfg, BoundKind.HYP_ZONE, SampleSpec(20, (0, 20), (0.1, 5)))
    np.testing.assert_array_equal(t1, t2[:10])
    np.testing.assert_array_equal(x1, x2[:10])


def test_verify_hyp_bound_small_sample(poly, poly_cfg):
    rep = b.verify_bound(poly, poly_cfg, BoundKind.HYP_ZONE, SampleSpec(12, (0, 10), (0.5, 3)))
    assert rep.finite and rep.sup_ratio < 5.0
    rows = list(rep.rows())
    assert len(rows) == 12 * 4
    i, s, t, xi, entry, lo, lp, lr = rows[0]
    assert lo - lp == pytest.approx(lr)


def test_s_function_needs_monotone_eta(poly, poly_cfg):
    from dampwave.coeffs import PowerShape, make_custom_family
    from dampwave.zones import ZoneConfig

    flat = make_custom_family(PowerShape(2.0, 1.0), PowerShape(1.0, 2.0), PowerShape(1.0, 1.0),
                              PowerShape(1.0, 0.5), PowerShape(4.0, 1.0))
    with pytest.raises(ValueError):
        b.s_function(flat, ZoneConfig(), 5.0, 0.1, 1.0)
    assert math.isfinite(b.s_function(poly, poly_cfg, 50.0, 0.1, 1.0))

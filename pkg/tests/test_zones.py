import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dampwave import zones
from dampwave.zones import ConfigError, Tag, ZoneConfig, classify, separating_times, zone_codes


def test_config_rejects_eps_at_half():
    with pytest.raises(ConfigError, match="ZoneConfig.eps"):
        ZoneConfig(eps=0.5)
    with pytest.raises(ConfigError, match="ZoneConfig.N"):
        ZoneConfig(N=0.5)


def test_known_points(poly, poly_cfg):
    # far above the separating curve and late: hyperbolic
    assert classify(poly, poly_cfg, 100.0, 10.0).tag is Tag.HYP
    # on the curve |xi| = eta(t): reduced
    t = 50.0
    eta = float(np.exp(poly.eta.logv(t)))
    assert classify(poly, poly_cfg, t, eta).tag is Tag.RED
    # tiny frequency: dissipative
    assert classify(poly, poly_cfg, 100.0, 1e-6).tag is Tag.DISS
    # below the curve but above the dissipative threshold: elliptic
    xi = 0.5 * eta
    assert xi * float(poly.F.value(t)) > poly_cfg.d0
    assert classify(poly, poly_cfg, t, xi).tag is Tag.ELL


@given(st.floats(0.0, 1000.0), st.floats(-8.0, 2.0))
def test_codes_are_valid_tags_and_match_classify(t, lx):
    from dampwave.coeffs import make_polynomial_family

    fam = make_polynomial_family(1.0, 0.5, 0.0, 0.625)
    cfg = ZoneConfig(t0=2.4)
    xi = 10.0 ** lx
    code = int(zone_codes(fam, cfg, t, xi))
    assert code in {int(x) for x in Tag}
    assert classify(fam, cfg, t, xi).tag == Tag(code)


@given(st.floats(0.0, 1000.0), st.floats(-8.0, 2.0))
def test_region_consistent_with_side_of_curve(t, lx):
    from dampwave.coeffs import make_polynomial_family

    fam = make_polynomial_family(1.0, 0.5, 0.0, 0.625)
    cfg = ZoneConfig()
    xi = 10.0 ** lx
    z = classify(fam, cfg, t, xi)
    lz = float(zones.log_z(fam, t, xi))
    if z.tag in (Tag.HYP, Tag.OSC):
        assert lz > 0
    if z.tag in (Tag.ELL, Tag.DISS):
        assert lz < 0


@pytest.mark.parametrize("xi", [1e-3, 0.05, 0.2])
def test_separating_times_flip_classification(poly, poly_cfg, xi):
    st_ = separating_times(poly, poly_cfg, xi, 1e4)
    d = 1e-6
    for name, t in (("t_diss", st_.t_diss), ("t_ell", st_.t_ell), ("t_red", st_.t_red)):
        if t is None or t <= d:
            continue
        before = classify(poly, poly_cfg, t - d * (1 + t), xi).tag
        after = classify(poly, poly_cfg, t + d * (1 + t), xi).tag
        assert before != after, name


def test_eta_trend(poly, rising):
    assert zones.eta_trend(poly, 100) == "decreasing"
    assert zones.eta_trend(rising, 100) == "increasing"


@given(st.floats(0.5, 80.0), st.floats(0.02, 0.3))
def test_h1_derivative(t, xi):
    from dampwave.coeffs import make_polynomial_family

    fam = make_polynomial_family(1.0, 0.5, 0.0, 0.625)
    cfg = ZoneConfig()
    h, dh = zones.h1(fam, cfg, t, xi, with_derivative=True)
    d = 1e-6 * (1 + t)
    fd = (zones.h1(fam, cfg, t + d, xi) - zones.h1(fam, cfg, t - d, xi)) / (2 * d)
    assert float(dh) == pytest.approx(float(fd), rel=1e-4, abs=1e-9 * abs(float(h)))


def test_chi_is_smooth_cutoff():
    x = np.linspace(-0.5, 1.5, 201)
    c = zones.chi(x)
    assert np.all((c >= 0) & (c <= 1))
    assert np.all(np.diff(c) <= 1e-15) or np.all(np.diff(c) >= -1e-15)


def test_uncovered_points_lie_in_side_condition_gap(poly, poly_cfg):
    T, X = np.meshgrid(np.linspace(0, 200, 401), np.geomspace(1e-6, 50, 401), indexing="ij")
    codes = zone_codes(poly, poly_cfg, T, X)
    unc = codes == int(Tag.UNCOVERED)
    q, side = zones.band(poly, T[unc], X[unc])
    # uncovered points are above the curve, outside the reduced band, and violate a side condition
    assert np.all(side > 0)
    assert np.all(q > poly_cfg.eps)
    theta_xi = np.exp(poly.Theta.logv(T[unc])) * X[unc]
    lam_xi = np.exp(poly.Lam.logv(T[unc])) * X[unc]
    in_osc_band = q <= poly_cfg.N
    violates = np.where(in_osc_band, (theta_xi > poly_cfg.N) | (lam_xi < poly_cfg.N), theta_xi < poly_cfg.N)
    assert np.all(violates)

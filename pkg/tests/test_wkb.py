import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dampwave import wkb
from dampwave.zones import Tag, sample_zone


@pytest.mark.parametrize("zone", ["hyp", "ell"])
def test_first_step_diagonalises_model(zone):
    D = wkb.first_step_exactness(zone)
    assert abs(D[0, 1]) < 1e-15 and abs(D[1, 0]) < 1e-15


def test_diag_step_operator_identity(poly, poly_cfg):
    ts, xs = sample_zone(poly, poly_cfg, Tag.ELL, 20, (poly_cfg.t0, 200.0), seed=1)
    for t, x in zip(ts, xs):
        assert wkb.diag_step(poly, poly_cfg, "ell", t, x).residual <= 1e-8
    ts, xs = sample_zone(poly, poly_cfg, Tag.HYP, 20, (0.0, 30.0), seed=1)
    for t, x in zip(ts, xs):
        assert wkb.diag_step(poly, poly_cfg, "hyp", t, x).residual <= 1e-8


def test_diag_step_zone_guard(poly, poly_cfg):
    with pytest.raises(wkb.ApplicabilityError):
        wkb.diag_step(poly, poly_cfg, "ell", 100.0, 10.0)
    with pytest.raises(ValueError):
        wkb.diag_step(poly, poly_cfg, "red", 1.0, 1.0)


def test_n1_approaches_identity_along_ray(poly, poly_cfg):
    xi = 0.01
    # past t ~ 100 the deviation sits at finite-difference noise, so stop there
    ts = np.geomspace(3.0, 100.0, 10)
    dev = [wkb.diag_step(poly, poly_cfg, "ell", t, xi, check_zone=False).n1_deviation for t in ts]
    assert np.all(np.diff(dev) < 0) and dev[-1] < 1e-3
    far = wkb.diag_step(poly, poly_cfg, "ell", 2000.0, xi, check_zone=False).n1_deviation
    assert far < 0.1


@settings(max_examples=10)
@given(st.floats(0.5, 3.0), st.floats(0.1, 1.5), st.floats(2.0, 6.0))
def test_peano_baker_matches_oracle(s, dt, xi):
    from dampwave.coeffs import make_polynomial_family
    from dampwave.zones import ZoneConfig, classify

    fam = make_polynomial_family(1.0, 0.5, 0.0, 0.625)
    cfg = ZoneConfig()
    t = s + dt
    if classify(fam, cfg, s, xi).tag is not Tag.HYP:
        return
    r = wkb.peano_baker(fam, cfg, s, t, xi)
    assert r.residual <= 1e-8
    assert r.tail <= 1e-12


def test_peano_baker_budget(poly, poly_cfg):
    with pytest.raises(wkb.BudgetError):
        wkb.peano_baker(poly, poly_cfg, 1.0, 3.0, 3.0, n_terms=1, oracle=False)


def test_symbol_check_stable(poly, poly_cfg):
    sc = wkb.symbol_check(poly, poly_cfg, "R0_12", 0, 1, 1, "hyp", n=20, t_range=(0.0, 30.0))
    assert sc.finite and sc.passed
    with pytest.raises(wkb.CatalogError):
        wkb.symbol_constants(poly, poly_cfg, "nope", 0, 0, 0, [1.0], [1.0])


def test_integrability_within_majorant(poly, poly_cfg):
    rep = wkb.integrability_check(poly, poly_cfg, "hypR1_12", "hyp", np.geomspace(1.0, 10.0, 6), 40.0,
                                  const=10.0)
    assert rep.bounded

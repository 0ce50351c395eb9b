import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from dampwave import propagator as pr
from dampwave.coeffs import PowerShape, integrate_delta_log, make_custom_family, make_polynomial_family
from dampwave.propagator import DataProfile, SystemKind, fundamental_matrix, kernels
from dampwave.zones import ZoneConfig

FAM = make_polynomial_family(1.0, 0.5, 0.0, 0.625, J=3)
CFG = ZoneConfig(t0=11.65)


def constant_family(lam, rho):
    c = lambda v: PowerShape(v, 0.0)  # noqa: E731
    return make_custom_family(c(lam), PowerShape(1.0, 1.0), PowerShape(1.0, 1.0), c(1.0), c(rho),
                              F=PowerShape(1.0, 1.0))


@given(st.floats(0.5, 3.0), st.floats(0.05, 2.0), st.floats(0.05, 3.0), st.floats(0.1, 5.0))
def test_raw_matches_expm_for_constant_coefficients(lam, rho, xi, T):
    fam = constant_family(lam, rho)
    E = fundamental_matrix(fam, ZoneConfig(), SystemKind.RAW, 0.0, T, xi, 1e-10).entries
    A = np.array([[0.0, 1.0], [-(lam * xi) ** 2, -rho]])
    ref = expm(A * T)
    assert np.max(np.abs(E - ref)) <= 1e-7 * max(1.0, np.max(np.abs(ref)))


@settings(max_examples=10)
@given(st.floats(0.0, 10.0), st.floats(0.1, 5.0), st.floats(0.01, 3.0))
def test_abel_identity(s, dt, xi):
    t = s + dt
    E = fundamental_matrix(FAM, CFG, SystemKind.RAW, s, t, xi, 1e-10).entries
    # det E(t, s) = exp(-int_s^t rho omega)
    expect = math.exp(-2 * integrate_delta_log(FAM, s, t))
    assert abs(np.linalg.det(E) - expect) <= 50 * 1e-10 * max(1.0, np.max(np.abs(E)) ** 2)


@settings(max_examples=8)
@given(st.floats(0.0, 8.0), st.floats(0.1, 3.0), st.floats(0.1, 3.0), st.floats(0.01, 2.0))
def test_cocycle(s, d1, d2, xi):
    r, t = s + d1, s + d1 + d2
    Ets = fundamental_matrix(FAM, CFG, SystemKind.RAW, s, t, xi, 1e-10).entries
    Etr = fundamental_matrix(FAM, CFG, SystemKind.RAW, r, t, xi, 1e-10).entries
    Ers = fundamental_matrix(FAM, CFG, SystemKind.RAW, s, r, xi, 1e-10).entries
    scale = np.max(np.abs(Etr)) * np.max(np.abs(Ers))
    assert np.max(np.abs(Ets - Etr @ Ers)) <= 50 * 1e-10 * max(scale, 1.0)


def test_identity_at_equal_times():
    E = fundamental_matrix(FAM, CFG, SystemKind.U, 3.0, 3.0, 0.5)
    np.testing.assert_array_equal(E.entries, np.eye(2))


def test_input_validation():
    with pytest.raises(ValueError):
        fundamental_matrix(FAM, CFG, SystemKind.RAW, 2.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        fundamental_matrix(FAM, CFG, SystemKind.RAW, 0.0, 1.0, -0.5)
    with pytest.raises(ValueError):
        fundamental_matrix(FAM, CFG, SystemKind.RAW, 0.0, 1.0, 0.5, tol=1e-2)


@pytest.mark.parametrize("t,xi", [(2.0, 0.01), (2.0, 0.3), (5.0, 3.0), (14.0, 0.05)])
def test_kernel_routes_agree(t, xi):
    kv = kernels(FAM, CFG, t, xi, 1e-10)
    assert kv.route_gap <= 1e-7


def test_kernels_at_zero_are_identity():
    assert kernels(FAM, CFG, 0.0, 0.4).as_tuple() == (1.0, 0.0, 0.0, 1.0)


def test_backward_transform_identity_in_elliptic_zone(poly, poly_cfg):
    for s, t, xi in [(5.0, 5.3, 0.02), (20.0, 24.0, 0.01), (50.0, 60.0, 0.005)]:
        assert pr.backward_transform_check(poly, poly_cfg, s, t, xi, 1e-10) <= 100 * 1e-10


def test_gaussian_norms_at_time_zero(poly, poly_cfg):
    for sigma in (0.0, 1.0):
        exact = pr.exact_gaussian_norm(2, sigma)
        assert pr.data_norm(DataProfile(), 2, sigma) == pytest.approx(exact, rel=1e-8)
    assert pr.assemble_norm(poly, poly_cfg, DataProfile(), 0.0) == pytest.approx(pr.exact_gaussian_norm(2),
                                                                                 rel=1e-8)


def test_sphere_factor_plancherel():
    # ||exp(-|x|^2/2)||^2 in 3-d is pi^{3/2}; its transform is (2 pi)^{3/2} exp(-r^2/2)
    n = 3
    val = pr.sphere_factor(n) * (2 * math.pi) ** n * 0.5 * math.gamma(n / 2)
    assert val == pytest.approx(math.pi ** 1.5, rel=1e-12)


def test_data_profile_validation():
    with pytest.raises(ValueError):
        DataProfile(kind="triangle")
    with pytest.raises(ValueError):
        DataProfile(kind="power_gaussian", a=1.5, n=2)


def test_norm_series_chunks_agree(poly, poly_cfg):
    times = np.array([0.5, 1.0, 2.0])
    data = DataProfile()
    xis = pr.xi_grid(poly, poly_cfg, 2.0, 40, data)
    full = pr.data_kernel_table(poly, poly_cfg, data, times, xis)
    half = pr.data_kernel_table(poly, poly_cfg, data, times, xis[::2])
    np.testing.assert_array_equal(full["K0"][::2], half["K0"])
    ns = pr.norm_series(poly, poly_cfg, data, times, npts=40)
    assert np.all(np.diff(ns.u) < 0)

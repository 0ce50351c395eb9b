"""Fundamental matrices, kernels and frequency-space norm assembly.

Four first-order forms of the Fourier-transformed equation
``u'' + rho omega u' + lam^2 omega^2 |xi|^2 u = 0`` are supported.  All of
them are integrated in ``d/dt`` form, ``Y' = B(t) Y``, with right-hand
sides assembled from analytic coefficient derivatives.

======== ======================= ===========================================
kind     state                   B(t)
======== ======================= ===========================================
RAW      (u, u')                 [[0, 1], [-lam^2 w^2 xi^2, -rho w]]
U        (h1 u, D_t u)           [[h1'/h1, i h1], [i lam^2 w^2 xi^2/h1, -rho w]]
V        (h2 v, D_t v)           [[h2'/h2, i h2], [i m/h2, 0]]
VSCALAR  (v, v')                 [[0, 1], [-m, 0]]
======== ======================= ===========================================

Here ``D_t = -i d/dt`` and ``u = exp(-1/2 int rho w) v``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import jv

from . import zones
from .coeffs import QuadratureError, eval_bracket, eval_mass, integrate_B_lambda, integrate_delta_log
from .rk import StepUnderflow, dopri_linear


class SystemKind(enum.Enum):
    RAW = "RawScalar"
    U = "USystem"
    V = "VSystem"
    VSCALAR = "VScalar"


class KernelMismatch(RuntimeError):
    pass


@dataclass(frozen=True)
class FundamentalMatrix:
    entries: np.ndarray
    s: float
    t: float
    xi: float
    kind: SystemKind
    tol: float
    accepted: int = 0
    rejected: int = 0
    log_damping: float = 0.0


@dataclass(frozen=True)
class KernelValues:
    K0: complex
    dK0: complex
    K1: complex
    dK1: complex
    route_gap: float = 0.0

    def as_tuple(self):
        return (self.K0, self.dK0, self.K1, self.dK1)


def system_matrix(fam, cfg, kind, t, xi):
    """``B(t)`` for arrays ``t`` and ``xi`` of equal shape; returns (..., 2, 2)."""
    t = np.asarray(t, dtype=float)
    xi = np.broadcast_to(np.asarray(xi, dtype=float), t.shape)
    out = np.zeros(t.shape + (2, 2), dtype=complex)
    if kind is SystemKind.RAW:
        w = fam.omega(t)
        lw = fam.lam.value(t) * w
        out[..., 0, 1] = 1.0
        out[..., 1, 0] = -(lw * xi) ** 2
        out[..., 1, 1] = -fam.rho.value(t) * w
    elif kind is SystemKind.U:
        h, dh = zones.h1(fam, cfg, t, xi, with_derivative=True)
        w = fam.omega(t)
        lw = fam.lam.value(t) * w
        out[..., 0, 0] = dh / h
        out[..., 0, 1] = 1j * h
        out[..., 1, 0] = 1j * (lw * xi) ** 2 / h
        out[..., 1, 1] = -fam.rho.value(t) * w
    elif kind is SystemKind.V:
        h, dh = zones.h2(fam, cfg, t, xi, with_derivative=True)
        out[..., 0, 0] = dh / h
        out[..., 0, 1] = 1j * h
        out[..., 1, 0] = 1j * eval_mass(fam, t, xi) / h
    elif kind is SystemKind.VSCALAR:
        out[..., 0, 1] = 1.0
        out[..., 1, 0] = -eval_mass(fam, t, xi)
    else:  # pragma: no cover
        raise ValueError(kind)
    return out


def step_cap(fam, xi, frac=0.25, bump_frac=0.125):
    """Step bound: a fraction of the local period ``2 pi / <xi>`` and of the active bump width."""
    xi = np.asarray(xi, dtype=float)
    osc = fam.oscillator

    def cap(t, idx):
        br = np.asarray(eval_bracket(fam, t, xi[idx]))
        above = np.asarray(zones.log_z(fam, t, xi[idx])) > 0
        c = np.where(above & (br > 0), frac * 2 * np.pi / np.where(br > 0, br, 1.0), np.inf)
        if osc is not None:
            j = osc.active(t)
            w = np.where(j >= 0, osc.widths[np.maximum(j, 0)] * bump_frac, np.inf)
            c = np.minimum(c, w)
        return c

    return cap


def _check_tol(tol):
    if not 1e-12 <= tol <= 1e-4:
        raise ValueError(f"tol must lie in [1e-12, 1e-4], got {tol}")


def propagate(fam, cfg, kind, s, t, xi, tol=1e-10, t_eval=None, drop_below=None):
    """Batched fundamental matrices ``E(t_eval, s, xi)``.

    ``s`` and ``xi`` are 1-d arrays of equal length; ``t_eval`` is (K,) or
    (B, K).  Returns ``(E, stats)`` with ``E`` of shape (B, K, 2, 2).
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    s = np.broadcast_to(np.asarray(s, dtype=float), xi.shape)
    if t_eval is None:
        t_eval = np.broadcast_to(np.asarray(t, dtype=float), xi.shape)[:, None]

    def mat(tt, idx):
        return system_matrix(fam, cfg, kind, tt, xi[idx])

    Y0 = np.broadcast_to(np.eye(2, dtype=complex), (xi.size, 2, 2))
    return dopri_linear(mat, Y0, s, t_eval, rtol=tol, hmax=step_cap(fam, xi),
                        drop_below=drop_below)


def fundamental_matrix(fam, cfg, kind, s, t, xi, tol=1e-10):
    _check_tol(tol)
    if not 0 <= s <= t:
        raise ValueError("need 0 <= s <= t")
    if xi <= 0:
        raise ValueError("xi must be positive")
    if s == t:
        return FundamentalMatrix(np.eye(2, dtype=complex), s, t, xi, kind, tol)
    E, st = propagate(fam, cfg, kind, [s], t, [xi], tol)
    logd = integrate_delta_log(fam, s, t) if kind in (SystemKind.V, SystemKind.VSCALAR) else 0.0
    return FundamentalMatrix(E[0, 0], s, t, xi, kind, tol, int(st.accepted[0]), int(st.rejected[0]), logd)


# ---------------------------------------------------------------------------
# kernels


def _kernels_raw(E):
    return E[..., 0, 0], E[..., 1, 0], E[..., 0, 1], E[..., 1, 1]


def kernels(fam, cfg, t, xi, tol=1e-10, check=True):
    """``K0, d/dt K0, K1, d/dt K1`` at ``(t, xi)``, computed by two routes.

    Route a solves the companion system directly.  Route b goes through
    the ``(h1 u, D_t u)`` system and converts back.
    """
    _check_tol(tol)
    if t == 0:
        return KernelValues(1.0, 0.0, 0.0, 1.0)
    Ea = fundamental_matrix(fam, cfg, SystemKind.RAW, 0.0, t, xi, tol).entries
    a = np.array(_kernels_raw(Ea))
    if not check:
        return KernelValues(*a)
    E1 = fundamental_matrix(fam, cfg, SystemKind.U, 0.0, t, xi, tol).entries
    h0 = float(zones.h1(fam, cfg, 0.0, xi))
    ht = float(zones.h1(fam, cfg, t, xi))
    b = np.array([h0 / ht * E1[0, 0], 1j * h0 * E1[1, 0], -1j * E1[0, 1] / ht, E1[1, 1]])
    scale = max(np.max(np.abs(a)), 1e-300)
    gap = float(np.max(np.abs(a - b)) / scale)
    if gap > 100 * tol * max(1.0, math.log10(1.0 + t) + 1):
        raise KernelMismatch(f"kernel routes disagree by {gap:.3e} at t={t}, xi={xi}")
    return KernelValues(*a, route_gap=gap)


def kernel_table(fam, cfg, times, xis, tol=1e-10, drop_below=1e-40):
    """Raw kernels on a (xi, t) grid from one batched solve from ``t = 0``.

    ``drop_below`` may be per frequency; a frequency whose kernels fall
    below it keeps its last values.  Returns a dict of arrays with shape
    (len(xis), len(times)).
    """
    times = np.asarray(times, dtype=float)
    xis = np.asarray(xis, dtype=float)
    E, st = propagate(fam, cfg, SystemKind.RAW, np.zeros_like(xis), None, xis, tol,
                      t_eval=times, drop_below=drop_below)
    K0, dK0, K1, dK1 = _kernels_raw(E)
    return dict(K0=K0, dK0=dK0, K1=K1, dK1=dK1, steps=int(st.accepted.max(initial=0)))


# ---------------------------------------------------------------------------
# change of variables in the elliptic region


def transform_T(fam, cfg, t, xi):
    """``T`` with ``(lam xi u, D_t u) = exp(-delta) T (h2 v, D_t v)``."""
    h = float(zones.h2(fam, cfg, t, xi))
    lam = float(fam.lam.value(t))
    p = 0.5 * float(fam.rho.value(t) * fam.omega(t))
    return np.array([[lam * xi / h, 0.0], [1j * p / h, 1.0]], dtype=complex)


def transform_T_inv(fam, cfg, t, xi):
    h = float(zones.h2(fam, cfg, t, xi))
    lam = float(fam.lam.value(t))
    p = 0.5 * float(fam.rho.value(t) * fam.omega(t))
    return np.array([[h / (lam * xi), 0.0], [-1j * p / (lam * xi), 1.0]], dtype=complex)


def backward_transform_check(fam, cfg, s, t, xi, tol=1e-10):
    """Relative residual of ``E_W(t,s) = exp(-(delta(t)-delta(s))) T(t) E_V(t,s) T(s)^{-1}``.

    ``E_W`` uses the micro-energy ``(lam xi u, D_t u)``; ``E_V`` uses
    ``(h2 v, D_t v)`` built from the scalar ``v'' + m v = 0`` solve.
    """
    _check_tol(tol)
    if t == s:
        return 0.0
    Er = fundamental_matrix(fam, cfg, SystemKind.RAW, s, t, xi, tol).entries
    Ev = fundamental_matrix(fam, cfg, SystemKind.VSCALAR, s, t, xi, tol)
    lam_s, lam_t = float(fam.lam.value(s)), float(fam.lam.value(t))
    Dw = lambda lam: np.diag([lam * xi, -1j])  # noqa: E731
    Dw_inv = lambda lam: np.diag([1.0 / (lam * xi), 1j])  # noqa: E731
    EW = Dw(lam_t) @ Er @ Dw_inv(lam_s)
    h2s, h2t = float(zones.h2(fam, cfg, s, xi)), float(zones.h2(fam, cfg, t, xi))
    EV = np.diag([h2t, -1j]) @ Ev.entries @ np.diag([1.0 / h2s, 1j])
    rhs = math.exp(-Ev.log_damping) * (transform_T(fam, cfg, t, xi) @ EV @ transform_T_inv(fam, cfg, s, xi))
    return float(np.max(np.abs(EW - rhs)) / np.max(np.abs(EW)))


# ---------------------------------------------------------------------------
# data profiles with known radial Fourier transforms


@dataclass(frozen=True)
class DataProfile:
    """Radial Fourier data ``u0^(r)`` and ``u1^(r)``.

    kind: ``gaussian`` (``exp(-r^2/2)``), ``power_gaussian``
    (``r^-a exp(-r^2/2)``, singular at the origin) or ``ball``
    (indicator of the unit ball).
    """
    kind: str = "gaussian"
    c0: float = 1.0
    c1: float = 1.0
    a: float = 0.0
    n: int = 2

    def __post_init__(self):
        if self.kind not in ("gaussian", "power_gaussian", "ball"):
            raise ValueError(f"unknown data profile {self.kind!r}")
        if self.kind == "power_gaussian" and not 0 <= self.a < self.n / 2:
            raise ValueError("power_gaussian needs 0 <= a < n/2 for L2 data")

    def base(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "gaussian":
            return np.exp(-r * r / 2)
        if self.kind == "power_gaussian":
            return r ** (-self.a) * np.exp(-r * r / 2)
        nu = self.n / 2
        return (2 * np.pi) ** nu * jv(nu, r) / r ** nu

    def u0(self, r):
        return self.c0 * self.base(r)

    def u1(self, r):
        return self.c1 * self.base(r)

    @property
    def r_max(self):
        # data below 1e-18 relative beyond this radius (ball: slow decay, cap)
        return math.sqrt(2 * math.log(1e18)) if self.kind != "ball" else 200.0


def sphere_factor(n):
    """``c_n = |S^{n-1}| / (2 pi)^n`` so ``||f||^2 = c_n int r^{n-1} |f^|^2 dr``."""
    return 2 * math.pi ** (n / 2) / gamma_fn(n / 2) / (2 * math.pi) ** n


def exact_gaussian_norm(n, sigma=0.0):
    """``||u||_{H^sigma dot}`` for ``u^ = exp(-|xi|^2/2)``."""
    return math.sqrt(sphere_factor(n) * 0.5 * gamma_fn(sigma + n / 2))


def data_norm(data: DataProfile, n, sigma=0.0, which="u0", npts=4000):
    """Homogeneous Sobolev norm of initial data by log-radial quadrature."""
    r = np.geomspace(1e-12, data.r_max, npts)
    f = data.u0(r) if which == "u0" else data.u1(r)
    g = r ** (2 * sigma + n) * np.abs(f) ** 2
    return math.sqrt(sphere_factor(n) * _log_trapz(r, g))


def _log_trapz(r, g):
    """``int g dr / r`` on a log grid with a power-law tail below ``r[0]``."""
    x = np.log(r)
    val = float(np.trapezoid(g, x))
    if g[0] > 0 and g[1] > 0:
        k = (math.log(g[1]) - math.log(g[0])) / (x[1] - x[0])
        if k > 0:
            val += g[0] / k
    return val


@dataclass
class NormSeries:
    times: np.ndarray
    u: np.ndarray
    ut: np.ndarray
    grad: np.ndarray
    sigma: float
    n: int
    xi: np.ndarray = field(repr=False)
    meta: dict = field(default_factory=dict)


def _drop_levels(data, xis, floor):
    w = np.maximum(np.abs(data.u0(xis)), np.abs(data.u1(xis)))
    return floor / np.maximum(w, 1e-300)


def _norm_integrals(fam, data, xis, tab, times, sigma, n):
    a0 = data.u0(xis)[:, None]
    a1 = data.u1(xis)[:, None]
    u = tab["K0"] * a0 + tab["K1"] * a1
    ut = tab["dK0"] * a0 + tab["dK1"] * a1
    cn = sphere_factor(n)
    w = xis[:, None] ** (2 * sigma + n)
    res = {}
    for key, f, extra in (("u", u, 0.0), ("ut", ut, 0.0), ("grad", u, 2.0)):
        g = w * xis[:, None] ** extra * np.abs(f) ** 2
        res[key] = np.array([math.sqrt(cn * _log_trapz(xis, g[:, k])) for k in range(len(times))])
    res["grad"] = res["grad"] * fam.lam.value(times) * np.ones_like(times)
    return res


def xi_grid(fam, cfg, t_max, npts=400, data=None):
    """Log-spaced radial grid reaching below the heat scale ``(1 + B_lam)^{-1/2}`` at ``t_max``."""
    data = data or DataProfile()
    B = integrate_B_lambda(fam, 0.0, t_max, weighted=True) if t_max > 0 else 0.0
    lo = 1e-4 / math.sqrt(1.0 + B)
    return np.geomspace(lo, data.r_max, npts)


def norm_series(fam, cfg, data: DataProfile, times, sigma=0.0, n=2, npts=400, tol=1e-9, xis=None,
                floor=1e-14):
    """``||u||, ||u_t||, ||lam grad u||`` in ``H^sigma dot`` at each time.

    A frequency stops being integrated once its kernels times the data
    drop below ``floor``.
    """
    times = np.asarray(times, dtype=float)
    if xis is None:
        xis = xi_grid(fam, cfg, float(times.max()), npts, data)
    tab = data_kernel_table(fam, cfg, data, times, xis, tol, floor)
    return norms_from_table(fam, data, xis, tab, times, sigma, n, floor)


def data_kernel_table(fam, cfg, data: DataProfile, times, xis, tol=1e-9, floor=1e-14):
    """``kernel_table`` with per-frequency early stopping scaled to the data.

    Frequencies are integrated independently, so tables for disjoint chunks
    of ``xis`` can be computed separately and stacked along the first axis.
    """
    xis = np.asarray(xis, dtype=float)
    return kernel_table(fam, cfg, times, xis, tol, drop_below=_drop_levels(data, xis, floor))


def norms_from_table(fam, data, xis, tab, times, sigma=0.0, n=2, floor=1e-14):
    times = np.asarray(times, dtype=float)
    res = _norm_integrals(fam, data, xis, tab, times, sigma, n)
    return NormSeries(times, res["u"], res["ut"], res["grad"], sigma, n, xis,
                      meta=dict(npts=len(xis), xi_lo=float(xis[0]), xi_hi=float(xis[-1]),
                                steps=tab["steps"], truncation="data below 1e-18 relative", floor=floor))


def assemble_norm(fam, cfg, data: DataProfile, t, sigma=0.0, n=2, m=1, which="u", qtol=1e-6,
                  npts=200, max_doublings=4, tol=1e-10, floor=1e-14):
    """One norm at one time with grid doubling until successive values agree to ``qtol``.

    ``m`` only enters predicted rates and is accepted for interface symmetry.
    The grid is refined near ``Omega(0, t)`` and ``d0 / F(Lam(t))``.
    """
    del m
    if which not in ("u", "ut", "grad"):
        raise ValueError("which must be 'u', 'ut' or 'grad'")
    if t == 0:
        r = np.geomspace(1e-12, data.r_max, 4000)
        f = data.u0(r) if which != "ut" else data.u1(r)
        extra = 2.0 if which == "grad" else 0.0
        g = r ** (2 * sigma + n + extra) * np.abs(f) ** 2
        v = math.sqrt(sphere_factor(n) * _log_trapz(r, g))
        return v * (float(fam.lam.value(0.0)) if which == "grad" else 1.0)
    base = xi_grid(fam, cfg, t, npts, data)
    marks = [float(zones.omega_threshold(fam, cfg, t)), cfg.d0 / float(fam.F.value(t))]
    extra_pts = np.concatenate([m_ * np.geomspace(0.8, 1.25, 9) for m_ in marks if m_ > base[0]])
    xis = np.unique(np.concatenate([base, extra_pts]))
    prev = None
    for level in range(max_doublings + 1):
        tab = kernel_table(fam, cfg, [t], xis, tol, drop_below=_drop_levels(data, xis, floor))
        val = _norm_integrals(fam, data, xis, tab, np.array([t]), sigma, n)[which][0]
        if prev is not None and abs(val - prev) <= qtol * max(abs(val), 1e-300):
            return val
        if level == max_doublings:
            break
        prev = val
        mids = np.sqrt(xis[1:] * xis[:-1])
        xis = np.sort(np.concatenate([xis, mids]))
    achieved = abs(val - prev) / max(abs(val), 1e-300)
    raise QuadratureError(f"radial quadrature reached {achieved:.2e} > {qtol:.1e}", achieved=achieved)


__all__ = ["SystemKind", "FundamentalMatrix", "KernelValues", "KernelMismatch", "system_matrix",
           "fundamental_matrix", "kernels", "kernel_table", "backward_transform_check", "DataProfile",
           "assemble_norm", "norm_series", "NormSeries", "exact_gaussian_norm", "sphere_factor",
           "xi_grid", "propagate", "transform_T", "transform_T_inv", "StepUnderflow", "data_norm"]

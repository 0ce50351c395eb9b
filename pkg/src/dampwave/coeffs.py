"""Coefficient families for the damped wave model.

Every shape function is stored as ``f(t) = exp(logc + phi(t))`` so that
values, ratios and derivatives can be produced without overflow.  The
derivative ratio ``f^(k)/f`` is a complete Bell polynomial in the
derivatives of ``phi``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

LOG_MAX = 700.0


class ParameterDomainError(ValueError):
    """A family parameter violates its admissibility window."""


class SmoothnessError(ValueError):
    """A derivative beyond the configured smoothness order was requested."""


class RangeError(OverflowError):
    """A linear-scale evaluation would overflow double precision."""


class QuadratureError(RuntimeError):
    def __init__(self, msg, achieved=None):
        super().__init__(msg)
        self.achieved = achieved


def _bell(x, k):
    # complete Bell polynomials B_k(x1..xk); x[j] is the j-th derivative
    if k == 0:
        return np.ones_like(x[1])
    if k == 1:
        return x[1]
    if k == 2:
        return x[1] ** 2 + x[2]
    if k == 3:
        return x[1] ** 3 + 3 * x[1] * x[2] + x[3]
    if k == 4:
        return x[1] ** 4 + 6 * x[1] ** 2 * x[2] + 4 * x[1] * x[3] + 3 * x[2] ** 2 + x[4]
    raise SmoothnessError(f"derivative order {k} not supported (max 4)")


def _exp_checked(logv, what="value"):
    logv = np.asarray(logv, dtype=float)
    if np.any(logv > LOG_MAX):
        raise RangeError(f"{what} exceeds the double range (log = {np.max(logv):.4g}); use log-scale evaluators")
    return np.exp(logv)


class Shape:
    """Positive shape function ``exp(logc + phi(t))``."""

    logc = 0.0
    max_order = 4

    def phi(self, t):
        raise NotImplementedError

    def dphi(self, t, j):
        raise NotImplementedError

    def logv(self, t):
        return self.logc + self.phi(np.asarray(t, dtype=float))

    def ratio(self, t, k):
        """Return ``f^(k)(t) / f(t)``."""
        t = np.asarray(t, dtype=float)
        if k == 0:
            return np.ones_like(t)
        if k > self.max_order:
            raise SmoothnessError(f"order {k} exceeds {self.max_order}")
        x = [None] + [self.dphi(t, j) for j in range(1, k + 1)]
        return _bell(x, k)

    def value(self, t):
        return _exp_checked(self.logv(t))

    def deriv(self, t, k):
        return self.ratio(t, k) * self.value(t)


class PowerShape(Shape):
    """``c (1+t)^p``."""

    def __init__(self, c, p):
        self.logc = math.log(c)
        self.p = float(p)

    def phi(self, t):
        return self.p * np.log1p(t)

    def dphi(self, t, j):
        return self.p * (-1) ** (j - 1) * math.factorial(j - 1) / (1.0 + np.asarray(t)) ** j


class ExpShape(Shape):
    """``c e^{a t}``."""

    def __init__(self, c, a):
        self.logc = math.log(c)
        self.a = float(a)

    def phi(self, t):
        return self.a * np.asarray(t, dtype=float)

    def dphi(self, t, j):
        t = np.asarray(t, dtype=float)
        return np.full_like(t, self.a) if j == 1 else np.zeros_like(t)


class DoubleExpShape(Shape):
    """``c e^{a t} e^{b e^t}``."""

    def __init__(self, c, a, b):
        self.logc = math.log(c)
        self.a = float(a)
        self.b = float(b)

    def phi(self, t):
        t = np.asarray(t, dtype=float)
        return self.a * t + self.b * np.exp(t)

    def dphi(self, t, j):
        t = np.asarray(t, dtype=float)
        return self.b * np.exp(t) + (self.a if j == 1 else 0.0)


class ZeroShape(Shape):
    """Identically zero; only used for degenerate reference families."""

    logc = -np.inf

    def phi(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def dphi(self, t, j):
        return np.zeros_like(np.asarray(t, dtype=float))

    def value(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def deriv(self, t, k):
        return np.zeros_like(np.asarray(t, dtype=float))


class ProductShape(Shape):
    """``exp(logc) * prod f_i^{e_i}`` for shapes f_i and real exponents e_i."""

    def __init__(self, factors, logc=0.0):
        self.factors = list(factors)
        self.logc = float(logc) + sum(e * f.logc for f, e in self.factors)
        self.max_order = min(f.max_order for f, _ in self.factors)

    def phi(self, t):
        return sum(e * f.phi(t) for f, e in self.factors)

    def dphi(self, t, j):
        return sum(e * f.dphi(t, j) for f, e in self.factors)


class ReciprocalTailShape(Shape):
    """``F`` defined by ``1/F(t) = int_t^inf dtau / (lam Xi^2)``.

    The tail integral is evaluated by quadrature on a grid and interpolated
    monotonically in log form; derivatives follow from ``F' = F^2 g`` with
    ``g = 1/(lam Xi^2)``.
    """

    max_order = 2

    def __init__(self, lam: Shape, Xi: Shape, horizon: float, n: int = 400):
        self.lam, self.Xi = lam, Xi
        self.logc = 0.0
        grid = np.concatenate([[0.0], np.geomspace(1e-3, horizon, n - 1)])
        logF = np.array([-_log_tail(self._logg, s) for s in grid])
        self._grid = grid
        self._interp = PchipInterpolator(grid, logF, extrapolate=True)

    def _logg(self, t):
        return -self.lam.logv(t) - 2.0 * self.Xi.logv(t)

    def tail(self, t):
        return math.exp(_log_tail(self._logg, float(t)))

    def phi(self, t):
        return self._interp(np.asarray(t, dtype=float))

    def dphi(self, t, j):
        t = np.asarray(t, dtype=float)
        d1 = np.exp(self.phi(t) + self._logg(t))
        if j == 1:
            return d1
        if j == 2:
            dlogg = -self.lam.dphi(t, 1) - 2.0 * self.Xi.dphi(t, 1)
            return d1 * (d1 + dlogg)
        raise SmoothnessError("tail-defined F supports derivatives up to order 2")


def _log_tail(logf, t, drop=60.0):
    """log of int_t^inf exp(logf) computed relative to exp(logf(t)).

    The integral is truncated where the integrand has fallen by ``drop`` in
    log scale, which keeps double-exponential evaluators from overflowing.
    """
    l0 = float(logf(t))

    def rel(s):
        v = float(logf(s)) - l0
        return v if np.isfinite(v) else -np.inf

    L = 1.0
    while rel(t + L) > -drop and L < 1e6:
        L *= 2.0
    if rel(t + L) > -drop:
        # slow (power-law) decay: integrate to infinity directly
        val, err = integrate.quad(lambda s: math.exp(rel(s)), t, np.inf,
                                  epsabs=0.0, epsrel=1e-11, limit=400)
    else:
        edges = t + L * np.concatenate([[0.0], np.geomspace(1e-6, 1.0, 24)])
        val = err = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            v, e = integrate.quad(lambda s: math.exp(rel(s)), a, b,
                                  epsabs=0.0, epsrel=1e-12, limit=200)
            val += v
            err += e
    if not np.isfinite(val) or val <= 0:
        raise QuadratureError(f"tail integral from {t} did not converge", achieved=err)
    return l0 + math.log(val)


# ---------------------------------------------------------------------------
# oscillating factor


def _horner(c, x):
    out = np.full_like(x, c[0])
    for ck in c[1:]:
        out = out * x + ck
    return out


class Profile:
    """Bump ``A e(s) cos(2 pi s)`` on [0, 1] with ``int |psi| = 1/2``.

    ``e`` is a plateau envelope whose ramps of width ``ramp`` are the order-M
    smoothstep polynomial, so ``psi`` is exactly C^M and stays inside (-1, 1).
    """

    def __init__(self, M: int = 2, ramp: float = 0.08):
        self.M = int(M)
        self.ramp = float(ramp)
        P = np.polynomial.Polynomial
        x, one_minus = P([0, 1]), P([1, -1])
        step = x ** (M + 1) * sum(math.comb(M + k, k) * one_minus ** k for k in range(M + 1))
        self._step = [step.deriv(i).coef[::-1].copy() for i in range(M + 3)]
        self.A = 1.0
        mass, _ = integrate.quad(lambda s: abs(float(self(s))), 0, 1,
                                 points=[ramp, 0.25, 0.75, 1 - ramp], epsabs=0, epsrel=1e-13)
        self.A = 0.5 / mass
        v = self(np.linspace(0, 1, 4001), 0)
        self.c0 = float(v.min())
        self.c1 = float(v.max())
        if not (-1 < self.c0 and self.c1 < 1):
            raise ParameterDomainError(f"profile range [{self.c0}, {self.c1}] leaves (-1, 1)")

    def envelope(self, s, i=0):
        s = np.asarray(s, dtype=float)
        a = self.ramp
        c = self._step[i]
        left = _horner(c, np.clip(s / a, 0, 1)) / a ** i
        right = (-1) ** i * _horner(c, np.clip((1 - s) / a, 0, 1)) / a ** i
        mid = np.full_like(s, 1.0 if i == 0 else 0.0)
        return np.where(s < a, left, np.where(s > 1 - a, right, mid))

    def __call__(self, s, k=0):
        s = np.asarray(s, dtype=float)
        w = 2 * math.pi
        out = np.zeros_like(s)
        for i in range(k + 1):
            m = k - i
            out = out + math.comb(k, i) * self.envelope(s, i) * w ** m * np.cos(w * s + m * math.pi / 2)
        inside = (s >= 0) & (s <= 1)
        return np.where(inside, self.A * out, 0.0)

    def derivs(self, s, kmax):
        """``[psi, psi', ..., psi^(kmax)]`` sharing the envelope and trig evaluations."""
        s = np.asarray(s, dtype=float)
        w = 2 * math.pi
        env = [self.envelope(s, i) for i in range(kmax + 1)]
        c, sn = np.cos(w * s), np.sin(w * s)
        trig = [c, -sn, -c, sn]
        inside = (s >= 0) & (s <= 1)
        out = []
        for k in range(kmax + 1):
            acc = sum(math.comb(k, i) * env[i] * w ** (k - i) * trig[(k - i) % 4] for i in range(k + 1))
            out.append(np.where(inside, self.A * acc, 0.0))
        return out


@dataclass(frozen=True)
class Oscillator:
    centers: np.ndarray
    widths: np.ndarray
    amplitudes: np.ndarray
    profile: Profile

    def __post_init__(self):
        c, d, a = self.centers, self.widths, self.amplitudes
        if np.any(np.diff(c) <= 0):
            raise ParameterDomainError("bump centers must increase")
        if np.any(d <= 0):
            raise ParameterDomainError("bump widths must be positive")
        gaps = np.diff(c)
        bad = np.nonzero(d[:-1] > gaps * (1 + 1e-12))[0]
        if bad.size:
            raise ParameterDomainError(f"bump {bad[0] + 1}: width exceeds the gap to the next center")
        bad = np.nonzero((a <= 0) | (a > 1))[0]
        if bad.size:
            raise ParameterDomainError(f"bump {bad[0] + 1}: amplitude {a[bad[0]]:.4g} outside (0, 1]")

    @property
    def M(self):
        return self.profile.M

    @property
    def c0(self):
        return self.profile.c0

    @property
    def c1(self):
        return self.profile.c1

    def edges(self, lo=-np.inf, hi=np.inf):
        """Bump ends and ramp junctions: the points where omega is only C^M."""
        a = self.profile.ramp
        e = np.concatenate([self.centers, self.centers + self.widths,
                            self.centers + a * self.widths, self.centers + (1 - a) * self.widths])
        return np.sort(e[(e > lo) & (e < hi)])

    def active(self, t):
        """Index of the bump whose support contains t, or -1."""
        t = np.asarray(t, dtype=float)
        j = np.searchsorted(self.centers, t, side="right") - 1
        jc = np.clip(j, 0, len(self.centers) - 1)
        inside = (j >= 0) & (t <= self.centers[jc] + self.widths[jc])
        return np.where(inside, jc, -1)

    def __call__(self, t, k=0):
        if k > self.M:
            raise SmoothnessError(f"omega is only C^{self.M}; order {k} requested")
        t = np.asarray(t, dtype=float)
        base = 1.0 if k == 0 else 0.0
        j = self.active(t)
        if not np.any(j >= 0):
            return np.full(t.shape, base)
        jc = np.maximum(j, 0)
        s = (t - self.centers[jc]) / self.widths[jc]
        bump = self.amplitudes[jc] * self.profile(s, k) / self.widths[jc] ** k
        return np.where(j >= 0, base + bump, base)


def omega_derivs(osc: Optional[Oscillator], t, kmax):
    """``[omega, omega', ..., omega^(kmax)]`` in one pass."""
    t = np.asarray(t, dtype=float)
    base = [np.ones_like(t)] + [np.zeros_like(t) for _ in range(kmax)]
    if osc is None:
        return base
    if kmax > osc.M:
        raise SmoothnessError(f"omega is only C^{osc.M}; order {kmax} requested")
    j = osc.active(t)
    if not np.any(j >= 0):
        return base
    jc = np.maximum(j, 0)
    d = osc.widths[jc]
    s = (t - osc.centers[jc]) / d
    ps = osc.profile.derivs(s, kmax)
    return [np.where(j >= 0, b + osc.amplitudes[jc] * pk / d ** k, b) for k, (b, pk) in enumerate(zip(base, ps))]


def eval_omega(osc: Optional[Oscillator], t, k=0):
    """Value of ``d^k omega / dt^k``; the trivial oscillator is ``omega = 1``."""
    if osc is None:
        t = np.asarray(t, dtype=float)
        return np.ones_like(t) if k == 0 else np.zeros_like(t)
    return osc(t, k)


# ---------------------------------------------------------------------------
# families


@dataclass(frozen=True)
class CoefficientFamily:
    kind: str
    params: dict
    M: int
    lam: Shape
    Lam: Shape
    Theta: Shape
    Xi: Shape
    rho: Shape
    F: Shape
    oscillator: Optional[Oscillator] = None
    constants: dict = field(default_factory=dict)
    log_scale: bool = False
    warnings: tuple = ()

    @property
    def mu(self) -> Shape:
        return ProductShape([(self.rho, 1.0), (self.Lam, 1.0), (self.lam, -1.0)])

    @property
    def eta(self) -> Shape:
        """``mu / (2 Lam) = rho / (2 lam)``; the separating curve is ``|xi| = eta``."""
        return ProductShape([(self.rho, 1.0), (self.lam, -1.0)], logc=-math.log(2.0))

    def omega(self, t, k=0):
        return eval_omega(self.oscillator, t, k)

    def with_oscillator(self, osc):
        return CoefficientFamily(self.kind, self.params, self.M, self.lam, self.Lam, self.Theta,
                                 self.Xi, self.rho, self.F, osc, self.constants, self.log_scale,
                                 self.warnings)

    def breakpoints(self, lo, hi):
        if self.oscillator is None:
            return np.empty(0)
        return self.oscillator.edges(lo, hi)


def _require(ok, text, strict, issues):
    if not ok:
        if strict:
            raise ParameterDomainError(text)
        issues.append(text)


def _bumps(centers, widths, amps, M):
    if len(centers) == 0:
        return None
    return Oscillator(np.asarray(centers, float), np.asarray(widths, float),
                      np.asarray(amps, float), Profile(M))


def make_polynomial_family(alpha, beta, gamma, kappa, M=2, J=0, strict=True):
    """Polynomially growing propagation speed.

    ``lam = (alpha+1)(1+t)^alpha``, ``rho = (alpha+1)^2/(2 alpha - beta + 1) (1+t)^beta``.
    With ``strict=False`` window violations are kept in ``warnings`` instead of
    raising; this is how over-damped counterexamples are built.
    """
    issues = []
    _require(alpha > 0, "alpha > 0 violated", strict, issues)
    _require(-1 < gamma < alpha, "-1 < gamma < alpha violated", strict, issues)
    _require(alpha - gamma - 1 < beta, "beta > alpha - gamma - 1 violated", strict, issues)
    _require(beta < 2 * alpha + 1, "beta < 2 alpha + 1 violated", strict, issues)
    _require(kappa >= (3 - beta) / 4 - 1e-15, "kappa >= (3 - beta)/4 violated", strict, issues)
    _require(kappa <= 1, "kappa <= 1 violated", strict, issues)
    _require(kappa >= 1 - alpha + gamma + (alpha - gamma) / (M + 1) - 1e-15,
             "kappa >= 1 - alpha + gamma + (alpha - gamma)/(M + 1) violated", strict, issues)
    _require(M >= 2, "M >= 2 violated", strict, issues)
    denom = 2 * alpha - beta + 1
    if denom == 0:
        raise ParameterDomainError("2 alpha - beta + 1 = 0 makes rho undefined")
    p = alpha + 2 * kappa - 1
    if p <= 0:
        raise ParameterDomainError("alpha + 2 kappa > 1 is needed for F to exist")
    lam = PowerShape(alpha + 1, alpha)
    rho = PowerShape((alpha + 1) ** 2 / abs(denom), beta)
    if denom < 0:
        issues.append("rho coefficient sign flipped to keep rho positive")
    j = np.arange(1, J + 1)
    osc = _bumps(2.0 ** j, 2.0 ** (kappa * j), 2.0 ** (j * (1 + gamma - alpha - kappa)), M)
    return CoefficientFamily(
        kind="polynomial",
        params=dict(alpha=alpha, beta=beta, gamma=gamma, kappa=kappa, J=J),
        M=M, lam=lam, Lam=PowerShape(1.0, alpha + 1), Theta=PowerShape(1.0, gamma + 1),
        Xi=PowerShape(1.0, kappa), rho=rho, F=PowerShape((alpha + 1) * p, p),
        oscillator=osc, warnings=tuple(issues))


def make_exponential_family(q, r, kappa, M=2, J=0, strict=True):
    """``lam = Lam = e^t``, ``Theta = e^{rt}``, ``Xi = e^{kappa t}``, ``rho = e^{qt}/(2-q)``."""
    issues = []
    _require(0 < r < 1, "0 < r < 1 violated", strict, issues)
    _require(1 - r < q < 2, "1 - r < q < 2 violated", strict, issues)
    _require(kappa >= -q / 4, "kappa >= -q/4 violated", strict, issues)
    _require(kappa >= r - 1 + (1 - r) / (M + 1) - 1e-15,
             "kappa >= r - 1 + (1 - r)/(M + 1) violated", strict, issues)
    _require(kappa <= 0, "kappa <= 0 violated", strict, issues)
    _require(M >= 2, "M >= 2 violated", strict, issues)
    if 1 + 2 * kappa <= 0:
        raise ParameterDomainError("1 + 2 kappa > 0 is needed for F to exist")
    j = np.arange(1, J + 1)
    osc = _bumps(j.astype(float), np.exp(kappa * j), np.exp(j * (r - kappa - 1)), M)
    return CoefficientFamily(
        kind="exponential", params=dict(q=q, r=r, kappa=kappa, J=J), M=M,
        lam=ExpShape(1.0, 1.0), Lam=ExpShape(1.0, 1.0), Theta=ExpShape(1.0, r),
        Xi=ExpShape(1.0, kappa), rho=ExpShape(1.0 / (2 - q), q),
        F=ExpShape(1 + 2 * kappa, 1 + 2 * kappa), oscillator=osc, log_scale=True,
        warnings=tuple(issues))


def make_superexponential_family(q, r, kappa, M=2, J=0, strict=True):
    """``lam = e^t e^{e^t}``, ``Lam = e^{e^t}``; all evaluators work in log form."""
    issues = []
    _require(0 < r < 1, "0 < r < 1 violated", strict, issues)
    _require(1 - r < q < 2, "1 - r < q < 2 violated", strict, issues)
    _require(kappa >= -q / 4, "kappa >= -q/4 violated", strict, issues)
    _require(kappa >= r - 1 + (1 - r) / (M + 1) - 1e-15,
             "kappa >= r - 1 + (1 - r)/(M + 1) violated", strict, issues)
    _require(M >= 2, "M >= 2 violated", strict, issues)
    if 1 + 2 * kappa <= 0:
        raise ParameterDomainError("1 + 2 kappa > 0 is needed for F to exist")
    j = np.arange(1, J + 1)
    ej = np.exp(j.astype(float))
    osc = _bumps(ej, np.exp(-j + kappa * ej), np.exp((r - kappa - 1) * ej), M)
    # 1/F = int_t^inf e^{tau} e^{-(1+2k) e^tau} = e^{-(1+2k) e^t} / (1+2k)
    return CoefficientFamily(
        kind="superexponential", params=dict(q=q, r=r, kappa=kappa, J=J), M=M,
        lam=DoubleExpShape(1.0, 1.0, 1.0), Lam=DoubleExpShape(1.0, 0.0, 1.0),
        Theta=DoubleExpShape(1.0, 0.0, r), Xi=DoubleExpShape(1.0, -1.0, kappa),
        rho=DoubleExpShape(1.0 / (2 - q), 1.0, q), F=DoubleExpShape(1 + 2 * kappa, 0.0, 1 + 2 * kappa),
        oscillator=osc, log_scale=True, warnings=tuple(issues))


def make_custom_family(lam, Lam, Theta, Xi, rho, F=None, oscillator=None, M=2, horizon=1e4):
    """Assemble a family from user shapes; ``F`` defaults to the reciprocal tail."""
    if F is None:
        F = ReciprocalTailShape(lam, Xi, horizon)
    return CoefficientFamily(kind="custom", params={}, M=M, lam=lam, Lam=Lam, Theta=Theta,
                             Xi=Xi, rho=rho, F=F, oscillator=oscillator, log_scale=True)


# ---------------------------------------------------------------------------
# derived quantities


def damping_half(fam, t, kmax=0):
    """``[p, p', ..., p^(kmax)]`` with ``p = rho omega / 2``."""
    t = np.asarray(t, dtype=float)
    rho = fam.rho.value(t)
    om = omega_derivs(fam.oscillator, t, kmax)
    out = []
    for k in range(kmax + 1):
        acc = sum(math.comb(k, i) * fam.rho.ratio(t, i) * om[k - i] for i in range(k + 1))
        out.append(0.5 * rho * acc)
    return out


def log_eta(fam, t):
    return fam.eta.logv(t)


def z_derivs(fam, t, xi, kmax=0):
    """``z = |xi| / eta(t)`` and its time derivatives."""
    t = np.asarray(t, dtype=float)
    z = np.exp(np.log(xi) - fam.eta.logv(t))
    if kmax == 0:
        return [z]
    x = [None] + [-fam.eta.dphi(t, j) for j in range(1, kmax + 1)]
    return [z] + [z * _bell(x, k) for k in range(1, kmax + 1)]


def eval_mass(fam, t, xi):
    """``m = lam^2 omega^2 xi^2 - (rho omega)^2 / 4 - (rho omega)' / 2``."""
    p, dp = damping_half(fam, t, 1)
    if isinstance(fam.rho, ZeroShape):
        lw = fam.lam.value(t) * fam.omega(t)
        return (lw * xi) ** 2
    (z,) = z_derivs(fam, t, xi)
    return p * p * (z * z - 1.0) - dp


def eval_bracket(fam, t, xi):
    """``<xi> = sqrt(|lam^2 omega^2 xi^2 - rho^2 omega^2 / 4|)``."""
    if isinstance(fam.rho, ZeroShape):
        return fam.lam.value(t) * fam.omega(t) * xi
    (p,) = damping_half(fam, t, 0)
    (z,) = z_derivs(fam, t, xi)
    big = z > 1e100
    zs = np.where(big, 1.0, z)
    # for huge z factor out z to avoid squaring overflow
    return np.where(big, p * z, p * np.sqrt(np.abs(zs * zs - 1.0)))


def bracket_derivs(fam, t, xi, kmax=2):
    """``<xi>`` with derivatives up to ``kmax`` (needs ``z != 1``)."""
    ps = damping_half(fam, t, kmax)
    zs = z_derivs(fam, t, xi, kmax)
    z = zs[0]
    s = np.sign(z * z - 1.0)
    q = np.sqrt(np.abs(z * z - 1.0))
    out = [ps[0] * q]
    if kmax >= 1:
        qz = z * s / q
        out.append(ps[1] * q + ps[0] * qz * zs[1])
    if kmax >= 2:
        qzz = s / q - z * z / q ** 3
        out.append(ps[2] * q + 2 * ps[1] * qz * zs[1] + ps[0] * (qzz * zs[1] ** 2 + qz * zs[2]))
    if kmax >= 3:
        raise SmoothnessError("bracket derivatives implemented up to order 2")
    return out


def _pieces(fam, s, t, extra=()):
    cuts = np.concatenate([[s], fam.breakpoints(s, t), [c for c in extra if s < c < t], [t]])
    return np.unique(cuts)


def _quad(f, s, t, tol, fam, extra=()):
    total, err = 0.0, 0.0
    cuts = _pieces(fam, s, t, extra)
    for a, b in zip(cuts[:-1], cuts[1:]):
        v, e = integrate.quad(f, a, b, epsabs=0.0, epsrel=tol, limit=200)
        total += v
        err += e
    if not np.isfinite(total) or err > 10 * tol * abs(total) + 1e-300:
        raise QuadratureError(f"quadrature on [{s}, {t}] reached {err:.3g}", achieved=err)
    return total


def integrate_B_lambda(fam, s, t, tol=1e-10, weighted=False):
    """``int_s^t lam^2 / rho`` (times ``omega`` when ``weighted``)."""
    if t < s:
        raise ValueError("need s <= t")
    if t == s:
        return 0.0

    def f(x):
        v = math.exp(2 * float(fam.lam.logv(x)) - float(fam.rho.logv(x)))
        return v * float(fam.omega(x)) if weighted else v

    try:
        return _quad(f, s, t, tol, fam)
    except OverflowError as exc:
        raise RangeError(f"B_lambda on [{s}, {t}] overflows") from exc


def integrate_delta_log(fam, s, t, tol=1e-10):
    """``log(delta(t)/delta(s)) = 1/2 int_s^t rho omega``."""
    if t < s:
        raise ValueError("need s <= t")
    if t == s:
        return 0.0

    def f(x):
        return 0.5 * math.exp(float(fam.rho.logv(x))) * float(fam.omega(x))

    try:
        return _quad(f, s, t, tol, fam)
    except OverflowError as exc:
        raise RangeError(f"delta on [{s}, {t}] overflows") from exc


def cumulative(fam, integrand: Callable, times, tol=1e-10):
    """Running integral ``int_0^{t_i}`` of a scalar integrand at sorted times."""
    times = np.asarray(times, dtype=float)
    out = np.zeros_like(times)
    acc, prev = 0.0, 0.0
    for i, ti in enumerate(times):
        if ti > prev:
            acc += _quad(integrand, prev, ti, tol, fam)
            prev = ti
        out[i] = acc
    return out


def detect_t0(fam, eps, horizon, n=4000):
    """Smallest grid time after which ``|(rho omega)'| / (rho omega)^2 <= eps/4``."""
    grid = np.unique(np.concatenate([np.linspace(0, horizon, n), fam.breakpoints(0, horizon)]))
    p, dp = damping_half(fam, grid, 1)
    ratio = np.abs(dp) / (2 * p * p)
    bad = np.nonzero(ratio > eps / 4)[0]
    if bad.size == 0:
        return 0.0
    if bad[-1] == len(grid) - 1:
        return float("inf")
    return float(grid[bad[-1] + 1])


def dump_rows(fam, times):
    """Evaluator table rows (t, lam, Lam, Theta, Xi, F, rho, mu, omega) as logs where large."""
    times = np.asarray(times, dtype=float)
    cols = [times]
    for sh in (fam.lam, fam.Lam, fam.Theta, fam.Xi, fam.F, fam.rho, fam.mu):
        cols.append(sh.logv(times) if fam.log_scale else np.exp(sh.logv(times)))
    cols.append(fam.omega(times))
    return np.column_stack(cols)

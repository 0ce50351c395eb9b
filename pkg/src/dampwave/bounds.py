"""Predicted estimates for the fundamental solutions, and a harness comparing them with computed ones.

All bounds are returned as logarithms.  ``predicted_bound`` gives the
entrywise upper-bound matrix for a kind; ``verify_bound`` samples points
inside the kind's region, propagates, and reports observed/predicted
ratios together with their stability when the sample is doubled.

Micro-energy convention: a fundamental matrix maps the micro-energy at
the start point to the micro-energy at the end point, each taken in the
zone containing that point.  In the dissipative zone the first component
is ``lam/F(Lam) * u``; everywhere else it is ``lam |xi| u``.  The second
component is always ``D_t u``.  Kernel kinds use the raw ``(u, u_t)``
propagator from ``s = 0``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from . import zones
from .coeffs import cumulative, integrate_B_lambda, integrate_delta_log
from .propagator import SystemKind, propagate
from .wkb import ApplicabilityError
from .zones import Tag


class BoundKind(enum.Enum):
    HYP_ZONE = "HypZone"
    OSC_ZONE = "OscZone"
    RED_ZONE = "RedZone"
    ELL_REFINED = "EllRefined"
    ELL_UNREFINED = "EllUnrefined"
    DISS_ZONE = "DissZone"
    GLUED_CASE11 = "GluedCase11"
    GLUED_CASE12 = "GluedCase12"
    GLUED_CASE13_FULL = "GluedCase13Full"
    GLUED_CASE13_REDUCED = "GluedCase13Reduced"
    GLUED_CASE2_LARGE = "GluedCase2Large"
    GLUED_CASE22 = "GluedCase22"
    KERNEL_LARGE = "KernelLarge"
    KERNEL_SMALL = "KernelSmall"
    KERNEL_DISS = "KernelDiss"
    THEOREM_RATE = "TheoremRate"


_PI_HYP = frozenset({Tag.RED, Tag.OSC, Tag.HYP, Tag.UNCOVERED})


@dataclass(frozen=True)
class _Rule:
    start: frozenset = frozenset()
    end: frozenset = frozenset()
    from_zero: bool = False
    same_zone_path: bool = False
    after_t0: bool = False
    trend: Optional[str] = None
    regime: Optional[str] = None
    has_C: bool = False


_RULES = {
    BoundKind.HYP_ZONE: _Rule({Tag.HYP}, {Tag.HYP}, same_zone_path=True),
    BoundKind.OSC_ZONE: _Rule({Tag.OSC}, {Tag.OSC}, same_zone_path=True),
    BoundKind.RED_ZONE: _Rule({Tag.RED}, {Tag.RED}, same_zone_path=True, after_t0=True),
    BoundKind.ELL_REFINED: _Rule({Tag.ELL}, {Tag.ELL}, same_zone_path=True, after_t0=True),
    BoundKind.ELL_UNREFINED: _Rule({Tag.ELL}, {Tag.ELL}, same_zone_path=True, after_t0=True),
    BoundKind.DISS_ZONE: _Rule({Tag.DISS}, {Tag.DISS}, same_zone_path=True),
    BoundKind.GLUED_CASE11: _Rule({Tag.DISS}, {Tag.DISS}, from_zero=True),
    BoundKind.GLUED_CASE12: _Rule({Tag.DISS}, {Tag.ELL}, from_zero=True, trend="decreasing", has_C=True),
    BoundKind.GLUED_CASE13_FULL: _Rule({Tag.ELL}, _PI_HYP, from_zero=True, trend="decreasing", has_C=True),
    BoundKind.GLUED_CASE13_REDUCED: _Rule({Tag.DISS}, _PI_HYP, from_zero=True, trend="decreasing",
                                          has_C=True),
    BoundKind.GLUED_CASE2_LARGE: _Rule(_PI_HYP, _PI_HYP, from_zero=True, trend="increasing"),
    BoundKind.GLUED_CASE22: _Rule(_PI_HYP, {Tag.ELL}, from_zero=True, trend="increasing", has_C=True),
    BoundKind.KERNEL_LARGE: _Rule(from_zero=True, regime="large"),
    BoundKind.KERNEL_SMALL: _Rule(from_zero=True, regime="small", has_C=True),
    BoundKind.KERNEL_DISS: _Rule(from_zero=True, regime="diss"),
}

_KERNEL_KINDS = (BoundKind.KERNEL_LARGE, BoundKind.KERNEL_SMALL, BoundKind.KERNEL_DISS)


def uses_exponent_constant(kind):
    """Whether the bound has an unspecified constant ``C`` in ``exp(-C |xi|^2 B_lam)``."""
    return _RULES[kind].has_C if kind in _RULES else False


def c_sigma(sigma, n, m):
    """``sigma/2 + n/2 (1/m - 1/2)``."""
    return sigma / 2 + n / 2 * (1 / m - 0.5)


# ---------------------------------------------------------------------------
# running integrals shared by many samples


def _half_rho_omega(fam):
    return lambda x: 0.5 * math.exp(float(fam.rho.logv(x))) * float(fam.omega(x))


def _half_rho(fam):
    return lambda x: 0.5 * math.exp(float(fam.rho.logv(x)))


def _b_weighted(fam):
    return lambda x: math.exp(2 * float(fam.lam.logv(x)) - float(fam.rho.logv(x))) * float(fam.omega(x))


def _b_plain(fam):
    return lambda x: math.exp(2 * float(fam.lam.logv(x)) - float(fam.rho.logv(x)))


class _Clock:
    """Primitives ``int_0^t`` of the four integrands used by the bounds, on a fixed set of times."""

    _makers = {"delta": _half_rho_omega, "half_rho": _half_rho, "Bw": _b_weighted, "B": _b_plain}

    def __init__(self, fam, times, tol=1e-10):
        self.fam = fam
        self.times = np.unique(np.concatenate([[0.0], np.asarray(times, dtype=float).ravel()]))
        self.tol = tol
        self._cache = {}

    def at(self, name, t):
        if name not in self._cache:
            self._cache[name] = cumulative(self.fam, self._makers[name](self.fam), self.times, self.tol)
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float))
        return self._cache[name][idx]

    def between(self, name, s, t):
        return self.at(name, t) - self.at(name, s)


# ---------------------------------------------------------------------------
# predicted bounds


def _t_xi(fam, cfg, xi, horizon):
    c = 0.5 * math.log1p(-cfg.eps ** 2)
    f = lambda t: math.log(xi) - float(fam.eta.logv(t)) - c  # noqa: E731
    a, b = f(0.0), f(horizon)
    if a == 0:
        return 0.0
    if a * b > 0:
        raise ApplicabilityError(f"xi={xi:.4g} does not cross the elliptic boundary before t={horizon}")
    return brentq(f, 0.0, horizon, xtol=1e-12)


def _log_bounds(fam, cfg, kind, s, t, xi, clock, C=1.0):
    """Vectorised log bound matrices, shape (len(s), 2, 2)."""
    s, t, xi = (np.asarray(v, dtype=float) for v in (s, t, xi))
    lxi = np.log(xi)
    llt, lls = fam.lam.logv(t), fam.lam.logv(s)
    lrt, lrs = fam.rho.logv(t), fam.rho.logv(s)
    out = np.zeros(s.shape + (2, 2))
    eps = cfg.eps
    if kind is BoundKind.HYP_ZONE:
        out[:] = (0.5 * (llt - lls) - clock.between("delta", s, t))[:, None, None]
    elif kind is BoundKind.OSC_ZONE:
        out[:] = (0.5 * (llt - lls) - clock.between("half_rho", s, t))[:, None, None]
    elif kind is BoundKind.RED_ZONE:
        out[:] = ((2 * eps - 1) * clock.between("delta", s, t))[:, None, None]
    elif kind in (BoundKind.ELL_REFINED, BoundKind.ELL_UNREFINED):
        e = -xi ** 2 * clock.between("Bw", s, t)
        out[:, 0, 0] = e + llt - lls
        out[:, 0, 1] = e + llt + lxi - lrs
        if kind is BoundKind.ELL_UNREFINED:
            out[:, 1, 0] = e + lrt - lls - lxi
            out[:, 1, 1] = e + lrt - lrs
        else:
            out[:, 1, 0] = e + 2 * llt + lxi - lls - lrt
            first = e + 2 * llt + 2 * lxi - lrs - lrt
            out[:, 1, 1] = np.logaddexp(first, -2 * clock.between("delta", s, t))
    elif kind is BoundKind.DISS_ZONE:
        g = llt - fam.F.logv(t)
        out[:, :, 0] = (g + fam.F.logv(s) - lls)[:, None]
        out[:, :, 1] = (g + fam.Lam.logv(s) - lls)[:, None]
    elif kind is BoundKind.GLUED_CASE11:
        out[:] = (llt - fam.F.logv(t))[:, None, None]
    elif kind is BoundKind.GLUED_CASE12:
        e = -C * xi ** 2 * clock.at("B", t)
        out[:, 0, :] = (e + llt + lxi)[:, None]
        out[:, 1, :] = (e + 2 * llt + 2 * lxi - lrt)[:, None]
    elif kind is BoundKind.GLUED_CASE13_FULL:
        e = -C * xi ** 2 * clock.at("B", t)
        out[:, :, 0] = (e + llt)[:, None]
        out[:, :, 1] = (e + llt + lxi)[:, None]
    elif kind is BoundKind.GLUED_CASE13_REDUCED:
        out[:] = (-C * xi ** 2 * clock.at("B", t) + llt + lxi)[:, None, None]
    elif kind is BoundKind.GLUED_CASE2_LARGE:
        out[:] = (-(1 - 2 * eps) * clock.at("delta", t))[:, None, None]
    elif kind is BoundKind.GLUED_CASE22:
        horizon = float(np.max(t)) if t.size else 1.0
        txi = np.array([_t_xi(fam, cfg, x, horizon) for x in xi])
        out[:] = (-C * xi ** 2 * clock.at("B", t) + llt - fam.lam.logv(txi))[:, None, None]
    elif kind in _KERNEL_KINDS:
        # entry [l, j] bounds |d_t^l K_j|
        for l in (0, 1):
            for j in (0, 1):
                out[:, l, j] = _kernel_log(fam, cfg, kind, t, xi, j, l, clock, C)
    else:
        raise ValueError(f"{kind} has no matrix bound; use theorem_rate")
    return out


def _kernel_log(fam, cfg, kind, t, xi, j, l, clock, C):
    llt = fam.lam.logv(t)
    if kind is BoundKind.KERNEL_LARGE:
        return (l - 1) * llt + (l - j) * np.log(xi) - (1 - 2 * cfg.eps) * clock.at("delta", t)
    if kind is BoundKind.KERNEL_SMALL:
        return l * (llt + np.log(xi)) - C * xi ** 2 * clock.at("B", t)
    return l * (llt - fam.F.logv(t))


def kernel_regime(fam, cfg, t, xi):
    """'large', 'small' or 'diss' for arrays ``t``, ``xi``."""
    t, xi = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(xi, dtype=float))
    om = zones.omega_threshold(fam, cfg, t)
    diss = np.log(xi) + fam.F.logv(t) <= math.log(cfg.d0)
    return np.where(xi >= om, "large", np.where(diss, "diss", "small"))


def _applicable(fam, cfg, kind, s, t, xi, trend=None):
    """Boolean mask over samples plus a reason string for the first failure."""
    rule = _RULES[kind]
    s, t, xi = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (s, t, xi))
    ok = (s <= t) & (xi > 0) & (s >= 0)
    reason = np.full(s.shape, "", dtype=object)
    reason[~ok] = "need 0 <= s <= t and |xi| > 0"
    if rule.from_zero:
        bad = ok & (s != 0)
        reason[bad] = "kind is defined for s = 0 only"
        ok &= ~bad
    if rule.trend is not None and trend != rule.trend:
        reason[ok] = f"eta must be {rule.trend} (found {trend})"
        ok[:] = False
    if rule.after_t0:
        bad = ok & (s < cfg.t0)
        reason[bad] = f"s < t0 = {cfg.t0}"
        ok &= ~bad
    if rule.start:
        cs = zones.zone_codes(fam, cfg, s, xi)
        ce = zones.zone_codes(fam, cfg, t, xi)
        bs = ok & ~np.isin(cs, [int(z) for z in rule.start])
        reason[bs] = "start point outside " + "/".join(sorted(zones.TAG_NAMES[z] for z in rule.start))
        ok &= ~bs
        be = ok & ~np.isin(ce, [int(z) for z in rule.end])
        reason[be] = "end point outside " + "/".join(sorted(zones.TAG_NAMES[z] for z in rule.end))
        ok &= ~be
    if rule.regime is not None:
        bad = ok & (kernel_regime(fam, cfg, t, xi) != rule.regime)
        reason[bad] = f"frequency not in the {rule.regime} regime"
        ok &= ~bad
    return ok, reason


def predicted_bound(fam, cfg, kind, s, t, xi, C=1.0, horizon=None):
    """Log of the entrywise bound matrix at one point ``(s, t, |xi|)``.

    ``C`` is the exponent constant of the glued and small-frequency kernel
    kinds.  Raises ``ApplicabilityError`` when the point is outside the
    kind's region.
    """
    kind = BoundKind(kind)
    if kind is BoundKind.THEOREM_RATE:
        raise ValueError("TheoremRate is a norm rate; use theorem_rate")
    rule = _RULES[kind]
    trend = zones.eta_trend(fam, horizon or max(t, 1.0)) if rule.trend else None
    ok, reason = _applicable(fam, cfg, kind, s, t, xi, trend)
    if not ok[0]:
        raise ApplicabilityError(f"{kind.value} not applicable at s={s}, t={t}, xi={xi}: {reason[0]}")
    clock = _Clock(fam, [s, t])
    return _log_bounds(fam, cfg, kind, [s], [t], [xi], clock, C)[0]


def kernel_bound(fam, cfg, t, xi, j, l, C=1.0):
    """Log bound on ``|d_t^l K_j(t, 0, xi)|`` in the regime selected by ``xi``."""
    if j not in (0, 1) or l not in (0, 1):
        raise ValueError("j and l must be 0 or 1")
    regime = str(kernel_regime(fam, cfg, t, xi))
    kind = {"large": BoundKind.KERNEL_LARGE, "small": BoundKind.KERNEL_SMALL,
            "diss": BoundKind.KERNEL_DISS}[regime]
    clock = _Clock(fam, [t])
    return float(_kernel_log(fam, cfg, kind, np.array([t]), np.array([xi]), j, l, clock, C)[0])


def theorem_rate(fam, t, sigma=0.0, n=2, m=1.0, l=0):
    """Log of the predicted decay factor for ``u`` (l=0) or ``u_t`` (l=1)."""
    if not 1 <= m < 2:
        raise ValueError("m must lie in [1, 2)")
    if l not in (0, 1):
        raise ValueError("l must be 0 or 1")
    B = integrate_B_lambda(fam, 0.0, t) if t > 0 else 0.0
    expo = c_sigma(sigma, n, m) + 0.5 * l
    return -expo * math.log1p(B) + (float(fam.lam.logv(t)) if l else 0.0)


def closed_form_exponent(fam, sigma=0.0, n=2, m=1.0, l=0):
    """Decay exponent of the three model families.

    polynomial: power of ``1+t``; exponential: rate in ``t``;
    superexponential: rate in ``e^t``.
    """
    cs = c_sigma(sigma, n, m)
    p = fam.params
    if fam.kind == "polynomial":
        return -(2 * p["alpha"] - p["beta"] + 1) * cs + l * (p["beta"] - 1) / 2
    if fam.kind in ("exponential", "superexponential"):
        return -(2 - p["q"]) * cs + l * p["q"] / 2
    raise ValueError(f"no closed form for family kind {fam.kind!r}")


# ---------------------------------------------------------------------------
# S-function of the gluing step


def s_function(fam, cfg, t, xi, C, horizon=None):
    """``log S(t, |xi|)``; needs strictly monotone eta and ``t >= t_xi``."""
    horizon = horizon or max(2 * t, 1.0)
    if zones.eta_trend(fam, horizon) not in ("decreasing", "increasing"):
        raise ValueError("S(t, xi) needs strictly monotone eta")
    txi = _t_xi(fam, cfg, xi, horizon)
    if t < txi - 1e-12:
        raise ValueError(f"t={t} precedes t_xi={txi:.6g}")
    first = -C * xi ** 2 * integrate_B_lambda(fam, 0.0, txi, weighted=True) if txi > 0 else 0.0
    second = -integrate_delta_log(fam, txi, t) if t > txi else 0.0
    return first + second


@dataclass
class SFunctionScan:
    t: float
    xi: np.ndarray
    log_s: np.ndarray
    argmax: float
    xi_tilde: float
    decreasing: bool
    lemma_holds: bool


def s_function_scan(fam, cfg, t, C, n=60, span=20.0):
    """``log S`` on a frequency grid starting at ``xi_tilde`` (where ``t_xi = t``).

    For decreasing eta the admissible frequencies are ``xi >= xi_tilde``.
    """
    trend = zones.eta_trend(fam, max(2 * t, 1.0))
    xi_tilde = float(np.exp(fam.eta.logv(t))) * math.sqrt(1 - cfg.eps ** 2)
    if trend == "decreasing":
        grid = xi_tilde * np.geomspace(1.0, span, n)
    elif trend == "increasing":
        grid = xi_tilde * np.geomspace(1.0, 1.0 / span, n)
    else:
        raise ValueError("S(t, xi) needs strictly monotone eta")
    vals = []
    for x in grid:
        try:
            vals.append(s_function(fam, cfg, t, float(x), C))
        except ValueError:
            vals.append(-np.inf)
    vals = np.array(vals)
    k = int(np.argmax(vals))
    dec = bool(np.all(np.diff(vals[k:]) <= 1e-12 * np.maximum(1.0, np.abs(vals[k:-1]))))
    return SFunctionScan(t, grid, vals, float(grid[k]), xi_tilde, dec, bool(np.all(vals <= 1e-12)))


# ---------------------------------------------------------------------------
# sampling and comparison


@dataclass(frozen=True)
class SampleSpec:
    n: int = 200
    t_range: tuple = (0.0, 50.0)
    xi_range: tuple = (1e-3, 10.0)
    seed: int = 0
    max_rounds: int = 400


def _zone_entry(fam, cfg, tag, t, xi, lo, grid=96):
    """Earliest ``a >= lo`` with ``[a, t]`` inside zone ``tag`` at fixed ``xi`` (vectorised)."""
    g = np.linspace(0.0, 1.0, grid)
    tau = t[:, None] - (t - lo)[:, None] * g[None, :]
    codes = zones.zone_codes(fam, cfg, tau, np.broadcast_to(xi[:, None], tau.shape))
    inside = codes == int(tag)
    # first grid index (walking back from t) that leaves the zone
    leave = np.where(np.all(inside, axis=1), grid, np.argmin(inside, axis=1))
    a_in = tau[np.arange(t.size), np.maximum(leave - 1, 0)]
    full = leave == grid
    a_out = np.where(full, lo, tau[np.arange(t.size), np.minimum(leave, grid - 1)])
    for _ in range(40):
        mid = 0.5 * (a_in + a_out)
        cm = zones.zone_codes(fam, cfg, mid, xi) == int(tag)
        a_in = np.where(cm & ~full, mid, a_in)
        a_out = np.where(cm | full, a_out, mid)
    return np.where(full, lo, a_in)


def sample_points(fam, cfg, kind, spec: SampleSpec, horizon=None):
    """``(s, t, xi)`` arrays of ``spec.n`` points inside the kind's region.

    Draws scrambled Sobol points in ``(log(1+t), log xi, u)`` and keeps them in
    generation order, so a doubled sample extends the original one.
    """
    from scipy.stats import qmc

    kind = BoundKind(kind)
    rule = _RULES[kind]
    t0, t1 = spec.t_range
    trend = zones.eta_trend(fam, horizon or max(t1, 1.0)) if rule.trend else None
    if rule.trend is not None and trend != rule.trend:
        raise ApplicabilityError(f"{kind.value} needs {rule.trend} eta, family has {trend}")
    lx0, lx1 = math.log(spec.xi_range[0]), math.log(spec.xi_range[1])
    eng = qmc.Sobol(d=3, scramble=True, seed=spec.seed)
    S, T, X = [], [], []
    for _ in range(spec.max_rounds):
        u = eng.random(256)
        # uniform in log(1+t): transients near t = 0 get resolved
        t = np.expm1(math.log1p(t0) + (math.log1p(t1) - math.log1p(t0)) * u[:, 0])
        xi = np.exp(lx0 + (lx1 - lx0) * u[:, 1])
        if rule.same_zone_path:
            tag = next(iter(rule.start))
            lo = max(t0, cfg.t0) if rule.after_t0 else t0
            keep = (zones.zone_codes(fam, cfg, t, xi) == int(tag)) & (t > lo)
            t, xi, w = t[keep], xi[keep], u[keep, 2]
            a = _zone_entry(fam, cfg, tag, t, xi, np.full(t.size, lo))
            s = a + w * (t - a)
            ok, _ = _applicable(fam, cfg, kind, s, t, xi, trend)
        else:
            s = np.zeros_like(t)
            ok, _ = _applicable(fam, cfg, kind, s, t, xi, trend)
        S.extend(s[ok])
        T.extend(t[ok])
        X.extend(xi[ok])
        if len(S) >= spec.n:
            break
    if len(S) < spec.n:
        raise ApplicabilityError(
            f"{kind.value}: only {len(S)} of {spec.n} points found in t {spec.t_range}, xi {spec.xi_range}")
    return np.array(S[:spec.n]), np.array(T[:spec.n]), np.array(X[:spec.n])


def _log_weight(fam, cfg, tau, xi):
    """Log of the first micro-energy weight at ``(tau, xi)``."""
    diss = zones.zone_codes(fam, cfg, tau, xi) == int(Tag.DISS)
    return np.where(diss, fam.lam.logv(tau) - fam.F.logv(tau), fam.lam.logv(tau) + np.log(xi))


def observed_log(fam, cfg, kind, s, t, xi, tol=1e-9):
    """Log of ``|E(t, s, xi)|`` entrywise in the kind's micro-energy, shape (B, 2, 2)."""
    kind = BoundKind(kind)
    E, _ = propagate(fam, cfg, SystemKind.RAW, s, None, xi, tol, t_eval=np.asarray(t)[:, None])
    with np.errstate(divide="ignore"):
        L = np.log(np.abs(E[:, 0]))
    if kind in _KERNEL_KINDS:
        return L
    ws = _log_weight(fam, cfg, s, xi)
    wt = _log_weight(fam, cfg, t, xi)
    L[:, 0, 0] += wt - ws
    L[:, 0, 1] += wt
    L[:, 1, 0] -= ws
    return L


@dataclass
class BoundReport:
    kind: BoundKind
    s: np.ndarray
    t: np.ndarray
    xi: np.ndarray
    log_ratio: np.ndarray = field(repr=False)
    sup_ratio: float
    sup_ratio_doubled: float
    entry_sup: np.ndarray
    constant: Optional[float] = None
    ceiling: float = math.inf
    constant_doubled: Optional[float] = None
    max_growth: float = 0.1
    log_observed: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def growth(self):
        if not (np.isfinite(self.sup_ratio) and self.sup_ratio > 0):
            return math.inf
        return self.sup_ratio_doubled / self.sup_ratio - 1.0

    @property
    def finite(self):
        return bool(np.isfinite(self.sup_ratio) and np.isfinite(self.sup_ratio_doubled))

    @property
    def passed(self):
        return self.finite and self.growth <= self.max_growth and self.sup_ratio_doubled <= self.ceiling

    def rows(self):
        """(sample, s, t, xi, entry, log observed, log predicted, log ratio) for CSV output."""
        n = self.log_ratio.shape[0]
        for i in range(n):
            for a, b in np.ndindex(*self.log_ratio.shape[1:]):
                lr = float(self.log_ratio[i, a, b])
                lo = math.nan if self.log_observed is None else float(self.log_observed[i, a, b])
                yield i, float(self.s[i]), float(self.t[i]), float(self.xi[i]), f"{a + 1}{b + 1}", \
                    lo, lo - lr, lr


def fit_exponent_constant(log_obs_minus_base, X, slack=math.log(2.0), cap=1.0):
    """Largest ``C`` in ``[0, cap]`` keeping ``sup(r0 + C X) <= sup(r0) + slack``.

    ``r0`` is the per-sample log ratio with ``C = 0``; ``X = |xi|^2 B_lam``.
    """
    r0 = np.max(log_obs_minus_base.reshape(len(X), -1), axis=1)
    A = np.max(r0[np.isfinite(r0)]) if np.any(np.isfinite(r0)) else 0.0
    pos = (X > 0) & np.isfinite(r0)
    if not np.any(pos):
        return cap
    return float(min(cap, np.min((A + slack - r0[pos]) / X[pos])))


def verify_bound(fam, cfg, kind, spec: SampleSpec = SampleSpec(), tol=1e-9, C=None, C_cap=1.0,
                 ceiling=math.inf, max_growth=0.1, data=None, sigma=0.0, n_dim=2, m=1.0):
    """Compare computed fundamental solutions with the predicted bound.

    Draws ``2 spec.n`` points; the first ``spec.n`` give ``sup_ratio`` and
    all of them give ``sup_ratio_doubled``.  For kinds with an exponent
    constant, ``C`` (if not given) is fitted on the first half as the
    largest value costing at most a factor 2 in the sup ratio.
    """
    kind = BoundKind(kind)
    if kind is BoundKind.THEOREM_RATE:
        return verify_theorem_rate(fam, cfg, spec, data=data, sigma=sigma, n=n_dim, m=m, tol=tol,
                                   ceiling=ceiling, max_growth=max_growth)
    big = SampleSpec(2 * spec.n, spec.t_range, spec.xi_range, spec.seed, spec.max_rounds)
    s, t, xi = sample_points(fam, cfg, kind, big)
    clock = _Clock(fam, np.concatenate([s, t]))
    obs = observed_log(fam, cfg, kind, s, t, xi, tol)
    const = const2 = None
    if uses_exponent_constant(kind):
        base = _log_bounds(fam, cfg, kind, s, t, xi, clock, C=0.0)
        X = xi ** 2 * clock.at("B", t)
        const2 = fit_exponent_constant(obs - base, X, cap=C_cap)
        if C is None:
            C = fit_exponent_constant((obs - base)[:spec.n], X[:spec.n], cap=C_cap)
        const = C
    pred = _log_bounds(fam, cfg, kind, s, t, xi, clock, C=1.0 if C is None else C)
    with np.errstate(invalid="ignore"):
        lr = obs - pred
    lr = np.where(np.isnan(lr), -np.inf, lr)
    h = spec.n
    sup1 = float(np.exp(np.max(lr[:h])))
    sup2 = float(np.exp(np.max(lr)))
    entry = np.exp(np.max(lr[:h], axis=0))
    return BoundReport(kind, s[:h], t[:h], xi[:h], lr[:h], sup1, sup2, entry, const, ceiling, const2,
                       max_growth, obs[:h])


def verify_theorem_rate(fam, cfg, spec: SampleSpec, data=None, sigma=0.0, n=2, m=1.0, tol=1e-9,
                        npts=200, ceiling=math.inf, max_growth=0.1):
    """Norms ``||u||`` and ``||u_t||`` over predicted theorem rates at log-spaced times.

    The sample is ``spec.n`` times in ``spec.t_range``; the doubled sample
    adds the geometric midpoints.
    """
    from .propagator import DataProfile, norm_series

    data = data or DataProfile(n=n)
    t0, t1 = spec.t_range
    t0 = max(t0, 1e-3)
    base = np.geomspace(t0, t1, spec.n)
    mids = np.sqrt(base[1:] * base[:-1])
    times = np.sort(np.concatenate([base, mids]))
    ns = norm_series(fam, cfg, data, times, sigma=sigma, n=n, npts=npts, tol=tol)
    pred = np.array([[theorem_rate(fam, tt, sigma, n, m, l) for l in (0, 1)] for tt in times])
    obs = np.log(np.column_stack([ns.u, ns.ut]))
    lr = (obs - pred)[:, None, :]
    first = np.isin(times, base)
    sup1 = float(np.exp(np.max(lr[first])))
    sup2 = float(np.exp(np.max(lr)))
    zeros = np.zeros(first.sum())
    return BoundReport(BoundKind.THEOREM_RATE, zeros, times[first], zeros, lr[first], sup1, sup2,
                       np.exp(np.max(lr[first], axis=0)), None, ceiling, None, max_growth,
                       obs[first][:, None, :])


# ---------------------------------------------------------------------------
# auxiliary pointwise statements


@dataclass
class EllAuxReport:
    n: int
    max_excess: float
    holds: bool
    worst: tuple


def ell_aux_check(fam, cfg, t, xi, rtol=1e-12):
    """``<xi> - rho w/2 <= -lam^2 w |xi|^2 / rho`` at elliptic points.

    Here ``<xi> = sqrt((rho w/2)^2 - lam^2 w^2 |xi|^2)``; the left side is
    evaluated as ``-a / (p + <xi>)`` to avoid cancellation.
    """
    t, xi = np.asarray(t, dtype=float), np.asarray(xi, dtype=float)
    w = fam.omega(t)
    p = 0.5 * fam.rho.value(t) * w
    a = (fam.lam.value(t) * w * xi) ** 2
    root = np.sqrt(np.maximum(p * p - a, 0.0))
    lhs = -a / (p + root)
    rhs = -(fam.lam.value(t) ** 2) * w * xi ** 2 / fam.rho.value(t)
    excess = (lhs - rhs) / np.abs(rhs)
    k = int(np.argmax(excess))
    return EllAuxReport(int(t.size), float(excess[k]), bool(np.all(excess <= rtol)),
                        (float(t[k]), float(xi[k])))


def b6_ratio(fam, times):
    """``B_lam(0, t) / F(Lam(t))^2`` at each time."""
    times = np.asarray(times, dtype=float)
    B = cumulative(fam, _b_plain(fam), times)
    return B * np.exp(-2 * fam.F.logv(times))


@dataclass
class DissLemmaReport:
    times: np.ndarray
    tail_ratio: np.ndarray
    sup_tail_ratio: float
    decreasing_from: Optional[float]


def diss_lemma_check(fam, t_max, horizon_factor=8.0, n=400):
    """Tail ``int_t^T lam / delta^2`` against ``Lam(t) / delta^2(t)``, and the eventual decrease
    of ``Lam / delta^2``.  ``T = horizon_factor * t_max`` truncates the tail."""
    from scipy.integrate import cumulative_trapezoid

    T = horizon_factor * t_max
    grid = np.unique(np.concatenate([np.geomspace(1e-3, T, 20 * n), [0.0], fam.breakpoints(0, T)]))
    D2 = cumulative_trapezoid(fam.rho.value(grid) * fam.omega(grid), grid, initial=0.0)
    ll = fam.lam.logv(grid)
    times = np.geomspace(max(1e-2, t_max / 1e3), t_max, n)
    ratio = np.empty(n)
    for i, tt in enumerate(times):
        k = np.searchsorted(grid, tt)
        g = grid[k:]
        f = np.exp(ll[k:] - fam.Lam.logv(tt) - (D2[k:] - np.interp(tt, grid, D2)))
        ratio[i] = np.trapezoid(f, g)
    dlog = fam.lam.value(grid) / fam.Lam.value(grid) - fam.rho.value(grid) * fam.omega(grid)
    pos = np.nonzero(dlog[grid <= t_max] >= 0)[0]
    if pos.size == 0:
        dec_from = 0.0
    elif pos[-1] + 1 < np.sum(grid <= t_max):
        dec_from = float(grid[pos[-1] + 1])
    else:
        dec_from = None
    return DissLemmaReport(times, ratio, float(np.max(ratio)), dec_from)


@dataclass
class GluingAuxReport:
    xi: np.ndarray
    t_diss: np.ndarray
    factor: np.ndarray
    lower: float


def gluing_aux_check(fam, cfg, xis, C=1.0, horizon=1e4):
    """``exp(-C |xi|^2 B_lam(0, t_diss))`` on a frequency grid; ``lower`` is its minimum."""
    xs, td, fac = [], [], []
    for x in np.asarray(xis, dtype=float):
        st = zones.separating_times(fam, cfg, float(x), horizon)
        if st.t_diss is None:
            continue
        B = integrate_B_lambda(fam, 0.0, st.t_diss) if st.t_diss > 0 else 0.0
        xs.append(x)
        td.append(st.t_diss)
        fac.append(math.exp(-C * x * x * B))
    fac = np.array(fac)
    return GluingAuxReport(np.array(xs), np.array(td), fac, float(fac.min()) if fac.size else math.nan)


def translation_defect(fam, cfg, kind, s, t, t2):
    """``log b(s,t) + log b(t,t2) - log b(s,t2)`` for the scalar multiplicative kinds."""
    kind = BoundKind(kind)
    if kind not in (BoundKind.HYP_ZONE, BoundKind.RED_ZONE, BoundKind.OSC_ZONE):
        raise ValueError("translation consistency is defined for HypZone, OscZone and RedZone")
    clock = _Clock(fam, [s, t, t2])
    one = np.ones(1)
    f = lambda a, b: _log_bounds(fam, cfg, kind, a * one, b * one, one, clock)[0, 0, 0]  # noqa: E731
    return float(f(s, t) + f(t, t2) - f(s, t2))


# ---------------------------------------------------------------------------
# decay fitting


@dataclass
class DecayReport:
    slope: float
    intercept: float
    residual: float
    n: int
    axes: str
    predicted: Optional[float] = None

    @property
    def deviation(self):
        return None if self.predicted is None else self.slope - self.predicted


def fit_decay(times, norms, axes="loglog", predicted=None, window=None):
    """Least-squares slope of ``log norm`` against ``log(1+t)`` (loglog) or ``t`` (loglinear)."""
    times = np.asarray(times, dtype=float)
    norms = np.asarray(norms, dtype=float)
    if window is not None:
        keep = (times >= window[0]) & (times <= window[1])
        times, norms = times[keep], norms[keep]
    if times.size < 8:
        raise ValueError(f"need at least 8 samples in the fit window, got {times.size}")
    if np.any(~(norms > 0)):
        raise ValueError("norms must be positive to fit a decay rate")
    if axes == "loglog":
        x = np.log1p(times)
    elif axes == "loglinear":
        x = times
    else:
        raise ValueError("axes must be 'loglog' or 'loglinear'")
    y = np.log(norms)
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return DecayReport(float(coef[0]), float(coef[1]), res, int(x.size), axes, predicted)


def decay_axes(fam):
    return "loglog" if fam.kind == "polynomial" else "loglinear"

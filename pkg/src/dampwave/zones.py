"""Phase-space zones, separating times and the auxiliary weights h1, h2.

All zone tests are done on logarithms.  The key reduction is that
``<xi> / (rho omega / 2) = sqrt|z^2 - 1|`` with ``z = |xi| / eta(t)`` and
``eta = rho / (2 lam)``, so omega drops out of every band condition.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .coeffs import damping_half, eval_bracket, z_derivs


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ZoneConfig:
    N: float = 4.0
    eps: float = 0.2
    d0: float = 1.0
    t0: float = 0.0

    def __post_init__(self):
        if not self.N >= 1:
            raise ConfigError(f"ZoneConfig.N must be >= 1, got {self.N}")
        if not 0 < self.eps < 0.5:
            raise ConfigError(f"ZoneConfig.eps must lie in (0, 1/2), got {self.eps}")
        if not self.d0 > 0:
            raise ConfigError(f"ZoneConfig.d0 must be positive, got {self.d0}")
        if not self.t0 >= 0:
            raise ConfigError(f"ZoneConfig.t0 must be non-negative, got {self.t0}")


class Tag(enum.IntEnum):
    UNCOVERED = 0
    HYP = 1
    OSC = 2
    RED = 3
    ELL = 4
    DISS = 5


class Region(enum.Enum):
    HYPERBOLIC = "hyperbolic"
    ELLIPTIC = "elliptic"
    BOUNDARY = "boundary"


TAG_NAMES = {Tag.UNCOVERED: "Uncovered", Tag.HYP: "Hyp", Tag.OSC: "Osc", Tag.RED: "Red",
             Tag.ELL: "Ell", Tag.DISS: "Diss"}


@dataclass(frozen=True)
class Zone:
    tag: Tag
    region: Region

    @property
    def name(self):
        return TAG_NAMES[self.tag]


_REGION = {Tag.HYP: Region.HYPERBOLIC, Tag.OSC: Region.HYPERBOLIC, Tag.UNCOVERED: Region.HYPERBOLIC,
           Tag.RED: Region.BOUNDARY, Tag.ELL: Region.ELLIPTIC, Tag.DISS: Region.ELLIPTIC}


def log_z(fam, t, xi):
    return np.log(xi) - fam.eta.logv(t)


def band(fam, t, xi):
    """``sqrt|z^2 - 1| = <xi> / (rho omega / 2)`` and the side of Gamma (+1 above, -1 below)."""
    lz = np.asarray(log_z(fam, t, xi), dtype=float)
    z2m1 = np.expm1(2 * np.minimum(lz, 300.0))
    return np.sqrt(np.abs(z2m1)), np.sign(lz)


def zone_codes(fam, cfg: ZoneConfig, t, xi):
    """Vectorised classification; returns an integer array of ``Tag`` values.

    Closed inequalities with precedence Diss > Ell > Red > Osc > Hyp.
    """
    t, xi = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(xi, dtype=float))
    q, side = band(fam, t, xi)
    lxi = np.log(xi)
    logN = math.log(cfg.N)
    below = side < 0
    above = side > 0
    in_diss = below & (lxi + fam.F.logv(t) <= math.log(cfg.d0))
    in_ell = below & (q >= cfg.eps) & ~in_diss
    in_red = q <= cfg.eps
    theta_xi = fam.Theta.logv(t) + lxi
    in_osc = above & (q >= cfg.eps) & (q <= cfg.N) & (theta_xi <= logN) & (fam.Lam.logv(t) + lxi >= logN)
    in_hyp = above & (q >= cfg.N) & (theta_xi >= logN)
    out = np.full(t.shape, int(Tag.UNCOVERED))
    for mask, tag in ((in_hyp, Tag.HYP), (in_osc, Tag.OSC), (in_red, Tag.RED),
                      (in_ell, Tag.ELL), (in_diss, Tag.DISS)):
        out[mask] = int(tag)
    return out


def classify(fam, cfg: ZoneConfig, t: float, xi: float) -> Zone:
    if xi <= 0 or t < 0:
        raise ValueError("classify needs t >= 0 and |xi| > 0")
    tag = Tag(int(zone_codes(fam, cfg, t, xi)))
    return Zone(tag, _REGION[tag])


# ---------------------------------------------------------------------------


def eta_trend(fam, horizon, n=512):
    """'decreasing', 'increasing', 'constant' or 'mixed' on [0, horizon]."""
    tt = np.linspace(0, horizon, n)
    d = fam.eta.dphi(tt, 1)
    scale = np.max(np.abs(d)) if np.any(d) else 0.0
    if scale == 0 or np.all(np.abs(d) <= 1e-14 * max(scale, 1.0)):
        return "constant"
    if np.all(d < 0):
        return "decreasing"
    if np.all(d > 0):
        return "increasing"
    return "mixed"


@dataclass(frozen=True)
class SeparatingTimes:
    xi: float
    t_diss: Optional[float] = None
    t_ell: Optional[float] = None
    t_red: Optional[float] = None
    t_osc: Optional[float] = None
    t_xi: Optional[float] = None


def _first_root(f, horizon, xtol, n=800):
    grid = np.unique(np.concatenate([np.linspace(0, horizon, n), np.geomspace(1e-6, horizon, n)]))
    grid = np.concatenate([[0.0], grid[grid > 0]])
    v = f(grid)
    if v[0] == 0:
        return 0.0
    s = np.sign(v)
    idx = np.nonzero(s[1:] * s[:-1] <= 0)[0]
    if idx.size == 0:
        return None
    i = idx[0]
    if v[i + 1] == 0:
        return float(grid[i + 1])
    return float(brentq(lambda x: float(f(x)), grid[i], grid[i + 1], xtol=xtol, rtol=1e-14))


def separating_times(fam, cfg: ZoneConfig, xi, horizon, xtol=1e-12):
    """Boundary crossing times for a fixed frequency (None when not crossed)."""
    if xi <= 0:
        raise ValueError("xi must be positive")
    lxi = math.log(xi)

    def lz_minus(c):
        return lambda t: lxi - fam.eta.logv(t) - c

    t_diss = _first_root(lambda t: lxi + fam.F.logv(t) - math.log(cfg.d0), horizon, xtol)
    t_ell = _first_root(lz_minus(0.5 * math.log1p(-cfg.eps ** 2)), horizon, xtol)
    t_red = _first_root(lz_minus(0.5 * math.log1p(cfg.eps ** 2)), horizon, xtol)
    t_osc = _first_root(lz_minus(0.5 * math.log1p(cfg.N ** 2)), horizon, xtol)
    t_xi = t_ell if eta_trend(fam, horizon) in ("decreasing", "increasing") else None
    return SeparatingTimes(xi, t_diss, t_ell, t_red, t_osc, t_xi)


def t_of_xi(fam, cfg, xi, horizon, xtol=1e-12):
    """``eta^{-1}(|xi| / sqrt(1 - eps^2))`` for strictly monotone eta."""
    if eta_trend(fam, horizon) not in ("decreasing", "increasing"):
        return None
    c = 0.5 * math.log1p(-cfg.eps ** 2)
    return _first_root(lambda t: math.log(xi) - fam.eta.logv(t) - c, horizon, xtol)


def omega_threshold(fam, cfg: ZoneConfig, t):
    eta0 = float(np.exp(fam.eta.logv(0.0)))
    return np.maximum(eta0, np.exp(fam.eta.logv(t))) * math.sqrt(1 - cfg.eps ** 2)


# ---------------------------------------------------------------------------
# cutoff and auxiliary weights


def chi(x):
    """C-infinity cutoff: 1 on [0, 1/2], 0 on [1, inf)."""
    x = np.asarray(x, dtype=float)
    y = np.clip(2 * x - 1, 0.0, 1.0)
    inner = (y > 0) & (y < 1)
    ys = np.where(inner, y, 0.5)
    a = 1.0 / ys - 1.0 / (1.0 - ys)
    s = np.where(inner, expit(-a), np.where(y >= 1, 1.0, 0.0))
    return 1.0 - s


def chi_prime(x):
    x = np.asarray(x, dtype=float)
    y = np.clip(2 * x - 1, 0.0, 1.0)
    inner = (y > 0) & (y < 1)
    ys = np.where(inner, y, 0.5)
    a = 1.0 / ys - 1.0 / (1.0 - ys)
    s = expit(-a)
    ds = s * (1 - s) * (1.0 / ys ** 2 + 1.0 / (1.0 - ys) ** 2)
    return np.where(inner, -2.0 * ds, 0.0)


def h1(fam, cfg, t, xi, with_derivative=False):
    lam = fam.lam.value(t)
    logF = fam.F.logv(t)
    x = xi * np.exp(logF)
    c = chi(x)
    lam_F = np.exp(fam.lam.logv(t) - logF)
    h = c * lam_F + (1 - c) * lam * xi
    if not with_derivative:
        return h
    dlam = fam.lam.ratio(t, 1)
    dF = fam.F.ratio(t, 1)
    dh = (chi_prime(x) * x * dF * (lam_F - lam * xi)
          + c * lam_F * (dlam - dF) + (1 - c) * lam * dlam * xi)
    return h, dh


def h2(fam, cfg, t, xi, with_derivative=False):
    """``eps p H(x)`` with ``p = rho omega / 2``, ``x = <xi>/(eps p)``, ``H = chi + (1 - chi) x``."""
    eps = cfg.eps
    p, dp = damping_half(fam, t, 1)
    q, _ = band(fam, t, xi)
    x = q / eps
    c = chi(x)
    H = c + (1 - c) * x
    h = eps * p * H
    if not with_derivative:
        return h
    z, dz = z_derivs(fam, t, xi, 1)
    zz = z * z - 1.0
    safe = np.where(q > 0, q, 1.0)
    dq = np.where(q > 0, np.sign(zz) * z * dz / safe, 0.0)
    dH = chi_prime(x) * (1 - x) + (1 - c)
    dH = np.where(x > 0.5, dH, 0.0)
    dh = eps * dp * H + eps * p * dH * dq / eps
    return h, dh


__all__ = ["ZoneConfig", "Tag", "Region", "Zone", "classify", "zone_codes", "separating_times",
           "SeparatingTimes", "omega_threshold", "chi", "chi_prime", "h1", "h2", "eta_trend",
           "t_of_xi", "band", "eval_bracket", "ConfigError", "sample_zone"]


def sample_zone(fam, cfg, tag, n, t_range, seed=0, max_rounds=60):
    """``n`` scrambled-Sobol points ``(t, xi)`` classified as ``tag``.

    Points are drawn in ``(t, log z)`` with a z-window matched to the zone
    and kept in generation order, so the first ``n`` of a ``2n`` draw with
    the same seed are the ``n``-point sample.
    """
    from scipy.stats import qmc

    tag = Tag(tag)
    windows = {
        Tag.HYP: (0.5 * math.log1p(cfg.N ** 2), math.log(1e4)),
        Tag.OSC: (0.5 * math.log1p(cfg.eps ** 2), 0.5 * math.log1p(cfg.N ** 2)),
        Tag.RED: (0.5 * math.log1p(-cfg.eps ** 2), 0.5 * math.log1p(cfg.eps ** 2)),
        Tag.ELL: (math.log(1e-6), 0.5 * math.log1p(-cfg.eps ** 2)),
        Tag.DISS: (math.log(1e-8), 0.0),
        Tag.UNCOVERED: (math.log(1e-8), math.log(1e4)),
    }
    lo, hi = windows[tag]
    t0, t1 = t_range
    eng = qmc.Sobol(d=2, scramble=True, seed=seed)
    ts, xs = [], []
    for _ in range(max_rounds):
        u = eng.random(256)
        t = t0 + (t1 - t0) * u[:, 0]
        lz = lo + (hi - lo) * u[:, 1]
        xi = np.exp(lz + fam.eta.logv(t))
        keep = zone_codes(fam, cfg, t, xi) == int(tag)
        ts.extend(t[keep])
        xs.extend(xi[keep])
        if len(ts) >= n:
            break
    if len(ts) < n:
        raise ValueError(f"zone {TAG_NAMES[tag]} too thin on t in {t_range}: found {len(ts)} of {n} points")
    return np.array(ts[:n]), np.array(xs[:n])

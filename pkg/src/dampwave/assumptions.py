"""Numerical certification of a coefficient family against the admissibility conditions.

Each condition becomes a sampled inequality or a trend test on a time
grid.  Limit statements (divergence, decay to zero) cannot be proven on a
finite horizon; they are evidenced by comparing a quantity at ``T/2`` and
``T`` against ``trend_factor``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .coeffs import _log_tail, cumulative

CONDITIONS = ("A1", "A2", "A3", "A4", "A5", "B1", "B2", "B3", "B4", "B5", "B6")


class ResolutionError(ValueError):
    def __init__(self, msg, bump=None):
        super().__init__(msg)
        self.bump = bump


@dataclass
class ConditionRecord:
    id: str
    passed: bool
    constants: dict
    witness: Optional[tuple] = None
    grid: str = ""
    note: str = ""

    @property
    def status(self):
        return "pass" if self.passed else "fail"


@dataclass
class AssumptionReport:
    records: dict
    horizon: float
    samples: dict = field(default_factory=dict, repr=False)  # id -> (times, per-sample ratio)

    @property
    def passed(self):
        return all(r.passed for r in self.records.values())

    def failed(self):
        return [k for k in CONDITIONS if not self.records[k].passed]

    def __getitem__(self, key):
        return self.records[key]

    def lines(self):
        """One structured-text record per condition."""
        for k in CONDITIONS:
            r = self.records[k]
            consts = ", ".join(f"{a}={_fmt(b)}" for a, b in r.constants.items())
            wit = "" if r.witness is None else f" witness=(t={r.witness[0]:.6g}, value={r.witness[1]:.6g})"
            note = f" note={r.note}" if r.note else ""
            yield f"{k}: {r.status} [{consts}]{wit} grid={r.grid}{note}"


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, (float, int, np.floating)) else str(v)


@dataclass(frozen=True)
class GridSpec:
    n: int = 4000
    per_bump: int = 64
    min_per_bump: int = 8


def build_grid(fam, horizon, spec: GridSpec = GridSpec()):
    """Uniform plus logarithmic samples, densified on each oscillator bump."""
    parts = [np.linspace(0.0, horizon, spec.n // 2), np.geomspace(1e-3, horizon, spec.n // 2)]
    osc = fam.oscillator
    if osc is not None:
        for c, d in zip(osc.centers, osc.widths):
            if c < horizon:
                parts.append(np.linspace(c, min(c + d, horizon), spec.per_bump))
        parts.append(osc.edges(0, horizon))
    g = np.unique(np.concatenate(parts))
    return g[(g >= 0) & (g <= horizon)]


def check_resolution(fam, grid, horizon, min_per_bump=8):
    osc = fam.oscillator
    if osc is None:
        return
    for j, (c, d) in enumerate(zip(osc.centers, osc.widths), start=1):
        if c >= horizon:
            break
        hi = min(c + d, horizon)
        k = int(np.sum((grid >= c) & (grid <= hi)))
        need = max(2, int(math.ceil(min_per_bump * (hi - c) / d)))
        if k < need:
            raise ResolutionError(f"grid has {k} samples on bump {j} (width {d:.4g}); need at least {need}",
                                  bump=j)


def _worst(t, v):
    k = int(np.nanargmax(v))
    return (float(t[k]), float(v[k]))


def _trend(logq, grid, horizon, direction, factor):
    """Compare ``log q`` at T/2 and T; ``direction`` is +1 for growth, -1 for decay."""
    a = float(np.interp(horizon / 2, grid, logq))
    b = float(np.interp(horizon, grid, logq))
    return direction * (b - a) >= math.log(factor), math.exp(direction * (b - a))


# ---------------------------------------------------------------------------
# individual conditions


def _check_A1(fam, g, M):
    t = g[g > 0]
    scale = np.exp(fam.lam.logv(t) - fam.Lam.logv(t))
    r1 = fam.lam.ratio(t, 1)
    consts = {"lambda0": float(np.min(r1 / scale)), "lambda1": float(np.max(r1 / scale))}
    for k in range(1, M + 1):
        consts[f"lambda_{k}"] = float(np.max(np.abs(fam.lam.ratio(t, k)) / scale ** k))
    # Lam must be a primitive of lam
    prim = np.abs(fam.Lam.dphi(t, 1) / scale - 1.0)
    consts["primitive_residual"] = float(np.max(prim))
    consts["Lam(0)-1-int"] = float(np.exp(fam.Lam.logv(0.0)) - 1.0)
    ok_pos = np.all(r1 > 0)
    ok = bool(ok_pos and consts["lambda0"] > 0 and np.all(np.isfinite(list(consts.values())))
              and consts["primitive_residual"] <= 1e-8)
    wit = None
    if not ok_pos:
        k = int(np.argmin(r1))
        wit = (float(t[k]), float(r1[k]))
    elif not ok:
        wit = _worst(t, prim)
    return ok, consts, wit, ""


def _check_A2(fam, g, M, horizon, factor):
    w = fam.omega(g)
    consts = {"c0": float(np.min(w)), "c1": float(np.max(w))}
    lXi = fam.Xi.logv(g)
    for k in range(1, M + 1):
        consts[f"omega_{k}"] = float(np.max(np.abs(fam.omega(g, k)) * np.exp(k * lXi)))
    comp_lo = fam.lam.logv(g) + lXi - fam.Theta.logv(g)
    comp_hi = fam.lam.logv(g) + lXi - fam.Lam.logv(g)
    consts["C1"] = float(np.exp(np.min(comp_lo)))
    consts["C2"] = float(np.exp(np.max(comp_hi)))
    consts["Theta(0)"] = float(np.exp(fam.Theta.logv(0.0)))
    gp = g[g > 0]
    theta_inc = bool(np.all(fam.Theta.dphi(gp, 1) > 0))
    below = fam.Theta.logv(gp) - fam.Lam.logv(gp)
    little_o, f = _trend(fam.Theta.logv(g) - fam.Lam.logv(g), g, horizon, -1, factor)
    consts["Lam/Theta growth T/2->T"] = f
    ok = bool(consts["c0"] > 0 and theta_inc and np.all(below < 0) and little_o
              and np.all(np.isfinite(list(consts.values()))))
    wit = None
    if consts["c0"] <= 0:
        wit = _worst(g, -w)
    elif not np.all(below < 0):
        wit = _worst(gp, below)
    elif not little_o:
        wit = (horizon, float(np.exp(np.interp(horizon, g, fam.Theta.logv(g) - fam.Lam.logv(g)))))
    note = "Theta(0) != 1 treated as a normalisation offset" if abs(consts["Theta(0)"] - 1) > 1e-12 else ""
    return ok, consts, wit, note


def stabilization_ratio(fam, t):
    """``int_0^t lam |omega - 1| / Theta(t)`` for scalar or array ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    if fam.oscillator is None:
        out = np.zeros_like(t)
    else:
        order = np.argsort(t)
        f = lambda x: math.exp(float(fam.lam.logv(x))) * abs(float(fam.omega(x)) - 1.0)  # noqa: E731
        vals = np.empty_like(t)
        vals[order] = cumulative(fam, f, t[order])
        out = vals * np.exp(-fam.Theta.logv(t))
    return out if out.size > 1 else float(out[0])


@dataclass
class MajorantCheck:
    t_next: np.ndarray
    quadrature: np.ndarray
    majorant: np.ndarray

    @property
    def holds(self):
        return bool(np.all(self.quadrature <= self.majorant * (1 + 1e-10)))


def majorant_check(fam, horizon=np.inf):
    """``int_0^{t_{k+1}} lam |omega - 1|`` against ``1/2 sum_{j<=k} eta_j delta_j lam(t_{j+1})``.

    ``t_{k+1}`` is the next bump start; after the last bump the end of its
    support is used.
    """
    osc = fam.oscillator
    if osc is None:
        return MajorantCheck(np.empty(0), np.empty(0), np.empty(0))
    c, d, a = osc.centers, osc.widths, osc.amplitudes
    nxt = np.append(c[1:], c[-1] + d[-1])
    keep = nxt <= horizon
    nxt = nxt[keep]
    f = lambda x: math.exp(float(fam.lam.logv(x))) * abs(float(fam.omega(x)) - 1.0)  # noqa: E731
    quad = cumulative(fam, f, nxt)
    terms = 0.5 * a[keep] * d[keep] * np.exp(fam.lam.logv(nxt))
    return MajorantCheck(nxt, quad, np.cumsum(terms))


def _check_A3(fam, g):
    ratio = stabilization_ratio(fam, g)
    ratio = np.atleast_1d(ratio)
    c3 = float(np.max(ratio))
    ok = bool(np.isfinite(c3))
    return ok, {"C3": c3}, (None if ok else _worst(g, ratio)), "", ratio


def _tail_times(horizon, n=48):
    return np.unique(np.concatenate([[0.0], np.geomspace(1e-2, horizon, n - 1)]))


def _check_A4(fam, M, horizon, factor):
    tt = _tail_times(horizon)
    logf = lambda s: -M * fam.lam.logv(s) - (M + 1) * fam.Xi.logv(s)  # noqa: E731
    lr = np.array([_log_tail(logf, float(s)) + M * float(fam.Theta.logv(s)) for s in tt])
    c4 = float(np.exp(np.max(lr)))
    bounded, f = _trend(lr, tt, horizon, -1, 1.0 / factor)
    ok = bool(np.isfinite(c4) and bounded)
    return ok, {"C4": c4, "growth T/2->T": 1.0 / f}, (None if ok else _worst(tt, lr)), "", (tt, np.exp(lr))


def _check_A5(fam, horizon, factor, g):
    tt = _tail_times(horizon)
    logf = lambda s: -fam.lam.logv(s) - 2 * fam.Xi.logv(s)  # noqa: E731
    res = np.array([abs(_log_tail(logf, float(s)) + float(fam.F.logv(s))) for s in tt])
    grows, f = _trend(fam.F.logv(g), g, horizon, +1, factor)
    ok = bool(np.max(res) <= 1e-6 and grows)
    wit = None if np.max(res) <= 1e-6 else _worst(tt, res)
    if wit is None and not grows:
        wit = (horizon, float(np.exp(fam.F.logv(horizon))))
    return ok, {"log_residual": float(np.max(res)), "F growth T/2->T": f}, wit, "", (tt, res)


def _check_B1(fam, g):
    lr = fam.rho.logv(g)
    resid = np.abs(fam.mu.logv(g) + fam.lam.logv(g) - fam.Lam.logv(g) - lr)
    ok = bool(np.all(np.isfinite(lr)) and np.max(resid) <= 1e-10)
    return ok, {"rho_min": float(np.exp(np.min(lr))), "identity_residual": float(np.max(resid))}, \
        (None if ok else _worst(g, resid)), ""


def _check_B2(fam, g, M):
    t = g[g > 0]
    scale = np.exp(fam.lam.logv(t) - fam.Lam.logv(t))
    consts = {f"mu_{k}": float(np.max(np.abs(fam.mu.ratio(t, k)) / scale ** k)) for k in range(1, M + 1)}
    ok = bool(np.all(np.isfinite(list(consts.values()))))
    return ok, consts, None, ""


def _check_B3(fam, g, horizon, factor):
    d = fam.mu.dphi(g, 1) - fam.Lam.dphi(g, 1)
    mono = bool(np.all(d <= 0) or np.all(d >= 0))
    grows, f = _trend(fam.mu.logv(g), g, horizon, +1, factor)
    ok = mono and grows
    wit = None
    if not mono:
        k = int(np.argmax(np.abs(np.diff(np.sign(d)))))
        wit = (float(g[k]), float(d[k]))
    elif not grows:
        wit = (horizon, float(np.exp(fam.mu.logv(horizon))))
    return ok, {"mu growth T/2->T": f, "mu/Lam monotone": mono}, wit, "divergence evidenced by trend only"


def _check_B4(fam, horizon, factor, g):
    B = cumulative(fam, lambda x: math.exp(2 * float(fam.lam.logv(x)) - float(fam.rho.logv(x))), g)
    with np.errstate(divide="ignore"):
        lB = np.log(B)
    grows, f = _trend(np.where(np.isfinite(lB), lB, -745.0), g, horizon, +1, factor)
    wit = None if grows else (horizon, float(B[-1]))
    return grows, {"B_lam(0,T)": float(B[-1]), "growth T/2->T": f}, wit, \
        "non-integrability evidenced by trend only", B


def _b5_ratio(fam, g):
    from .coeffs import damping_half

    p, dp = damping_half(fam, g, 1)
    return np.abs(dp) / (2 * p * p)


def _check_B5(fam, g, horizon, factor):
    r = _b5_ratio(fam, g)
    early = (g >= horizon / 4) & (g <= horizon / 2)
    late = g >= horizon / 2
    e, l_ = float(np.max(r[early])), float(np.max(r[late]))
    ok = bool(l_ <= 1e-12 or l_ * factor <= e)
    aux, f = _trend(fam.mu.logv(g) + fam.Theta.logv(g) - fam.Lam.logv(g), g, horizon, +1, factor)
    consts = {"sup ratio [T/4,T/2]": e, "sup ratio [T/2,T]": l_, "mu Theta/Lam growth T/2->T": f}
    note = "decay to zero evidenced by trend only; mu Theta/Lam growth reported, not gating"
    if not aux:
        note += " (below trend factor)"
    return ok, consts, (None if ok else _worst(g[late], r[late])), note, r


def _check_B6(fam, g, B, horizon, factor):
    ratio = B * np.exp(-2 * fam.F.logv(g))
    c5 = float(np.max(ratio))
    a = float(np.interp(horizon / 2, g, ratio))
    b = float(ratio[-1])
    bounded = b <= factor * max(a, 1e-300)
    ok = bool(np.isfinite(c5) and bounded)
    return ok, {"C5": c5, "growth T/2->T": b / a if a > 0 else math.inf}, \
        (None if ok else (horizon, b)), "", ratio


def check_all(fam, horizon, grid=None, trend_factor=1.5):
    """Check every condition on ``[0, horizon]``.

    ``grid`` may be a ``GridSpec`` or an explicit array of times; explicit
    grids must put at least 8 samples on each oscillator bump.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if grid is None or isinstance(grid, GridSpec):
        g = build_grid(fam, horizon, grid or GridSpec())
        desc = f"{g.size} points on [0, {horizon:g}] (uniform + log + bump-dense)"
    else:
        g = np.unique(np.asarray(grid, dtype=float))
        if g[0] < 0 or g[-1] > horizon * (1 + 1e-12):
            raise ValueError("grid must lie in [0, horizon]")
        if g[-1] < horizon:
            g = np.append(g, horizon)
        desc = f"{g.size} user points on [0, {horizon:g}]"
    check_resolution(fam, g, horizon)
    M = fam.M
    rec, samples = {}, {}

    def put(cid, ok, consts, wit, note):
        rec[cid] = ConditionRecord(cid, bool(ok), consts, wit, desc, note)

    put("A1", *_check_A1(fam, g, M))
    put("A2", *_check_A2(fam, g, M, horizon, trend_factor))
    ok, c, w, n, samples["A3"] = _check_A3(fam, g)
    put("A3", ok, c, w, n)
    ok, c, w, n, samples["A4"] = _check_A4(fam, M, horizon, trend_factor)
    put("A4", ok, c, w, n)
    ok, c, w, n, samples["A5"] = _check_A5(fam, horizon, trend_factor, g)
    put("A5", ok, c, w, n)
    put("B1", *_check_B1(fam, g))
    put("B2", *_check_B2(fam, g, M))
    put("B3", *_check_B3(fam, g, horizon, trend_factor))
    ok, c, w, n, B = _check_B4(fam, horizon, trend_factor, g)
    put("B4", ok, c, w, n)
    ok, c, w, n, samples["B5"] = _check_B5(fam, g, horizon, trend_factor)
    put("B5", ok, c, w, n)
    ok, c, w, n, samples["B6"] = _check_B6(fam, g, B, horizon, trend_factor)
    put("B6", ok, c, w, n)
    samples = {k: (v if isinstance(v, tuple) else (g, v)) for k, v in samples.items()}
    return AssumptionReport(rec, float(horizon), samples)

"""Batched Dormand-Prince 5(4) for linear matrix ODEs ``Y' = B(t) Y``.

Every batch member carries its own time, step size and list of output
times, so one call can integrate hundreds of frequencies at once.  Steps
are clipped so output times are hit exactly (no dense output).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


class StepUnderflow(RuntimeError):
    def __init__(self, msg, t=None, index=None):
        super().__init__(msg)
        self.t = t
        self.index = index


@dataclass
class SolveStats:
    accepted: np.ndarray
    rejected: np.ndarray


def dopri_linear(mat, Y0, t0, t_eval, rtol=1e-10, atol=1e-300, hmax=None, drop_below=None,
                 max_steps=2_000_000, h0=None):
    """Integrate ``Y' = mat(t, idx) @ Y`` for a batch.

    mat     callable ``(t[idx], idx) -> (len(idx), d, d)`` complex/real array
    Y0      (B, d, c) initial values
    t0      (B,) start times
    t_eval  (B, K) or (K,) non-decreasing output times, each >= t0
    hmax    optional callable ``(t[idx], idx) -> (len(idx),)`` step cap
    drop_below  scalar or (B,) thresholds; a member stops once max|Y| falls
            under its threshold and its remaining outputs repeat the last state

    Returns ``(out, stats)`` with ``out`` of shape (B, K, d, c).
    """
    Y = np.array(Y0, dtype=complex)
    B = Y.shape[0]
    t = np.broadcast_to(np.asarray(t0, dtype=float), (B,)).copy()
    te = np.asarray(t_eval, dtype=float)
    if te.ndim == 1:
        te = np.broadcast_to(te, (B, te.size))
    K = te.shape[1]
    if np.any(te < t[:, None] - 1e-15 * np.maximum(1, np.abs(t[:, None]))):
        raise ValueError("output times must not precede the start time")
    if np.any(np.diff(te, axis=1) < 0):
        raise ValueError("output times must be non-decreasing")

    out = np.empty((B, K) + Y.shape[1:], dtype=complex)
    ptr = np.zeros(B, dtype=int)
    # outputs at the start time
    for b in range(B):
        while ptr[b] < K and te[b, ptr[b]] <= t[b]:
            out[b, ptr[b]] = Y[b]
            ptr[b] += 1
    active = ptr < K

    span = np.where(active, te[np.arange(B), np.minimum(ptr, K - 1)] - t, 0.0)
    h = np.full(B, 1e-3) if h0 is None else np.broadcast_to(np.asarray(h0, float), (B,)).copy()
    h = np.minimum(h, np.where(span > 0, span, 1.0))
    err_prev = np.full(B, 1e-4)
    acc = np.zeros(B, dtype=int)
    rej = np.zeros(B, dtype=int)
    k1_cache = np.zeros_like(Y)
    have_k1 = np.zeros(B, dtype=bool)
    steps = 0
    if drop_below is not None:
        drop_below = np.broadcast_to(np.asarray(drop_below, dtype=float), (B,))

    while np.any(active):
        steps += 1
        if steps > max_steps:
            i = int(np.flatnonzero(active)[0])
            raise StepUnderflow(f"step budget exhausted at t={t[i]:.6g}", t=float(t[i]), index=i)
        idx = np.flatnonzero(active)
        ta = t[idx]
        target = te[idx, ptr[idx]]
        ha = h[idx]
        if hmax is not None:
            ha = np.minimum(ha, hmax(ta, idx))
        clip = ha >= target - ta
        ha = np.where(clip, target - ta, ha)
        tiny = ha < 1e-14 * np.maximum(1.0, np.abs(ta))
        if np.any(tiny & ~clip):
            i = int(idx[np.flatnonzero(tiny & ~clip)[0]])
            raise StepUnderflow(
                f"step size underflow at t={t[i]:.6g}; the system is too stiff or oscillatory here",
                t=float(t[i]), index=i)
        Ya = Y[idx]
        hb = ha[:, None, None]
        ks = [None] * 7
        k1 = np.where(have_k1[idx][:, None, None], k1_cache[idx], 0)
        fresh = ~have_k1[idx]
        if np.any(fresh):
            k1[fresh] = mat(ta[fresh], idx[fresh]) @ Ya[fresh]
        ks[0] = k1
        for s in range(1, 7):
            acc_s = Ya.copy()
            for j, a in enumerate(_A[s]):
                if a != 0.0:
                    acc_s = acc_s + hb * a * ks[j]
            ks[s] = mat(ta + _C[s] * ha, idx) @ acc_s
        Ynew = Ya + hb * sum(_B5[j] * ks[j] for j in range(6) if _B5[j] != 0.0)
        Err = hb * sum(_E[j] * ks[j] for j in range(7) if _E[j] != 0.0)
        # norm-wise relative control: propagators may decay by many orders
        size = np.maximum(np.max(np.abs(Ya), axis=(1, 2)), np.max(np.abs(Ynew), axis=(1, 2)))
        err = np.max(np.abs(Err), axis=(1, 2)) / (atol + rtol * size)
        err = np.where(np.isfinite(err), err, np.inf)
        ok = err <= 1.0

        # PI controller
        e = np.maximum(err, 1e-10)
        fac = np.where(ok, 0.9 * e ** (-0.7 / 5) * err_prev[idx] ** (0.4 / 5), 0.9 * e ** (-1 / 5))
        fac = np.clip(fac, 0.2, 5.0)
        fac = np.where(ok, fac, np.minimum(fac, 1.0))
        ok_idx = idx[ok]
        bad_idx = idx[~ok]
        rej[bad_idx] += 1
        have_k1[bad_idx] = True
        k1_cache[bad_idx] = k1[~ok]
        # clipped steps do not shrink the nominal step
        hnew = np.where(clip & ok, np.maximum(h[idx], ha * fac), ha * fac)
        h[idx] = hnew
        if ok_idx.size:
            acc[ok_idx] += 1
            Y[ok_idx] = Ynew[ok]
            t[ok_idx] = np.where(clip[ok], target[ok], ta[ok] + ha[ok])
            err_prev[ok_idx] = np.maximum(err[ok], 1e-4)
            k1_cache[ok_idx] = ks[6][ok]
            have_k1[ok_idx] = True
            hit = ok_idx[clip[ok]]
            for b in hit:
                while ptr[b] < K and te[b, ptr[b]] <= t[b]:
                    out[b, ptr[b]] = Y[b]
                    ptr[b] += 1
            if drop_below is not None:
                small = ok_idx[np.max(np.abs(Y[ok_idx]), axis=(1, 2)) < drop_below[ok_idx]]
                for b in small:
                    out[b, ptr[b]:] = Y[b]
                    ptr[b] = K
            active = ptr < K
    return out, SolveStats(acc, rej)


def rk4_linear_oracle(mat_points, t0, t1, nsteps, d=2, chunk=1 << 16):
    """Fixed-step classical RK4 for ``Y' = B(t) Y`` from ``Y(t0) = I``.

    Uses linearity: each step is the matrix polynomial ``P_k`` in the three
    stage matrices, and the propagator is the ordered product of all
    ``P_k``, reduced pairwise.  ``mat_points(times) -> (len, d, d)``.
    """
    h = (t1 - t0) / nsteps
    total = np.eye(d, dtype=complex)
    I = np.eye(d, dtype=complex)
    for start in range(0, nsteps, chunk):
        n = min(chunk, nsteps - start)
        k = np.arange(start, start + n)
        tk = t0 + k * h
        B1 = mat_points(tk)
        B2 = mat_points(tk + h / 2)
        B3 = mat_points(tk + h)
        K1 = B1
        K2 = B2 @ (I + (h / 2) * K1)
        K3 = B2 @ (I + (h / 2) * K2)
        K4 = B3 @ (I + h * K3)
        P = I + (h / 6) * (K1 + 2 * K2 + 2 * K3 + K4)
        total = _ordered_product(P) @ total
    return total


def _ordered_product(P):
    """``P[n-1] @ ... @ P[0]`` by pairwise reduction."""
    while P.shape[0] > 1:
        if P.shape[0] % 2:
            P = np.concatenate([P, np.eye(P.shape[1], dtype=P.dtype)[None]], axis=0)
        P = P[1::2] @ P[0::2]
    return P[0]

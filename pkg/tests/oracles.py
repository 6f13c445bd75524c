"""Slow, independent reference implementations used only by the tests."""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import brentq


def wm1_oracle(x: float) -> float:
    """W_{-1}(x) by bracketing w e^w = x on [-700, -1], then two Newton steps."""
    if x <= -math.exp(-1.0):
        return -1.0
    w = brentq(lambda w: w * math.exp(w) - x, -700.0, -1.0, xtol=1e-300, rtol=8.9e-16, maxiter=2000)
    for _ in range(2):
        ew = math.exp(w)
        d = ew * (w + 1.0)
        if d == 0.0:
            break
        w -= (w * ew - x) / d
    return w


def rate_bits(x, A, B, N0):
    """B x log2(1 + A/(x N0)), written out independently of the package."""
    x = np.asarray(x, dtype=float)
    return B * x * np.log1p(A / (x * N0)) / math.log(2.0)


def bisect_upload_times(A, bits, B, N0, iters: int = 200) -> np.ndarray:
    """Vectorized geometric bisection for B x log2(1 + A/(x N0)) = bits.

    Returns ``inf`` where the asymptote ``A B/(N0 ln2)`` does not exceed ``bits``.
    """
    A = np.asarray(A, dtype=float)
    bits = np.broadcast_to(np.asarray(bits, dtype=float), A.shape)
    out = np.full(A.shape, np.inf)
    ok = A * B / (N0 * math.log(2.0)) > bits
    if not np.any(ok):
        return out
    a, b = A[ok], bits[ok]
    lo = np.full(a.shape, 1e-300)
    hi = b / B
    # grow the upper end until the rate reaches the target
    for _ in range(2000):
        short = rate_bits(hi, a, B, N0) < b
        if not np.any(short):
            break
        hi = np.where(short, hi * 4.0, hi)
    for _ in range(iters):
        mid = np.where(hi > 4.0 * lo, np.sqrt(lo * hi), 0.5 * (lo + hi))
        above = rate_bits(mid, a, B, N0) >= b
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    out[ok] = hi
    return out


def brute_schedule(tau_tilde, D, rho):
    """Minimum of sum(a*tau) over all 2^K schedules excluding at most rho samples."""
    t = np.asarray(tau_tilde, dtype=float)
    D = np.asarray(D, dtype=float)
    best, best_a = math.inf, None
    for bits in itertools.product((0, 1), repeat=t.size):
        a = np.array(bits, dtype=bool)
        if D[~a].sum() > rho * (1 + 1e-12):
            continue
        if np.any(a & ~np.isfinite(t)):
            continue
        val = float(t[a].sum())
        if val < best:
            best, best_a = val, a
    return best, best_a


def brute_tdma(gains, D, CD, E_max, B, N0, bits, xi, rho, n_grid: int = 10_000):
    """Exhaustive schedules x uniform tau_loc grid on (0, hi].

    ``hi`` is the smallest latency found on a coarse logarithmic probe, which
    bounds the optimal local time. Returns ``(best latency, grid step)``.
    """
    gains, D, CD, E_max = (np.asarray(v, dtype=float) for v in (gains, D, CD, E_max))

    def times(taus):
        E = E_max[None, :] - xi * CD[None, :] ** 3 / taus[:, None] ** 2
        A = np.where(E > 0, E, 0.0) * gains[None, :]
        return bisect_upload_times(A, bits, B, N0, iters=120)

    masks = [np.array(m, dtype=bool) for m in itertools.product((0, 1), repeat=D.size)]
    masks = [m for m in masks if D[~m].sum() <= rho * (1 + 1e-12)]

    def best_over(taus):
        T = times(taus)
        best = np.full(taus.size, np.inf)
        for m in masks:
            if not m.any():
                best = np.minimum(best, 0.0)
                continue
            best = np.minimum(best, taus + T[:, m].sum(axis=1))
        return best

    probe = np.logspace(-7, 2, 400)
    hi = float(np.min(best_over(probe)))
    if not math.isfinite(hi):
        return math.inf, math.nan
    grid = np.linspace(hi / n_grid, hi, n_grid)
    return float(np.min(best_over(grid))), hi / n_grid

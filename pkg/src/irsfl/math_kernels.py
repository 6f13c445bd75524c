"""Special functions and scalar root/minimum finders used by the solvers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import BracketError, DomainError

INV_E = math.exp(-1.0)
_E = math.e


def _wm1_initial(x: np.ndarray) -> np.ndarray:
    w = np.empty_like(x)
    near = x < -0.25
    if np.any(near):
        # series about the branch point in p = -sqrt(2(1 + e x))
        p = -np.sqrt(np.maximum(2.0 * (1.0 + _E * x[near]), 0.0))
        w[near] = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    far = ~near
    if np.any(far):
        l1 = np.log(-x[far])
        l2 = np.log(-l1)
        w[far] = l1 - l2 + l2 / l1
    return w


def lambert_w_m1(x):
    """Lower real branch W_{-1} of the inverse of ``w * exp(w)``.

    Accepts a scalar or an array with every entry in ``[-1/e, 0)`` and
    returns ``w <= -1`` with ``w * exp(w) == x``. Values below ``-1/e`` by
    no more than a few ulps are treated as the branch point.
    """
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.any(~np.isfinite(arr)) or np.any(arr >= 0.0) or np.any(arr < -INV_E * (1.0 + 8e-16)):
        raise DomainError("lambert_w_m1 is defined on [-1/e, 0)")
    xs = np.maximum(arr, -INV_E)
    w = _wm1_initial(xs)
    branch = xs <= -INV_E
    w[branch] = -1.0
    # converged entries take (near) zero steps, so iterate on the whole array
    for _ in range(64):
        ew = np.exp(w)
        f = w * ew - xs
        wp1 = w + 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
            step = np.where(denom != 0.0, f / denom, 0.0)
        w_new = np.minimum(w - step, -1.0)
        w_new[branch] = -1.0
        done = bool(np.all(np.abs(w_new - w) <= 4e-16 * np.abs(w_new)))
        w = w_new
        if done:
            break
    return float(w[0]) if scalar else w.reshape(np.shape(x))


# Taylor coefficients of W about the branch point in p = -sqrt(2(1 + e x))
_BRANCH_SERIES = (
    -1.0,
    1.0,
    -1.0 / 3.0,
    11.0 / 72.0,
    -43.0 / 540.0,
    769.0 / 17280.0,
    -221.0 / 8505.0,
    680863.0 / 43545600.0,
    -1963.0 / 204120.0,
    226287557.0 / 37623398400.0,
)
_SERIES_P_MAX = 0.03


def lambert_w_m1_branch(eta):
    """W_{-1}(x) given ``eta = 1 + e*x`` computed by the caller.

    Close to the branch point ``x = -1/e`` the argument itself cannot carry
    enough digits, so callers that can form ``eta`` without cancellation get
    a result whose error no longer grows like ``1/sqrt(eta)``.
    """
    eta_arr = np.asarray(eta, dtype=float)
    scalar = eta_arr.ndim == 0
    eta_arr = np.atleast_1d(eta_arr)
    if np.any(~np.isfinite(eta_arr)) or np.any(eta_arr < 0.0) or np.any(eta_arr >= 1.0):
        raise DomainError("branch offset must lie in [0, 1)")
    p = -np.sqrt(2.0 * eta_arr)
    out = np.empty_like(eta_arr)
    near = -p <= _SERIES_P_MAX
    if np.any(near):
        pn = p[near]
        acc = np.zeros_like(pn)
        for coef in reversed(_BRANCH_SERIES):
            acc = acc * pn + coef
        out[near] = acc
    if np.any(~near):
        out[~near] = lambert_w_m1((eta_arr[~near] - 1.0) * INV_E)
    return float(out[0]) if scalar else out.reshape(np.shape(eta))


@dataclass(frozen=True)
class BracketedRootProblem:
    """Find ``x`` in ``[lo, hi]`` with ``evaluator(x) == target``.

    ``evaluator`` must be strictly monotone on the bracket and
    ``evaluator(x) - target`` must change sign between the endpoints.
    """

    evaluator: Callable[[float], float]
    target: float
    lo: float
    hi: float
    tol: float = 1e-12


def solve_monotone(p: BracketedRootProblem, max_iter: int = 4000) -> float:
    """Bisection to full floating-point resolution.

    Midpoints are geometric while the bracket spans more than a factor of
    four on the positive axis, so brackets such as ``[1e-12, 1e3]`` cost
    about as much as a unit-width one.
    """
    lo, hi = float(p.lo), float(p.hi)
    if not lo <= hi:
        raise BracketError(f"empty bracket [{lo}, {hi}]")
    f_lo = p.evaluator(lo) - p.target
    f_hi = p.evaluator(hi) - p.target
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if (f_lo > 0) == (f_hi > 0):
        raise BracketError(
            f"no sign change on [{lo}, {hi}]: residuals {f_lo:.3e}, {f_hi:.3e}"
        )
    increasing = f_hi > 0
    for _ in range(max_iter):
        if lo > 0.0 and hi > 4.0 * lo:
            mid = math.sqrt(lo * hi)
        else:
            mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f_mid = p.evaluator(mid) - p.target
        if f_mid == 0.0:
            return mid
        if (f_mid > 0) == increasing:
            hi = mid
        else:
            lo = mid
    f_lo = abs(p.evaluator(lo) - p.target)
    f_hi = abs(p.evaluator(hi) - p.target)
    return lo if f_lo <= f_hi else hi


def minimize_unimodal(
    f_vec: Callable[[np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    *,
    points: int = 24,
    rtol: float = 1e-12,
    max_rounds: int = 60,
    log_scale: bool = True,
) -> tuple[float, float]:
    """Zooming grid search for a unimodal function on ``[lo, hi]``.

    ``f_vec`` evaluates a whole array of abscissae at once and may return
    ``inf`` where the point is infeasible. Each round keeps the two grid
    cells around the current best point, so the bracket shrinks by a
    factor of ``(points - 1) / 2`` per round. Returns ``(x, f(x))``.
    """
    if hi < lo:
        raise BracketError(f"empty bracket [{lo}, {hi}]")
    use_log = log_scale and lo > 0.0
    a, b = (math.log(lo), math.log(hi)) if use_log else (lo, hi)
    best_x, best_f = hi, math.inf
    for _ in range(max_rounds):
        grid = np.linspace(a, b, points)
        xs = np.exp(grid) if use_log else grid
        vals = np.asarray(f_vec(xs), dtype=float)
        i = int(np.argmin(vals))
        if vals[i] <= best_f:
            best_x, best_f = float(xs[i]), float(vals[i])
        if not math.isfinite(vals[i]):
            # everything infeasible; keep the right end (feasibility grows with x)
            a = grid[-2]
            if b - a <= rtol * max(1.0, abs(b)):
                break
            continue
        a_new = grid[max(i - 1, 0)]
        b_new = grid[min(i + 1, points - 1)]
        width = (b_new - a_new) if use_log else (b_new - a_new) / max(abs(xs[i]), 1e-300)
        a, b = a_new, b_new
        if width <= rtol:
            break
    return best_x, best_f

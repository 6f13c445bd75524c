"""Shared IRS phase patterns for protocols in which all devices see one pattern."""

from __future__ import annotations

import numpy as np

from .channel import ChannelRealization


def weighted_alignment(cascade: np.ndarray, h_d: np.ndarray, v_bar: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Unit-modulus maximizer of the linearized weighted gain sum.

    With ``a_k = h_d,k + cascade_k @ v_bar`` the tangent of
    ``sum_k w_k |h_d,k + cascade_k @ v|^2`` is affine in ``v`` and is
    maximized element-wise by ``v_n = exp(j arg sum_k w_k a_k conj(c_kn))``.
    """
    a = h_d + cascade @ v_bar
    z = (weights * a) @ np.conj(cascade)
    v = np.exp(1j * np.angle(z))
    # elements no device can use keep their previous phase
    dead = np.abs(z) == 0
    v[dead] = v_bar[dead]
    return v


def sum_gain_phase_opt(
    realization: ChannelRealization,
    scheduled,
    energies,
    v_init: np.ndarray | None = None,
    rtol: float = 1e-8,
    max_iter: int = 500,
) -> np.ndarray:
    """Shared pattern maximizing ``sum_k E_k |h_k(v)|^2`` over the scheduled devices.

    Minorize-maximize: every update maximizes the tangent lower bound at the
    current point, so the objective never decreases. Without ``v_init`` the
    start is the energy- and gain-weighted combination of the devices'
    individually aligned patterns, which is already optimal for one device.
    """
    v, _ = sum_gain_trace(realization, scheduled, energies, v_init, rtol, max_iter)
    return v


def sum_gain_trace(realization, scheduled, energies, v_init=None, rtol=1e-8, max_iter=500):
    idx = np.asarray(scheduled, dtype=int)
    if idx.size == 0:
        raise ValueError("sum_gain_phase_opt needs at least one scheduled device")
    c = realization.cascade[idx]
    hd = realization.h_direct[idx]
    # energies: a scalar or one entry per device of the realization
    E = np.asarray(energies, dtype=float)
    E = np.full(idx.size, float(E)) if E.ndim == 0 else E[idx]
    if v_init is None:
        ref = np.where(hd != 0, np.angle(hd), 0.0)
        ideal = np.exp(1j * (ref[:, None] - np.angle(c)))
        mag = np.abs(hd) + np.abs(c).sum(axis=1)
        z = (E * mag) @ ideal
        v = np.exp(1j * np.angle(z))
    else:
        v = np.asarray(v_init, dtype=complex).copy()

    def objective(v):
        return float(np.sum(E * np.abs(hd + c @ v) ** 2))

    obj = objective(v)
    trace = [obj]
    for _ in range(max_iter):
        v_new = weighted_alignment(c, hd, v, E)
        new = objective(v_new)
        if new < obj:
            break
        v = v_new
        trace.append(new)
        if new - obj <= rtol * max(new, 1e-300):
            break
        obj = new
    return v, trace


def fair_phase_opt(realization: ChannelRealization, scheduled, v_init=None, rtol=1e-8, max_iter=500) -> np.ndarray:
    """Shared pattern maximizing ``sum_k log |h_k(v)|^2`` (proportional fairness).

    Fixed-point iteration of the weighted alignment with weights
    ``1 / |a_k|^2`` (the log-sum's tangent weights); it stops as soon as an
    update would lower the objective. Useful when the sum-gain pattern
    starves some devices.
    """
    idx = np.asarray(scheduled, dtype=int)
    c = realization.cascade[idx]
    hd = realization.h_direct[idx]
    v = sum_gain_phase_opt(realization, idx, 1.0, max_iter=0) if v_init is None else np.asarray(v_init, complex)

    def objective(v):
        with np.errstate(divide="ignore"):
            return float(np.sum(np.log(np.abs(hd + c @ v) ** 2)))

    obj = objective(v)
    for _ in range(max_iter):
        g = np.abs(hd + c @ v) ** 2
        v_new = weighted_alignment(c, hd, v, 1.0 / np.maximum(g, 1e-300))
        new = objective(v_new)
        if not new >= obj:
            break
        v = v_new
        if new - obj <= rtol * max(abs(new), 1.0):
            break
        obj = new
    return v


def maxmin_phase_opt(
    realization: ChannelRealization,
    scheduled,
    weights,
    v_init: np.ndarray | None = None,
    beta: float = 20.0,
    rtol: float = 1e-9,
    max_iter: int = 300,
) -> np.ndarray:
    """Shared pattern (approximately) maximizing ``min_k w_k |h_k(v)|^2``.

    Ascent on the phases of the soft minimum ``-log(sum_k x_k^-beta) / beta``
    with ``x_k = w_k |h_k(v)|^2``, using a backtracking step so the soft
    minimum never decreases. Starts from the proportional-fair pattern
    unless ``v_init`` is given.
    """
    idx = np.asarray(scheduled, dtype=int)
    c = realization.cascade[idx]
    hd = realization.h_direct[idx]
    w = np.asarray(weights, dtype=float)
    w = np.full(idx.size, float(w)) if w.ndim == 0 else w[idx]
    v = fair_phase_opt(realization, idx) if v_init is None else np.asarray(v_init, complex)

    def log_gains(theta):
        y = hd + c @ np.exp(1j * theta)
        return y, np.log(np.maximum(w * np.abs(y) ** 2, 1e-300))

    def softmin(lx):
        m = lx.min()
        return m - np.log(np.sum(np.exp(-beta * (lx - m)))) / beta

    theta = np.angle(v)
    y, lx = log_gains(theta)
    f, step = softmin(lx), 0.5
    for _ in range(max_iter):
        p = np.exp(-beta * (lx - lx.min()))
        p /= p.sum()
        # d log x_k / d theta_n = 2 Re(j conj(y_k) c_kn v_n) / |y_k|^2
        grad = 2 * np.real(1j * np.exp(1j * theta) * ((p * np.conj(y) / np.maximum(np.abs(y) ** 2, 1e-300)) @ c))
        scale = np.abs(grad).max()
        if scale == 0:
            break
        while step > 1e-8:
            cand = theta + step * grad / scale
            y_new, lx_new = log_gains(cand)
            f_new = softmin(lx_new)
            if f_new > f:
                break
            step *= 0.5
        else:
            break
        gain = f_new - f
        theta, y, lx, f = cand, y_new, lx_new, f_new
        step = min(2 * step, 1.0)
        if gain <= rtol * max(abs(f), 1.0):
            break
    return np.exp(1j * theta)

"""I-FDMA: one shared IRS pattern, bandwidth split among scheduled devices.

For fixed phases the bandwidth split is closed form and the total upload
time equals the TDMA total computed with the same gains, so the phase
optimization is the only coupled step. It is handled by successive convex
approximation with an acceptance rule that keeps the latency trace
monotone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .channel import ChannelRealization
from .errors import InfeasibleError
from .phases import fair_phase_opt, maxmin_phase_opt, sum_gain_phase_opt, weighted_alignment
from .system import (
    DeviceArrays,
    DeviceProfile,
    Protocol,
    ProtocolSolution,
    Schedule,
    SystemParams,
)
from .tdma import (
    align_phases,
    solve_upload_times,
    tdma_from_gains,
    tdma_latency_for,
    upload_time_slope,
)

_STEPS = 0.5 ** np.arange(7)


@dataclass
class ScaState:
    """Linearization point of the phase subproblem at a fixed local time."""

    v: np.ndarray
    energies: np.ndarray
    tau_loc: float
    trace: list = field(default_factory=list)

    def __post_init__(self):
        if np.max(np.abs(np.abs(self.v) - 1.0), initial=0.0) > 1e-9:
            raise ValueError("SCA point must have unit-modulus phases")


def surrogate_gain(v, E, v_bar, E_bar, cascade, h_d) -> float:
    """Tangent lower bound of ``E |h_d + cascade @ v|^2`` in ``(v, 1/E)`` at ``(v_bar, E_bar)``.

    ``|a|^2 / t`` is jointly convex in ``(a, t)``, so its first-order expansion
    at ``(a_bar, 1/E_bar)`` never exceeds it:
    ``2 E_bar Re(conj(a_bar) a) - E_bar^2 |a_bar|^2 / E``.
    """
    a_bar = h_d + cascade @ v_bar
    a = h_d + cascade @ v
    return float(2.0 * E_bar * np.real(np.conj(a_bar) * a) - E_bar ** 2 * abs(a_bar) ** 2 / E)


def inner_allocation(gains, energies, params: SystemParams) -> tuple[np.ndarray, float]:
    """Per-device occupancy ``e_k = b_k tau_F`` and the shared upload time ``tau_F``."""
    A = np.asarray(energies, dtype=float) * np.asarray(gains, dtype=float)
    if np.any(A <= params.energy_gain_floor):
        raise InfeasibleError("a scheduled device cannot deliver the model at any upload time")
    e = np.atleast_1d(solve_upload_times(A, params.model_bits, params))
    return e, float(e.sum())


def _latency_at(v_batch, state_E, tau, c, hd, params):
    """Fixed-tau latencies for a batch of phase vectors (rows)."""
    Y = state_E * np.abs(hd + v_batch @ c.T) ** 2
    T = solve_upload_times(Y, params.model_bits, params)
    return tau + T.sum(axis=-1)


def sca_phase_step(state: ScaState, scheduled, realization: ChannelRealization, params: SystemParams):
    """One SCA update of the shared phases at fixed local time and energies.

    Weights ``w_k = -d e_k / d Y_k`` turn the latency's tangent into a
    weighted gain sum, whose surrogate maximizer is a per-element alignment.
    The projected point is blended back toward ``v_bar`` with halving steps
    and the best candidate is kept only if the latency drops. Returns
    ``(state, accepted)``.
    """
    idx = np.asarray(scheduled, dtype=int)
    c, hd = realization.cascade[idx], realization.h_direct[idx]
    E = state.energies[idx]
    a = hd + c @ state.v
    Y = E * np.abs(a) ** 2
    T = solve_upload_times(Y, params.model_bits, params)
    current = state.tau_loc + float(T.sum())
    if not state.trace:
        state.trace.append(current)
    if not math.isfinite(current):
        return state, False
    w = -upload_time_slope(T, Y, params)
    v_star = weighted_alignment(c, hd, state.v, w * E)
    blend = (1 - _STEPS)[:, None] * state.v[None, :] + _STEPS[:, None] * v_star[None, :]
    mag = np.abs(blend)
    cand = np.where(mag > 0, blend / np.where(mag > 0, mag, 1.0), v_star[None, :])
    lat = _latency_at(cand, E, state.tau_loc, c, hd, params)
    j = int(np.argmin(lat))
    if lat[j] < current:
        state.v = cand[j]
        state.trace.append(float(lat[j]))
        return state, True
    return state, False


def coordinate_descent_schedule(
    evaluate: Callable[[Schedule], float],
    D,
    rho: float,
    start: Schedule | None = None,
) -> Schedule:
    """Greedy single-flip descent over schedules.

    Every round evaluates all flips that keep the excluded data within
    ``rho`` and applies the one with the lowest latency, provided it is a
    strict improvement.
    """
    D = np.asarray(D, dtype=float)
    sched = start if start is not None else Schedule.full(D.size)
    cur = evaluate(sched)
    while True:
        best, best_val = None, cur
        for k in range(D.size):
            cand = sched.flip(k)
            if cand.excluded_samples(D) > rho:
                continue
            val = evaluate(cand)
            if val < best_val * (1 - 1e-12) or (math.isinf(best_val) and math.isfinite(val)):
                best, best_val = cand, val
        if best is None:
            return sched
        sched, cur = best, best_val


@dataclass
class _Plan:
    schedule: Schedule
    v: np.ndarray
    tau_loc: float
    latency: float
    trace: list


class FdmaSolver:
    """Memoized fixed-schedule solves shared by the descent and the polish steps."""

    def __init__(self, realization, devices, params, rho, sca_tol=1e-6, sca_iter=100):
        self.r = realization
        self.devices = list(devices)
        self.dev = DeviceArrays.of(devices)
        self.params = params
        self.rho = float(rho)
        self.sca_tol = sca_tol
        self.sca_iter = sca_iter
        self.cache: dict[Schedule, _Plan] = {}
        self.v_start = None

    def gains(self, v):
        return self.r.gains(v)

    def fixed_schedule(self, sched: Schedule, v0: np.ndarray) -> _Plan:
        """Alternate an exact local-time search with SCA phase updates."""
        if sched.is_empty():
            return _Plan(sched, v0, 0.0, 0.0, [0.0])
        idx = np.flatnonzero(sched.as_array())
        v = v0.copy()
        tau, lat = tdma_latency_for(self.gains(v), self.dev, self.params, sched)
        trace = [lat]
        if not math.isfinite(lat):
            return _Plan(sched, v, tau, math.inf, trace)
        for _ in range(50):
            start = trace[-1]
            state = ScaState(v, self.dev.upload_energy(tau, self.params), tau, [start])
            for _ in range(self.sca_iter):
                prev = state.trace[-1]
                state, ok = sca_phase_step(state, idx, self.r, self.params)
                if not ok or prev - state.trace[-1] <= self.sca_tol * prev:
                    break
            trace.extend(state.trace[1:])
            v = state.v
            new_tau, new_lat = tdma_latency_for(self.gains(v), self.dev, self.params, sched)
            if new_lat < trace[-1]:
                tau = new_tau
                trace.append(new_lat)
            if start - trace[-1] <= self.sca_tol * start:
                break
        return _Plan(sched, v, tau, trace[-1], trace)

    def evaluate(self, sched: Schedule) -> float:
        if sched not in self.cache:
            self.cache[sched] = self.fixed_schedule(sched, self.v_start)
        return self.cache[sched].latency

    def descend(self, v0, start: Schedule | None = None) -> _Plan:
        self.v_start = v0
        start = start if start is not None else Schedule.full(self.r.K)
        if not math.isfinite(self.evaluate(start)):
            # some device cannot upload under v0; let the exact fixed-phase
            # scheduler pick a feasible starting point
            try:
                start = tdma_from_gains(self.gains(v0), self.dev, self.params, self.rho).schedule
            except InfeasibleError:
                pass
        sched = coordinate_descent_schedule(self.evaluate, self.dev.D, self.rho, start)
        return self.polish(self.cache[sched])

    def polish(self, plan: _Plan) -> _Plan:
        """Re-pick schedule and local time optimally for the current phases, then re-run SCA."""
        for _ in range(5):
            if not math.isfinite(plan.latency) or plan.schedule.is_empty():
                return plan
            try:
                inner = tdma_from_gains(self.gains(plan.v), self.dev, self.params, self.rho)
            except InfeasibleError:
                return plan
            if inner.total_latency >= plan.latency * (1 - 1e-12):
                return plan
            fresh = self.fixed_schedule(inner.schedule, plan.v)
            if fresh.latency > inner.total_latency:
                # SCA rejects every step yet the fixed-phase optimum is better
                fresh = _Plan(inner.schedule, plan.v, inner.tau_loc, inner.total_latency, [inner.total_latency])
            if fresh.latency >= plan.latency:
                return plan
            fresh.trace = plan.trace + [t for t in fresh.trace if t < plan.trace[-1]]
            plan = fresh
        return plan

    def solution(self, plan: _Plan) -> ProtocolSolution:
        K = self.r.K
        mask = plan.schedule.as_array()
        gains = self.gains(plan.v)
        if not mask.any():
            return ProtocolSolution(
                Protocol.FDMA, plan.schedule, plan.v, 0.0, 0.0, np.zeros(K), np.zeros(K), 0.0,
                gains, np.zeros(K), tuple(plan.trace),
            )
        E = np.where(mask, self.dev.upload_energy(plan.tau_loc, self.params), 0.0)
        e, tau_f = inner_allocation(gains[mask], E[mask], self.params)
        b = np.zeros(K)
        b[mask] = e / tau_f
        freq = np.where(mask, self.dev.CD / plan.tau_loc, 0.0)
        return ProtocolSolution(
            Protocol.FDMA, plan.schedule, plan.v, tau_f, plan.tau_loc, freq, E,
            tau_f + plan.tau_loc, gains, b, tuple(plan.trace),
        )


def _random_schedule(rng, D, rho):
    order = rng.permutation(D.size)
    a = np.ones(D.size, dtype=int)
    budget = rho * rng.random()
    for k in order:
        if D[k] <= budget:
            a[k] = 0
            budget -= D[k]
    return Schedule(a)


def initial_phases(realization: ChannelRealization, devices: Sequence[DeviceProfile], params: SystemParams, rho: float) -> np.ndarray:
    """Starting shared pattern with the lowest exact fixed-phase latency.

    Candidates: the energy-weighted sum-gain pattern, the proportional-fair
    pattern over all devices and over the schedule TDMA would pick, the
    pattern maximizing the weakest device's energy-to-floor ratio, and each
    device's own aligned pattern (which keeps a device that cannot be
    excluded above its energy floor). Ties go to the earlier candidate.
    """
    E = np.array([d.energy_budget for d in devices])
    K = realization.K
    fair = fair_phase_opt(realization, range(K))
    cands = [sum_gain_phase_opt(realization, range(K), E), fair, maxmin_phase_opt(realization, range(K), E, v_init=fair)]
    try:
        sched = tdma_from_gains(realization.aligned_gains(), devices, params, rho).schedule
        if not sched.is_empty() and sched.count < K:
            cands.append(fair_phase_opt(realization, sched.scheduled))
    except InfeasibleError:
        pass
    cands.extend(align_phases(realization, k)[0] for k in range(K))
    best, best_val = cands[0], math.inf
    for v in cands:
        try:
            val = tdma_from_gains(realization.gains(v), devices, params, rho, n_grid=24).total_latency
        except InfeasibleError:
            val = math.inf
        if val < best_val:
            best, best_val = v, val
    return best


def solve_fdma(
    realization: ChannelRealization,
    devices: Sequence[DeviceProfile],
    params: SystemParams,
    rho: float,
    *,
    restarts: int = 0,
    rng=None,
    v_init: np.ndarray | None = None,
) -> ProtocolSolution:
    """Shared-phase FDMA round: coordinate-descent schedule, SCA phases, exact local time.

    ``restarts`` extra runs start from random phases and a random admissible
    schedule; the best plan over all runs is returned.
    """
    if len(devices) != realization.K:
        raise ValueError(f"{len(devices)} devices for a {realization.K}-device realization")
    solver = FdmaSolver(realization, devices, params, rho)
    if solver.dev.D.sum() <= rho:
        return solver.solution(_Plan(Schedule.empty(realization.K), np.ones(realization.N, complex), 0.0, 0.0, [0.0]))
    v0 = initial_phases(realization, devices, params, rho) if v_init is None else np.asarray(v_init, dtype=complex)
    best = solver.descend(v0)
    rng = np.random.default_rng(rng)
    for _ in range(restarts):
        solver.cache.clear()
        v_r = np.exp(2j * np.pi * rng.random(realization.N))
        plan = solver.descend(v_r, _random_schedule(rng, solver.dev.D, rho))
        if plan.latency < best.latency:
            best = plan
    if not math.isfinite(best.latency):
        raise InfeasibleError("no admissible schedule gives every scheduled device a feasible upload")
    return solver.solution(best)

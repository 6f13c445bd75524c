"""I-NOMA: all scheduled devices upload simultaneously over one shared pattern.

The achievable-rate region is a polymatroid, so with received energies
sorted ascending only the prefix constraints (weakest ``m`` devices) can
bind, and the upload time is the largest of the per-prefix roots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import ChannelRealization
from .errors import InfeasibleError
from .fdma import _random_schedule, coordinate_descent_schedule, initial_phases
from .math_kernels import minimize_unimodal
from .phases import sum_gain_phase_opt, sum_gain_trace, weighted_alignment
from .system import (
    DeviceArrays,
    DeviceProfile,
    Protocol,
    ProtocolSolution,
    Schedule,
    SystemParams,
)
from .tdma import _thresholds, solve_upload_times, tdma_from_gains, upload_time_slope

__all__ = [
    "NomaGains",
    "noma_upload_time",
    "solve_noma",
    "sum_gain_phase_opt",
    "sum_gain_trace",
]

_STEPS = 0.5 ** np.arange(7)


@dataclass(frozen=True)
class NomaGains:
    """Received energies ``S_k = E_k |h_k|^2`` and the ascending order ``perm``."""

    S: np.ndarray
    perm: np.ndarray = field(init=False)

    def __post_init__(self):
        S = np.asarray(self.S, dtype=float).reshape(-1)
        if np.any(S < 0) or not np.all(np.isfinite(S)):
            raise ValueError("received energies must be finite and nonnegative")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "perm", np.argsort(S, kind="stable"))

    @classmethod
    def of(cls, energies, gains) -> "NomaGains":
        return cls(np.asarray(energies, dtype=float) * np.asarray(gains, dtype=float))

    @property
    def sorted(self) -> np.ndarray:
        return self.S[self.perm]


def prefix_times(S_rows: np.ndarray, params: SystemParams) -> np.ndarray:
    """Per-prefix roots for each row of received energies (rows sorted internally)."""
    S = np.sort(np.atleast_2d(S_rows), axis=-1)
    m = np.arange(1, S.shape[-1] + 1)
    return solve_upload_times(np.cumsum(S, axis=-1), m * params.model_bits, params)


def noma_upload_time(gains: NomaGains, params: SystemParams) -> float:
    """Shortest common upload time meeting every prefix rate constraint."""
    if gains.S.size == 0:
        return 0.0
    T = prefix_times(gains.S, params)[0]
    if not np.all(np.isfinite(T)):
        m = int(np.flatnonzero(~np.isfinite(T))[0]) + 1
        raise InfeasibleError(f"the {m} weakest devices cannot share the channel at any upload time")
    return float(T.max())


@dataclass
class _Plan:
    schedule: Schedule
    v: np.ndarray
    tau_loc: float
    latency: float
    trace: list


class NomaSolver:
    def __init__(self, realization, devices, params, rho, tol=1e-6, max_iter=100):
        self.r = realization
        self.dev = DeviceArrays.of(devices)
        self.params = params
        self.rho = float(rho)
        self.tol = tol
        self.max_iter = max_iter
        self.cache: dict[Schedule, _Plan] = {}
        self.v_start = None

    def latency(self, sched: Schedule, v, tau) -> float:
        idx = np.flatnonzero(sched.as_array())
        E = self.dev.upload_energy(tau, self.params)[idx]
        if np.any(E <= 0):
            return math.inf
        S = E * self.r.gains(v)[idx]
        return float(tau + prefix_times(S, self.params).max())

    def best_tau(self, sched: Schedule, v) -> tuple[float, float]:
        mask = sched.as_array()
        g = self.r.gains(v)[mask]
        dev = DeviceArrays(self.dev.D[mask], self.dev.CD[mask], self.dev.E_max[mask])
        lo = float(_thresholds(g, dev, self.params).max())
        if not math.isfinite(lo):
            return math.nan, math.inf

        def f(taus):
            E = dev.upload_energy(taus, self.params)
            S = np.where(E > 0, E, 0.0) * g
            return np.asarray(taus) + prefix_times(S, self.params).max(axis=-1)

        probes = np.concatenate([lo * (1 + 10.0 ** -np.arange(1, 7)), lo * 2.0 ** np.arange(1, 8)])
        hi = float(np.min(f(probes)))
        if not math.isfinite(hi):
            return math.nan, math.inf
        # NOMA feasibility of every prefix reduces to per-device feasibility,
        # so the per-device thresholds still bound the search from below
        return minimize_unimodal(f, lo, max(hi, lo), points=24, rtol=1e-13)

    def phase_step(self, sched: Schedule, v, tau, current):
        """Latency-weighted alignment on the binding prefix, with backtracking."""
        idx = np.flatnonzero(sched.as_array())
        c, hd = self.r.cascade[idx], self.r.h_direct[idx]
        E = self.dev.upload_energy(tau, self.params)[idx]
        a = hd + c @ v
        S = E * np.abs(a) ** 2
        order = np.argsort(S, kind="stable")
        T = prefix_times(S, self.params)[0]
        m = int(np.argmax(T)) + 1
        A = float(np.cumsum(S[order])[m - 1])
        w = np.zeros(idx.size)
        w[order[:m]] = -upload_time_slope(T[m - 1], A, self.params)
        v_star = weighted_alignment(c, hd, v, w * E)
        blend = (1 - _STEPS)[:, None] * v[None, :] + _STEPS[:, None] * v_star[None, :]
        mag = np.abs(blend)
        cand = np.where(mag > 0, blend / np.where(mag > 0, mag, 1.0), v_star[None, :])
        Sc = E * np.abs(hd + cand @ c.T) ** 2
        lat = tau + prefix_times(Sc, self.params).max(axis=-1)
        j = int(np.argmin(lat))
        return (cand[j], float(lat[j])) if lat[j] < current else (v, current)

    def fixed_schedule(self, sched: Schedule, v0, tau0=None) -> _Plan:
        """Alternate local-time search, sum-gain phases and latency-weighted steps.

        Each candidate change is kept only if the round latency drops, so
        the recorded trace is monotone.
        """
        if sched.is_empty():
            return _Plan(sched, v0, 0.0, 0.0, [0.0])
        idx = np.flatnonzero(sched.as_array())
        v = np.asarray(v0, dtype=complex).copy()
        if tau0 is not None:
            tau, lat = tau0, self.latency(sched, v, tau0)
            trace = [lat]
            t2, l2 = self.best_tau(sched, v)
            if l2 < lat:
                tau, lat = t2, l2
                trace.append(lat)
        else:
            tau, lat = self.best_tau(sched, v)
            trace = [lat]
        if not math.isfinite(lat):
            return _Plan(sched, v, tau, math.inf, trace)
        for _ in range(self.max_iter):
            start = lat
            E_all = self.dev.upload_energy(tau, self.params)
            v_sg = sum_gain_phase_opt(self.r, idx, E_all, v_init=v)
            l_sg = self.latency(sched, v_sg, tau)
            if l_sg < lat:
                v, lat = v_sg, l_sg
                trace.append(lat)
            for _ in range(self.max_iter):
                v_new, l_new = self.phase_step(sched, v, tau, lat)
                if l_new >= lat:
                    break
                improvement = lat - l_new
                v, lat = v_new, l_new
                trace.append(lat)
                if improvement <= self.tol * lat:
                    break
            t2, l2 = self.best_tau(sched, v)
            if l2 < lat:
                tau, lat = t2, l2
                trace.append(lat)
            if start - lat <= self.tol * start:
                break
        return _Plan(sched, v, tau, lat, trace)

    def evaluate(self, sched: Schedule) -> float:
        if sched not in self.cache:
            self.cache[sched] = self.fixed_schedule(sched, self.v_start)
        return self.cache[sched].latency

    def descend(self, v0, start: Schedule | None = None, seed_plan: _Plan | None = None) -> _Plan:
        self.v_start = v0
        if seed_plan is not None:
            cached = self.cache.get(seed_plan.schedule)
            if cached is None or seed_plan.latency < cached.latency:
                self.cache[seed_plan.schedule] = seed_plan
            start = seed_plan.schedule
        start = start if start is not None else Schedule.full(self.r.K)
        if not math.isfinite(self.evaluate(start)):
            try:
                start = tdma_from_gains(self.r.gains(v0), self.dev, self.params, self.rho).schedule
            except InfeasibleError:
                pass
        sched = coordinate_descent_schedule(self.evaluate, self.dev.D, self.rho, start)
        return self.cache[sched]

    def solution(self, plan: _Plan) -> ProtocolSolution:
        K = self.r.K
        mask = plan.schedule.as_array()
        gains = self.r.gains(plan.v)
        if not mask.any():
            return ProtocolSolution(
                Protocol.NOMA, plan.schedule, plan.v, 0.0, 0.0, np.zeros(K), np.zeros(K), 0.0,
                gains, None, tuple(plan.trace),
            )
        E = np.where(mask, self.dev.upload_energy(plan.tau_loc, self.params), 0.0)
        tau_n = noma_upload_time(NomaGains.of(E[mask], gains[mask]), self.params)
        freq = np.where(mask, self.dev.CD / plan.tau_loc, 0.0)
        return ProtocolSolution(
            Protocol.NOMA, plan.schedule, plan.v, tau_n, plan.tau_loc, freq, E,
            tau_n + plan.tau_loc, gains, None, tuple(plan.trace),
        )


def solve_noma(
    realization: ChannelRealization,
    devices: Sequence[DeviceProfile],
    params: SystemParams,
    rho: float,
    *,
    warm_starts: Sequence[tuple] = (),
    restarts: int = 0,
    rng=None,
) -> ProtocolSolution:
    """Shared-phase NOMA round by coordinate-descent scheduling.

    ``warm_starts`` holds ``(schedule, tau_loc, v)`` triples (``v`` may be
    ``None`` to use the sum-gain pattern of that schedule); each is improved
    locally and then used as a descent start. ``restarts`` adds runs from
    random phases and random admissible schedules.
    """
    if len(devices) != realization.K:
        raise ValueError(f"{len(devices)} devices for a {realization.K}-device realization")
    solver = NomaSolver(realization, devices, params, rho)
    if solver.dev.D.sum() <= rho:
        return solver.solution(_Plan(Schedule.empty(realization.K), np.ones(realization.N, complex), 0.0, 0.0, [0.0]))

    v0 = initial_phases(realization, devices, params, rho)
    best = solver.descend(v0)
    for sched, tau, v in warm_starts:
        if sched.is_empty() or sched.excluded_samples(solver.dev.D) > rho:
            continue
        if v is None:
            E = solver.dev.upload_energy(tau, params)
            v = sum_gain_phase_opt(realization, sched.scheduled, np.maximum(E, 0.0))
        seeded = solver.fixed_schedule(sched, v, tau)
        plan = solver.descend(v, seed_plan=seeded)
        if plan.latency < best.latency:
            best = plan
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

"""I-TDMA latency minimization.

For a fixed local-computation time every device spends its remaining energy
on uploading, its phases are aligned independently, and its upload time is
the root of the rate equation. The scheduling subproblem is then a 0/1
knapsack over the excluded data volume and the remaining search is one
dimensional in ``tau_loc``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import ChannelRealization
from .errors import InfeasibleError
from .math_kernels import (
    BracketedRootProblem,
    lambert_w_m1,
    lambert_w_m1_branch,
    minimize_unimodal,
    solve_monotone,
)
from .system import (
    LN2,
    DeviceArrays,
    DeviceProfile,
    Protocol,
    ProtocolSolution,
    Schedule,
    SystemParams,
    uploaded_bits,
)

_NEAR_BRANCH = 0.02
_ETA_TERMS = np.array([(n - 1) / math.factorial(n) for n in range(2, 14)])


# ---------------------------------------------------------------- upload time


def _branch_offset_series(d: np.ndarray) -> np.ndarray:
    """``1 - (1 - d) e^d`` for small ``d`` without cancellation."""
    acc = np.zeros_like(d)
    for coef in _ETA_TERMS[::-1]:
        acc = acc * d + coef
    return acc * d * d


def upload_time_closed_form(A, bits, params: SystemParams):
    """Lambert-W solution of ``B x log2(1 + A/(x B sigma^2)) = bits``.

    ``A`` is received energy times gain (``E*gamma``, or a NOMA prefix sum).
    With ``c = bits*sigma^2*ln2/A`` the root is ``x = A/(B sigma^2 u)`` where
    ``u = -W_{-1}(-c e^{-c})/c - 1``. Returns ``inf`` where ``c >= 1``.
    """
    A = np.asarray(A, dtype=float)
    c = np.broadcast_to(np.asarray(bits, dtype=float), A.shape) * params.noise_density * LN2
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(A > 0, c / np.where(A > 0, A, 1.0), np.inf)
    out = np.full(A.shape, np.inf)
    ok = c < 1.0
    if not np.any(ok):
        return float(out) if out.ndim == 0 else out
    d = 1.0 - c
    w = np.zeros(A.shape)
    near = ok & (d <= _NEAR_BRANCH)
    far = ok & ~near
    if np.any(near):
        w[near] = lambert_w_m1_branch(_branch_offset_series(d[near]))
    if np.any(far):
        cf = c[far]
        w[far] = lambert_w_m1(-cf * np.exp(-cf))
    u = (-w[ok] - c[ok]) / c[ok]
    out[ok] = A[ok] / (params.noise_power * u)
    return float(out) if out.ndim == 0 else out


def upload_time_bisect(A: float, bits: float, params: SystemParams) -> float:
    """Bisection root of the rate equation; the reference for every fast path."""
    if not A * params.bandwidth / (params.noise_power * LN2) > bits:
        return math.inf

    def h(x):
        return uploaded_bits(x, A, 1.0, 1.0, params)

    lo = hi = bits / params.bandwidth
    while h(lo) >= bits:
        lo *= 0.5
    while h(hi) < bits:
        hi *= 2.0
    return solve_monotone(BracketedRootProblem(h, bits, lo, hi))


def solve_upload_times(A, bits, params: SystemParams, delta: float = 1e-10):
    """Vectorized closed form certified against the rate equation.

    An entry is accepted when the rate equation changes sign within a
    relative ``delta`` of it (or the residual is at rounding level); the
    others are recomputed by bisection.
    """
    A = np.asarray(A, dtype=float)
    b = np.broadcast_to(np.asarray(bits, dtype=float), A.shape)
    x = np.atleast_1d(np.asarray(upload_time_closed_form(A, b, params), dtype=float)).copy()
    Af, bf = np.atleast_1d(A), np.atleast_1d(b)
    fin = np.isfinite(x)
    if np.any(fin):
        xf, af, bb = x[fin], Af[fin], bf[fin]
        lo = uploaded_bits(xf * (1 - delta), af, 1.0, 1.0, params)
        hi = uploaded_bits(xf * (1 + delta), af, 1.0, 1.0, params)
        mid = uploaded_bits(xf, af, 1.0, 1.0, params)
        good = ((lo <= bb) & (bb <= hi)) | (np.abs(mid - bb) <= 8e-16 * bb)
        if not np.all(good):
            idx = np.flatnonzero(fin)[~good]
            for i in idx:
                x[i] = upload_time_bisect(float(Af[i]), float(bf[i]), params)
    return float(x[0]) if A.ndim == 0 else x.reshape(A.shape)


def upload_time(energy: float, gain: float, params: SystemParams) -> float:
    """Shortest time in which ``energy`` over a channel of ``gain`` delivers the model."""
    A = energy * gain
    if not A > params.energy_gain_floor:
        raise InfeasibleError(
            f"E*gamma = {A:.4e} does not exceed s*sigma^2*ln2 = {params.energy_gain_floor:.4e}"
        )
    return solve_upload_times(A, params.model_bits, params)


def upload_time_slope(x, A, params: SystemParams):
    """``d x / d A`` along the rate equation at the root ``x`` (negative)."""
    n0 = params.noise_power
    u = A / (x * n0)
    return -x / ((x * n0 + A) * (np.log1p(u) - u / (1.0 + u)))


# ----------------------------------------------------------------- phases


def align_phases(realization: ChannelRealization, k: int) -> tuple[np.ndarray, float]:
    """Per-device phase pattern that adds every path coherently with the direct link."""
    c = realization.cascade[k]
    hd = realization.h_direct[k]
    ref = np.angle(hd) if hd != 0 else 0.0
    v = np.exp(1j * (ref - np.angle(c)))
    gamma = (abs(hd) + np.abs(c).sum()) ** 2
    return v, float(gamma)


# ------------------------------------------------------------- scheduling


def _lp_bound(vals, wts, start, cap):
    bound = 0.0
    for i in range(start, len(vals)):
        if wts[i] <= cap:
            cap -= wts[i]
            bound += vals[i]
        else:
            return bound + vals[i] * cap / wts[i]
    return bound


def _knapsack(vals: np.ndarray, wts: np.ndarray, cap: float) -> np.ndarray:
    """Exact 0/1 knapsack (maximize value) for items sorted by value density."""
    n = len(vals)
    # dual bisection over breakpoints: largest prefix in density order that fits
    csum = np.cumsum(wts)
    lo, hi = 0, n
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if csum[mid - 1] <= cap:
            lo = mid
        else:
            hi = mid - 1
    take = np.zeros(n, dtype=bool)
    take[:lo] = True
    left = cap - (csum[lo - 1] if lo else 0.0)
    # greedy repair: any later item that still fits
    for i in range(lo, n):
        if wts[i] <= left:
            take[i] = True
            left -= wts[i]
    best_val = float(vals[take].sum())
    root = _lp_bound(vals, wts, 0, cap)
    tol = 1e-12 * max(root, 1e-300)
    if best_val >= root - tol:
        return take

    best = take.copy()
    chosen = np.zeros(n, dtype=bool)
    vl, wl = vals.tolist(), wts.tolist()

    def dfs(i, cap_left, val):
        nonlocal best_val, best
        if i == n:
            if val > best_val + tol:
                best_val, best = val, chosen.copy()
            return
        if val + _lp_bound(vl, wl, i, cap_left) <= best_val + tol:
            return
        if wl[i] <= cap_left:
            chosen[i] = True
            dfs(i + 1, cap_left - wl[i], val + vl[i])
            chosen[i] = False
        dfs(i + 1, cap_left, val)

    dfs(0, cap, 0.0)
    return best


def schedule_devices(tau_tilde, D, rho: float) -> Schedule:
    """Schedule minimizing total upload time subject to excluding at most ``rho`` samples.

    Devices with ``tau_tilde = inf`` cannot upload and are always excluded;
    if that alone exceeds ``rho`` the instance is infeasible.
    """
    t = np.asarray(tau_tilde, dtype=float)
    D = np.asarray(D, dtype=float)
    if t.shape != D.shape:
        raise ValueError("tau_tilde and D must have the same length")
    forced = ~np.isfinite(t)
    # same relative slack on the budget as check_solution
    cap = rho * (1 + 1e-12) - D[forced].sum()
    if cap < 0:
        raise InfeasibleError("devices that cannot upload hold more than rho samples")
    a = ~forced
    cand = np.flatnonzero(a & (t > 0) & (D <= cap))
    if cand.size:
        order = cand[np.argsort(-(t[cand] / D[cand]), kind="stable")]
        take = _knapsack(t[order], D[order], cap)
        a[order[take]] = False
    return Schedule(a.astype(int))


# ------------------------------------------------------------- tau_loc search


def _thresholds(gains: np.ndarray, dev: DeviceArrays, params: SystemParams) -> np.ndarray:
    """tau_loc at which each device's upload energy hits the feasibility floor."""
    with np.errstate(divide="ignore"):
        margin = dev.E_max - params.energy_gain_floor / gains
    thr = np.full(gains.shape, np.inf)
    pos = margin > 0
    thr[pos] = np.sqrt(params.energy_coeff * dev.CD[pos] ** 3 / margin[pos])
    return thr


def _lower_bound(thr: np.ndarray, D: np.ndarray, rho: float) -> float:
    """Smallest tau_loc beyond which the devices still unable to upload fit in rho."""
    for t in np.sort(np.unique(np.concatenate([[0.0], thr[np.isfinite(thr)]]))):
        if D[thr > t].sum() <= rho * (1 + 1e-12):
            return float(t)
    raise InfeasibleError("devices with no feasible upload hold more than rho samples")


@dataclass(frozen=True)
class TdmaInner:
    """Optimal TDMA plan for given channel gains."""

    tau_loc: float
    energies: np.ndarray
    gains: np.ndarray
    schedule: Schedule
    upload_times: np.ndarray

    @property
    def total_latency(self) -> float:
        if self.schedule.is_empty():
            return 0.0
        return float(self.upload_times.sum() + self.tau_loc)


class _TdmaProblem:
    def __init__(self, gains, devices, params, rho):
        self.gains = np.asarray(gains, dtype=float)
        self.dev = devices if isinstance(devices, DeviceArrays) else DeviceArrays.of(devices)
        self.params = params
        self.rho = float(rho)
        self.thr = _thresholds(self.gains, self.dev, params)

    def times(self, tau) -> np.ndarray:
        """Standalone upload times, one row per ``tau`` (inf if infeasible)."""
        E = self.dev.upload_energy(tau, self.params)
        A = np.where(E > 0, E, 0.0) * self.gains
        return solve_upload_times(A, self.params.model_bits, self.params)

    def best_at(self, tau: float) -> tuple[float, Schedule | None]:
        T = self.times(tau)
        try:
            sched = schedule_devices(T, self.dev.D, self.rho)
        except InfeasibleError:
            return math.inf, None
        return float(T[sched.as_array()].sum() + tau), sched

    def objective(self, sched: Schedule):
        mask = sched.as_array()
        gains = self.gains[mask]
        dev = DeviceArrays(self.dev.D[mask], self.dev.CD[mask], self.dev.E_max[mask])

        def f(taus):
            E = dev.upload_energy(taus, self.params)
            A = np.where(E > 0, E, 0.0) * gains
            T = solve_upload_times(A, self.params.model_bits, self.params)
            return T.sum(axis=-1) + np.asarray(taus)

        return f

    def bounds(self) -> tuple[float, float]:
        tau_low = _lower_bound(self.thr, self.dev.D, self.rho)
        probes = np.concatenate(
            [tau_low * (1 + 10.0 ** -np.arange(1, 7)), tau_low * 2.0 ** np.arange(1, 8)]
        )
        best = math.inf
        for tau in probes:
            val, _ = self.best_at(float(tau))
            best = min(best, val)
        if not math.isfinite(best):
            raise InfeasibleError("no feasible tau_loc found above the lower bound")
        return tau_low, max(best, tau_low)

    def refine(self, sched: Schedule, hi: float) -> tuple[float, float]:
        lo = float(self.thr[sched.as_array()].max(initial=0.0))
        lo = max(lo, 1e-300)
        if lo >= hi:
            return math.nan, math.inf
        return minimize_unimodal(self.objective(sched), lo, hi, points=24, rtol=1e-13)

    def solve(self, n_grid: int = 200) -> TdmaInner:
        K = self.gains.size
        if self.dev.D.sum() <= self.rho:
            return TdmaInner(0.0, np.zeros(K), self.gains, Schedule.empty(K), np.zeros(K))
        tau_low, tau_up = self.bounds()
        grid = np.linspace(tau_low, tau_up, n_grid)
        T = self.times(grid)
        candidates: dict[Schedule, float] = {}
        for i in range(n_grid):
            try:
                sched = schedule_devices(T[i], self.dev.D, self.rho)
            except InfeasibleError:
                continue
            candidates.setdefault(sched, grid[i])
        refined: dict[Schedule, tuple[float, float]] = {}
        for _ in range(6):
            fresh = [s for s in candidates if s not in refined]
            if not fresh:
                break
            for sched in fresh:
                refined[sched] = self.refine(sched, tau_up)
            for tau, val in list(refined.values()):
                if math.isfinite(val):
                    _, sched = self.best_at(tau)
                    if sched is not None:
                        candidates.setdefault(sched, tau)
        if not refined:
            raise InfeasibleError("no tau_loc in the search bracket admits a feasible schedule")
        sched, (tau, val) = min(refined.items(), key=lambda kv: (kv[1][1], -kv[0].count))
        if not math.isfinite(val):
            raise InfeasibleError("no tau_loc in the search bracket admits a feasible schedule")
        return self.plan(sched, tau)

    def plan(self, sched: Schedule, tau: float) -> TdmaInner:
        mask = sched.as_array()
        E = np.where(mask, self.dev.upload_energy(tau, self.params), 0.0)
        T = np.zeros_like(E)
        T[mask] = solve_upload_times(E[mask] * self.gains[mask], self.params.model_bits, self.params)
        return TdmaInner(float(tau), E, self.gains, sched, T)


def tau_loc_bounds(devices, gains, params: SystemParams, rho: float = 0.0) -> tuple[float, float]:
    """Search bracket ``[tau_low, tau_up]`` known to contain the optimal ``tau_loc``.

    ``tau_low`` is the smallest local time at which every device that cannot
    upload yet fits in the ``rho`` budget (with ``rho = 0`` this is the
    largest per-device threshold). ``tau_up`` is the best latency found at a
    handful of probe points above ``tau_low``, since the optimal local time
    cannot exceed any achievable round latency.
    """
    return _TdmaProblem(gains, devices, params, rho).bounds()


def tdma_from_gains(gains, devices, params: SystemParams, rho: float, n_grid: int = 200) -> TdmaInner:
    """Optimal schedule, local time and upload times for fixed per-device gains."""
    return _TdmaProblem(gains, devices, params, rho).solve(n_grid)


def tdma_latency_for(gains, devices, params: SystemParams, sched: Schedule, tau_hi: float | None = None):
    """Best ``(tau_loc, latency)`` for a fixed schedule and fixed gains."""
    prob = _TdmaProblem(gains, devices, params, 0.0)
    if sched.is_empty():
        return 0.0, 0.0
    if tau_hi is None:
        lo = float(prob.thr[sched.as_array()].max())
        if not math.isfinite(lo):
            return math.nan, math.inf
        f = prob.objective(sched)
        # the latency is at least tau_loc, so any finite value bounds the bracket
        probes = lo * (1 + 10.0 ** -np.arange(1, 7))
        probes = np.concatenate([probes, lo * 2.0 ** np.arange(1, 8)])
        tau_hi = float(np.min(f(probes)))
        if not math.isfinite(tau_hi):
            return math.nan, math.inf
    return prob.refine(sched, tau_hi)


def device_gains(realization: ChannelRealization, phase_mode: str = "optimized", rng=None):
    """Per-device phase patterns and gains for the TDMA baselines."""
    K, N = realization.K, realization.N
    if phase_mode == "optimized":
        pairs = [align_phases(realization, k) for k in range(K)]
        phases = np.stack([p[0] for p in pairs])
        gains = np.array([p[1] for p in pairs])
    elif phase_mode == "random":
        rng = np.random.default_rng(rng)
        # drawn element-major so a larger surface extends the smaller one's pattern
        phases = np.exp(2j * np.pi * rng.random((N, K))).T
        gains = np.abs(realization.h_direct + np.einsum("kn,kn->k", realization.cascade, phases)) ** 2
    elif phase_mode == "no_irs":
        phases = np.ones((K, N), dtype=complex)
        gains = np.abs(realization.h_direct) ** 2
    else:
        raise ValueError(f"unknown phase_mode {phase_mode!r}")
    return phases, gains


def solution_from_inner(inner: TdmaInner, phases, devices, protocol=Protocol.TDMA, **extra) -> ProtocolSolution:
    dev = DeviceArrays.of(devices) if not isinstance(devices, DeviceArrays) else devices
    mask = inner.schedule.as_array()
    freq = np.where(mask, dev.CD / inner.tau_loc if inner.tau_loc > 0 else 0.0, 0.0)
    return ProtocolSolution(
        protocol=protocol,
        schedule=inner.schedule,
        phases=phases,
        upload_times=inner.upload_times,
        local_time=inner.tau_loc,
        frequencies=freq,
        upload_energies=inner.energies,
        total_latency=inner.total_latency,
        gains=np.asarray(inner.gains, dtype=float),
        **extra,
    )


def solve_tdma(
    realization: ChannelRealization,
    devices: Sequence[DeviceProfile],
    params: SystemParams,
    rho: float,
    *,
    phase_mode: str = "optimized",
    rng=None,
    n_grid: int = 200,
) -> ProtocolSolution:
    """Minimum-latency TDMA round: schedule, phases, local time and upload slots.

    ``phase_mode`` selects optimized per-device alignment, uniformly random
    phases, or no IRS (direct link only).
    """
    if len(devices) != realization.K:
        raise ValueError(f"{len(devices)} devices for a {realization.K}-device realization")
    phases, gains = device_gains(realization, phase_mode, rng)
    inner = tdma_from_gains(gains, devices, params, rho, n_grid)
    return solution_from_inner(inner, phases, devices, info={"phase_mode": phase_mode})

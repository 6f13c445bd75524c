"""Convergence bound, accuracy/latency tradeoff and the protocol-ordering harness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .channel import ChannelRealization, is_phase_homogeneous, is_power_homogeneous
from .errors import DomainError, InfeasibleError
from .fdma import solve_fdma
from .noma import solve_noma
from .system import DeviceArrays, DeviceProfile, LN2, ProtocolSolution, Schedule, SystemParams
from .tdma import solve_tdma


@dataclass(frozen=True)
class ConvergenceParams:
    L: float
    delta: float
    eps: float
    initial_gap: float
    kappa: float = 0.0

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError(f"L must be > 0, got {self.L}")
        if not 0 < self.delta <= self.L:
            raise ValueError(f"delta must lie in (0, L], got {self.delta}")
        if not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if not self.kappa >= 0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")
        if not self.initial_gap >= 0:
            raise ValueError(f"initial gap must be >= 0, got {self.initial_gap}")

    @property
    def contraction(self) -> float:
        return 1.0 - self.delta / self.L


def scheduling_error(params: ConvergenceParams, schedule: Schedule, D) -> float:
    """Per-round penalty ``A_t = 2 eps / (L D^2) * (excluded samples)^2``."""
    D = np.asarray(D, dtype=float)
    excluded = schedule.excluded_samples(D)
    return 2.0 * params.eps / (params.L * D.sum() ** 2) * excluded ** 2


def gap_bound_trace(params: ConvergenceParams, schedules: Sequence[Schedule], D) -> np.ndarray:
    """Bound after ``t = 0, 1, ..., T`` rounds."""
    q = params.contraction
    out = [params.initial_gap]
    for sched in schedules:
        out.append(q * out[-1] + scheduling_error(params, sched, D))
    return np.array(out)


def gap_bound(params: ConvergenceParams, schedules: Sequence[Schedule], D) -> float:
    """Optimality-gap bound after ``len(schedules)`` rounds."""
    T = len(schedules)
    if T < 1:
        raise ValueError("gap_bound needs at least one round")
    q = params.contraction
    A = np.array([scheduling_error(params, s, D) for s in schedules])
    return float(q ** T * params.initial_gap + np.sum(A * q ** (T - np.arange(1, T + 1))))


def rho_from_kappa(params: ConvergenceParams, D_total: float) -> float:
    """Largest excludable data volume compatible with ``A_t <= kappa``."""
    if params.kappa < 0:
        raise ValueError("kappa must be >= 0")
    return math.sqrt(params.kappa * params.L * D_total ** 2 / (2.0 * params.eps))


def kappa_from_rho(params: ConvergenceParams, rho: float, D_total: float) -> float:
    return 2.0 * params.eps * rho ** 2 / (params.L * D_total ** 2)


def kappa_max(params: ConvergenceParams, D_total: float) -> float:
    """Budget under which every device may be excluded (``rho = D``)."""
    return 2.0 * params.eps / params.L


# ------------------------------------------------------------ loss vs latency

_SOLVERS: dict[str, Callable] = {
    "tdma": solve_tdma,
    "fdma": solve_fdma,
    "noma": solve_noma,
    "tdma_random_phase": lambda r, d, p, rho, **kw: solve_tdma(r, d, p, rho, phase_mode="random", **kw),
    "tdma_no_irs": lambda r, d, p, rho, **kw: solve_tdma(r, d, p, rho, phase_mode="no_irs", **kw),
    "tdma_full": lambda r, d, p, rho, **kw: solve_tdma(r, d, p, 0.0, **kw),
}


def solver_for(protocol) -> Callable:
    key = getattr(protocol, "value", protocol)
    try:
        return _SOLVERS[str(key).lower()]
    except KeyError:
        raise ValueError(f"unknown protocol {protocol!r}") from None


def _subset_sums(D: np.ndarray, limit: int) -> np.ndarray | None:
    sums = {0.0}
    for d in D:
        sums |= {s + d for s in sums}
        if len(sums) > limit:
            return None
    return np.array(sorted(sums))


@dataclass(frozen=True)
class LossLatencyResult:
    kappa: float
    A_t: float
    rho: float
    solution: ProtocolSolution


def min_loss_given_latency(
    protocol,
    realization: ChannelRealization,
    devices: Sequence[DeviceProfile],
    params: SystemParams,
    tau_bar: float,
    conv: ConvergenceParams,
    *,
    rtol: float = 1e-3,
    max_candidates: int = 4096,
    solver_kwargs: dict | None = None,
) -> LossLatencyResult:
    """Smallest gap budget ``kappa`` whose minimum round latency fits in ``tau_bar``.

    The optimal latency only changes when ``rho(kappa)`` crosses a subset sum
    of the device data sizes, so when there are few distinct subset sums the
    bisection runs over those breakpoints and is exact. Otherwise it bisects
    ``kappa`` continuously to relative tolerance ``rtol``.
    """
    if not tau_bar > 0:
        raise ValueError("tau_bar must be > 0")
    solve = solver_for(protocol)
    kw = solver_kwargs or {}
    D = DeviceArrays.of(devices).D
    D_total = float(D.sum())
    cache: dict[float, ProtocolSolution | None] = {}

    def attempt(rho: float):
        if rho not in cache:
            try:
                cache[rho] = solve(realization, devices, params, rho, **kw)
            except InfeasibleError:
                cache[rho] = None
        sol = cache[rho]
        return sol if sol is not None and sol.total_latency <= tau_bar else None

    def result(rho: float, sol: ProtocolSolution) -> LossLatencyResult:
        kappa = kappa_from_rho(conv, rho, D_total)
        A = 2.0 * conv.eps / (conv.L * D_total ** 2) * sol.schedule.excluded_samples(D) ** 2
        return LossLatencyResult(kappa, A, rho, sol)

    sums = _subset_sums(D, max_candidates)
    if sums is not None:
        lo, hi = 0, len(sums) - 1
        if attempt(float(sums[hi])) is None:
            raise InfeasibleError("latency target is unreachable even with every device excluded")
        if attempt(float(sums[0])) is not None:
            return result(0.0, cache[0.0])
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if attempt(float(sums[mid])) is not None:
                hi = mid
            else:
                lo = mid
        return result(float(sums[hi]), cache[float(sums[hi])])

    k_hi = kappa_max(conv, D_total)
    rho_of = lambda k: rho_from_kappa(ConvergenceParams(conv.L, conv.delta, conv.eps, conv.initial_gap, k), D_total)
    if attempt(rho_of(k_hi)) is None:
        raise InfeasibleError("latency target is unreachable even with every device excluded")
    if attempt(0.0) is not None:
        return result(0.0, cache[0.0])
    k_lo = 0.0
    while k_hi - k_lo > rtol * k_hi:
        mid = 0.5 * (k_lo + k_hi)
        if attempt(rho_of(mid)) is not None:
            k_hi = mid
        else:
            k_lo = mid
    return result(rho_of(k_hi), cache[rho_of(k_hi)])


def full_scheduling_threshold(
    devices: Sequence[DeviceProfile],
    params: SystemParams,
    tau_bar: float,
    tau_loc_bar: float,
    realization: ChannelRealization,
) -> tuple[int, bool]:
    """IRS size that guarantees full scheduling within ``tau_bar``.

    Each device gets an equal slot of ``(tau_bar - tau_loc_bar)/K`` and the
    weakest per-element cascade magnitude lower-bounds its aligned gain by
    ``N^2 min|h_r g|^2``. Returns ``(N_min, energy_ok)``.
    """
    if not tau_bar > tau_loc_bar > 0:
        raise ValueError("need tau_bar > tau_loc_bar > 0")
    dev = DeviceArrays.of(devices)
    xi = params.energy_coeff
    energy_ok = bool(np.all(dev.E_max > xi * dev.CD ** 3 / tau_bar ** 2))
    if not energy_ok:
        raise DomainError("some device cannot finish local training within tau_bar")
    E_c = float(np.min(dev.E_max - xi * dev.CD ** 3 / tau_loc_bar ** 2))
    if not E_c > 0:
        raise DomainError("tau_loc_bar leaves no upload energy for some device")
    K = len(devices)
    tau_c = tau_bar - tau_loc_bar
    rho_rg = float(np.min(np.abs(realization.h_ris * realization.g[None, :])))
    if rho_rg == 0:
        raise DomainError("a zero cascade element makes the bound vacuous")
    expo = params.model_bits * K / (params.bandwidth * tau_c) * LN2
    if expo > 700:
        raise InfeasibleError("the required SNR overflows; no practical IRS size suffices")
    need = math.expm1(expo) * tau_c * params.noise_power / (K * E_c * rho_rg ** 2)
    return int(math.ceil(math.sqrt(need) - 1e-12)), energy_ok


# ------------------------------------------------------------- comparisons


@dataclass
class ComparisonReport:
    tdma: float
    fdma: float
    noma: float
    noma_cold: float
    power_homogeneous: bool
    phase_homogeneous: bool
    direct_blocked: bool
    homogeneous_devices: bool
    checks: dict = field(default_factory=dict)
    restarted: bool = False
    solutions: dict = field(default_factory=dict, repr=False)

    @property
    def passed(self) -> bool:
        return all(v for v in self.checks.values() if v is not None)

    def flags(self) -> str:
        names = [
            ("power_homogeneous", self.power_homogeneous),
            ("phase_homogeneous", self.phase_homogeneous),
            ("direct_blocked", self.direct_blocked),
            ("homogeneous_devices", self.homogeneous_devices),
        ]
        return "|".join(n for n, on in names if on)


def _homogeneous(devices) -> bool:
    ref = devices[0]
    return all(
        (d.samples, d.cycles_per_sample, d.energy_budget) == (ref.samples, ref.cycles_per_sample, ref.energy_budget)
        for d in devices
    )


def _checks(rep: ComparisonReport, tol: float, eq_rtol: float) -> dict:
    noma_penalized = rep.direct_blocked and rep.homogeneous_devices
    return {
        "tdma_le_fdma": rep.tdma <= rep.fdma + tol,
        "tdma_eq_fdma": (abs(rep.tdma - rep.fdma) <= eq_rtol * max(rep.tdma, 1e-300)) if rep.phase_homogeneous else None,
        "tdma_le_noma": (rep.tdma <= rep.noma + tol) if (rep.power_homogeneous and noma_penalized) else None,
        "noma_le_tdma": (rep.noma <= rep.tdma + tol) if rep.phase_homogeneous else None,
        "noma_le_fdma": rep.noma <= rep.fdma + tol,
    }


def _attempt(solve, *args, **kw):
    try:
        return solve(*args, **kw)
    except InfeasibleError:
        return None


def _lat(sol) -> float:
    return math.inf if sol is None else sol.total_latency


def compare_protocols(
    realization: ChannelRealization,
    devices: Sequence[DeviceProfile],
    params: SystemParams,
    rho: float,
    *,
    tol: float = 1e-6,
    eq_rtol: float = 1e-4,
    restarts: int = 5,
    seed: int = 0,
) -> ComparisonReport:
    """Solve all three protocols on one instance and check their predicted orderings.

    NOMA is warm-started from the FDMA and TDMA plans (both lie inside the
    NOMA rate region), and ``noma_cold`` records the unassisted run. An
    ordering that fails is re-checked after re-solving FDMA and NOMA with
    ``restarts`` random restarts. A heuristic solver that finds no feasible
    plan reports an infinite latency (and a ``None`` solution); only an
    infeasible TDMA instance raises.
    """
    t = solve_tdma(realization, devices, params, rho)
    f = _attempt(solve_fdma, realization, devices, params, rho)
    n_cold = _attempt(solve_noma, realization, devices, params, rho)
    warm = [(t.schedule, t.local_time, None)]
    if f is not None:
        warm.insert(0, (f.schedule, f.local_time, f.phases))
    n = _attempt(solve_noma, realization, devices, params, rho, warm_starts=warm)
    if _lat(n_cold) < _lat(n):
        n = n_cold
    rep = ComparisonReport(
        tdma=t.total_latency,
        fdma=_lat(f),
        noma=_lat(n),
        noma_cold=_lat(n_cold),
        power_homogeneous=is_power_homogeneous(realization),
        phase_homogeneous=is_phase_homogeneous(realization),
        direct_blocked=bool(np.all(realization.h_direct == 0)),
        homogeneous_devices=_homogeneous(devices),
        solutions={"tdma": t, "fdma": f, "noma": n},
    )
    rep.checks = _checks(rep, tol, eq_rtol)
    if not rep.passed and restarts > 0:
        rep.restarted = True
        f2 = _attempt(solve_fdma, realization, devices, params, rho, restarts=restarts, rng=seed)
        if _lat(f2) < rep.fdma:
            rep.fdma, rep.solutions["fdma"] = f2.total_latency, f2
        f = rep.solutions["fdma"]
        warm = [(t.schedule, t.local_time, None)]
        if f is not None:
            warm.insert(0, (f.schedule, f.local_time, f.phases))
        n2 = _attempt(solve_noma, realization, devices, params, rho, warm_starts=warm, restarts=restarts, rng=seed)
        if _lat(n2) < rep.noma:
            rep.noma, rep.solutions["noma"] = n2.total_latency, n2
        rep.checks = _checks(rep, tol, eq_rtol)
    return rep

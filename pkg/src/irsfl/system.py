"""Shared domain types and the rate, energy and latency formulas."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .channel import Position2D
from .errors import DomainError

LN2 = math.log(2.0)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) * 1e-3


@dataclass(frozen=True)
class SystemParams:
    """Global constants. ``noise_power`` is the total in-band noise B*sigma^2 in W."""

    bandwidth: float = 10e6
    noise_power: float = dbm_to_watt(-80.0)
    model_bits: float = 1e6
    energy_coeff: float = 1e-27
    K: int = 10
    N: int = 20

    def __post_init__(self):
        for name in ("bandwidth", "noise_power", "model_bits", "energy_coeff", "K", "N"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"SystemParams.{name} must be finite and > 0, got {val}")

    @classmethod
    def from_dbm(cls, noise_dbm: float = -80.0, **kw) -> "SystemParams":
        return cls(noise_power=dbm_to_watt(noise_dbm), **kw)

    @property
    def noise_density(self) -> float:
        """sigma^2 in W/Hz."""
        return self.noise_power / self.bandwidth

    @property
    def energy_gain_floor(self) -> float:
        """Smallest E*gamma for which a finite upload time exists: s*sigma^2*ln2."""
        return self.model_bits * self.noise_density * LN2


@dataclass(frozen=True)
class DeviceProfile:
    samples: int
    cycles_per_sample: float = 10.0
    energy_budget: float = 0.1
    position: Position2D | None = None

    def __post_init__(self):
        if not self.samples >= 1:
            raise ValueError(f"samples must be >= 1, got {self.samples}")
        if not self.cycles_per_sample >= 1:
            raise ValueError(f"cycles_per_sample must be >= 1, got {self.cycles_per_sample}")
        if not (self.energy_budget > 0 and math.isfinite(self.energy_budget)):
            raise ValueError(f"energy_budget must be finite and > 0, got {self.energy_budget}")

    @property
    def workload(self) -> float:
        """C_k * D_k cycles per round."""
        return self.cycles_per_sample * self.samples


def homogeneous_devices(K: int, samples: int = 1000, energy: float = 0.1, cycles: float = 10.0):
    return [DeviceProfile(samples, cycles, energy) for _ in range(K)]


@dataclass(frozen=True)
class DeviceArrays:
    """Column view of a device list used by the vectorized solvers."""

    D: np.ndarray
    CD: np.ndarray
    E_max: np.ndarray

    @classmethod
    def of(cls, devices: Sequence[DeviceProfile]) -> "DeviceArrays":
        D = np.array([d.samples for d in devices], dtype=float)
        CD = np.array([d.workload for d in devices], dtype=float)
        E = np.array([d.energy_budget for d in devices], dtype=float)
        return cls(D, CD, E)

    def upload_energy(self, tau_loc, params: SystemParams) -> np.ndarray:
        """Budget left for uploading once local training takes ``tau_loc``.

        Broadcasts: a column of ``tau_loc`` values gives one row per value.
        """
        tau = np.asarray(tau_loc, dtype=float)[..., None]
        return self.E_max - params.energy_coeff * self.CD ** 3 / tau ** 2


@dataclass(frozen=True)
class Schedule:
    a: tuple

    def __post_init__(self):
        a = tuple(int(x) for x in np.asarray(self.a).reshape(-1))
        if any(x not in (0, 1) for x in a):
            raise ValueError(f"schedule entries must be 0 or 1: {a}")
        object.__setattr__(self, "a", a)

    @classmethod
    def full(cls, K: int) -> "Schedule":
        return cls((1,) * K)

    @classmethod
    def empty(cls, K: int) -> "Schedule":
        return cls((0,) * K)

    def __len__(self) -> int:
        return len(self.a)

    def as_array(self) -> np.ndarray:
        return np.array(self.a, dtype=bool)

    @property
    def scheduled(self) -> tuple:
        return tuple(i for i, x in enumerate(self.a) if x)

    @property
    def count(self) -> int:
        return sum(self.a)

    def is_empty(self) -> bool:
        return self.count == 0

    def excluded_samples(self, D) -> float:
        D = np.asarray(D, dtype=float)
        return float(D[~self.as_array()].sum())

    def flip(self, k: int) -> "Schedule":
        a = list(self.a)
        a[k] = 1 - a[k]
        return Schedule(tuple(a))


class Protocol(str, Enum):
    TDMA = "TDMA"
    FDMA = "FDMA"
    NOMA = "NOMA"


@dataclass(frozen=True, eq=False)
class ProtocolSolution:
    """One protocol's round plan.

    ``phases`` is ``(K, N)`` for TDMA (a pattern per device) and ``(N,)``
    otherwise. ``upload_times`` is a per-device array for TDMA and the shared
    upload duration (float) for FDMA/NOMA. ``gains`` holds each device's
    effective channel gain under the applied phases. ``trace`` is the
    accepted-iterate latency history of iterative solvers.
    """

    protocol: Protocol
    schedule: Schedule
    phases: np.ndarray
    upload_times: np.ndarray | float
    local_time: float
    frequencies: np.ndarray
    upload_energies: np.ndarray
    total_latency: float
    gains: np.ndarray
    bandwidth_fractions: np.ndarray | None = None
    trace: tuple = field(default=(), repr=False)
    info: dict = field(default_factory=dict, repr=False)

    @property
    def upload_latency(self) -> float:
        if self.protocol is Protocol.TDMA:
            return float(np.sum(self.upload_times))
        return float(self.upload_times)

    @property
    def empty(self) -> bool:
        return self.schedule.is_empty()


def local_profile(device: DeviceProfile, f: float, params: SystemParams) -> tuple[float, float]:
    """(time, energy) of one local pass at CPU frequency ``f``."""
    if not f > 0:
        raise DomainError(f"CPU frequency must be > 0, got {f}")
    cd = device.workload
    return cd / f, params.energy_coeff * cd * f * f


def round_local_time(schedule: Schedule, times) -> float:
    t = np.asarray(times, dtype=float)
    mask = schedule.as_array()
    return float(t[mask].max()) if mask.any() else 0.0


def uploaded_bits(x, energy, gain, fraction, params: SystemParams):
    """Bits delivered in time ``x`` using ``energy`` over a ``fraction`` of the band."""
    x = np.asarray(x, dtype=float)
    snr = np.asarray(energy, dtype=float) * np.asarray(gain, dtype=float) / (x * fraction * params.noise_power)
    out = fraction * params.bandwidth * x * np.log1p(snr) / LN2
    return float(out) if out.ndim == 0 else out


def noma_prefix_ok(sorted_powers, tau: float, m: int, params: SystemParams, rtol: float = 1e-12) -> bool:
    """Whether the ``m`` weakest devices can jointly deliver ``m*s`` bits in ``tau``."""
    S = np.asarray(sorted_powers, dtype=float)
    if not 1 <= m <= S.size:
        raise ValueError(f"prefix length {m} outside 1..{S.size}")
    bits = uploaded_bits(tau, S[:m].sum(), 1.0, 1.0, params)
    return bool(bits >= m * params.model_bits * (1.0 - rtol))


def check_solution(
    sol: ProtocolSolution,
    realization,
    devices: Sequence[DeviceProfile],
    params: SystemParams,
    rho: float | None = None,
    rtol: float = 1e-8,
) -> list[str]:
    """Re-verify every constraint of a solver output; returns the violations."""
    problems = []
    dev = DeviceArrays.of(devices)
    mask = sol.schedule.as_array()
    s = params.model_bits

    expected = sol.upload_latency + (sol.local_time if mask.any() else 0.0)
    if not math.isclose(sol.total_latency, expected, rel_tol=1e-9, abs_tol=1e-15):
        problems.append(f"total latency {sol.total_latency} != upload + local {expected}")
    if rho is not None and sol.schedule.excluded_samples(dev.D) > rho * (1 + 1e-12):
        problems.append("excluded samples exceed rho")
    if not mask.any():
        return problems

    phases = np.atleast_2d(sol.phases)
    if phases.size and np.max(np.abs(np.abs(phases) - 1.0)) > 1e-9:
        problems.append("phase entries are not unit modulus")
    if sol.protocol is Protocol.TDMA:
        gains = np.array([realization.gains(phases[k])[k] for k in range(realization.K)])
    else:
        gains = realization.gains(phases[0])
    if not np.allclose(gains[mask], sol.gains[mask], rtol=1e-9, atol=0):
        problems.append("reported gains do not match the phases")

    f = sol.frequencies[mask]
    t_loc = dev.CD[mask] / f
    if t_loc.max() > sol.local_time * (1 + 1e-9):
        problems.append("a device finishes local training after local_time")
    energy = sol.upload_energies[mask] + params.energy_coeff * dev.CD[mask] * f ** 2
    if np.any(energy > dev.E_max[mask] * (1 + 1e-9)):
        problems.append("energy budget exceeded")
    if np.any(sol.upload_energies[mask] < 0):
        problems.append("negative upload energy")

    E, g = sol.upload_energies[mask], gains[mask]
    if sol.protocol is Protocol.TDMA:
        bits = uploaded_bits(np.asarray(sol.upload_times)[mask], E, g, 1.0, params)
        if np.any(bits < s * (1 - rtol)):
            problems.append("TDMA rate constraint violated")
    elif sol.protocol is Protocol.FDMA:
        b = sol.bandwidth_fractions
        if b is None or b[mask].sum() > 1 + 1e-9 or np.any(b[mask] <= 0):
            problems.append("bandwidth fractions invalid")
        else:
            bits = uploaded_bits(float(sol.upload_times), E, g, b[mask], params)
            if np.any(bits < s * (1 - rtol)):
                problems.append("FDMA rate constraint violated")
    else:
        S = E * g
        tau = float(sol.upload_times)
        m = S.size
        if m <= 10:
            subsets = (c for r in range(1, m + 1) for c in itertools.combinations(range(m), r))
            for c in subsets:
                if uploaded_bits(tau, S[list(c)].sum(), 1.0, 1.0, params) < len(c) * s * (1 - rtol):
                    problems.append(f"NOMA region constraint violated for subset {c}")
                    break
        else:
            Ss = np.sort(S)
            for j in range(1, m + 1):
                if not noma_prefix_ok(Ss, tau, j, params, rtol):
                    problems.append(f"NOMA prefix {j} violated")
                    break
    return problems

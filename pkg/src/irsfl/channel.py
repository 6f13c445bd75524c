"""Channel realizations for the IRS-aided uplink.

Geometry is two dimensional (metres): AP at (0, 0), IRS at (100, 5). The IRS
is a half-wavelength uniform linear array whose axis is parallel to the
y-axis; line-of-sight components use far-field steering vectors
``a_n = exp(j*pi*n*cos(psi))`` with ``psi`` the angle between the array axis
and the direction from the IRS to the other terminal.

Randomness comes from ``numpy.random.default_rng`` (PCG64). The seed is
expanded with ``SeedSequence(seed).spawn(2 + 2K)`` into independent streams,
consumed in this fixed order:

* stream 0: device placements (K draws of the placement distribution),
* stream 1: IRS->AP small-scale fading, an ``(N, 2)`` standard-normal block,
* streams 2..K+1: device->IRS fading for device k, ``(N, 2)`` each,
* streams K+2..2K+1: direct-link fading for device k, ``(1, 2)`` each.

Because every link owns its stream, realizations with the same seed and K
but different N share their first elements, which keeps N sweeps nested.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DomainError, ModulusError

SPEED_OF_LIGHT = 299_792_458.0


class ScenarioKind(str, Enum):
    POWER_HOMOGENEOUS = "PowerHomogeneous"
    PHASE_HOMOGENEOUS = "PhaseHomogeneous"
    GENERAL = "General"


@dataclass(frozen=True)
class Position2D:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite position ({self.x}, {self.y})")

    def distance_to(self, other: "Position2D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Geometry:
    """Deployment constants. Carrier frequency only sets LoS phases."""

    ap: Position2D = Position2D(0.0, 0.0)
    irs: Position2D = Position2D(100.0, 5.0)
    ref_loss_db: float = 30.0
    irs_exponent: float = 2.0
    direct_exponent: float = 3.4
    carrier_hz: float = 2.4e9
    half_circle_radius: float = 10.0
    line_x: float = 100.0
    line_y_min: float = -30.0
    line_y_max: float = 0.0
    disc_radius: float = 20.0

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz


@dataclass(frozen=True)
class ScenarioSpec:
    kind: ScenarioKind
    K: int
    N: int
    seed: int = 0
    rician_db: float = 3.0
    geometry: Geometry = field(default_factory=Geometry)

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind(self.kind))
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if self.rician_db < 0:
            raise ValueError(f"Rician factor must be >= 0 dB, got {self.rician_db}")


def pathloss(d: float, exponent: float, ref_loss_db: float = 30.0) -> float:
    """Linear power gain ``10^(-ref/10) * d^(-exponent)`` for ``d >= 1`` m."""
    if not d >= 1.0:
        raise DomainError(f"distance {d} m is below the 1 m reference distance")
    return 10.0 ** (-ref_loss_db / 10.0) * d ** (-exponent)


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """Per-device direct, device->IRS and IRS->AP channels.

    ``cascade[k, n] = conj(g[n]) * h_ris[k, n]`` so that the received
    amplitude under phase vector ``v`` is ``h_direct[k] + cascade[k] @ v``.
    """

    h_direct: np.ndarray
    h_ris: np.ndarray
    g: np.ndarray
    positions: tuple = ()
    cascade: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        h_d = np.asarray(self.h_direct, dtype=complex).reshape(-1)
        h_r = np.asarray(self.h_ris, dtype=complex)
        g = np.asarray(self.g, dtype=complex).reshape(-1)
        if h_r.ndim != 2 or h_r.shape != (h_d.size, g.size):
            raise ValueError(f"h_ris shape {h_r.shape} != (K={h_d.size}, N={g.size})")
        for a in (h_d, h_r, g):
            if not np.all(np.isfinite(a)):
                raise ValueError("channel coefficients must be finite")
        cascade = np.conj(g)[None, :] * h_r
        for name, a in (("h_direct", h_d), ("h_ris", h_r), ("g", g), ("cascade", cascade)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def K(self) -> int:
        return self.h_direct.size

    @property
    def N(self) -> int:
        return self.g.size

    def gains(self, v: np.ndarray) -> np.ndarray:
        """``|h_d,k + cascade_k @ v|^2`` for every device under shared ``v``."""
        return np.abs(self.h_direct + self.cascade @ v) ** 2

    def aligned_gains(self) -> np.ndarray:
        """Per-device optimum ``(|h_d,k| + sum_n |cascade_k,n|)^2``."""
        return (np.abs(self.h_direct) + np.abs(self.cascade).sum(axis=1)) ** 2

    def subset(self, devices) -> "ChannelRealization":
        idx = np.asarray(devices, dtype=int)
        pos = tuple(self.positions[i] for i in idx) if self.positions else ()
        return ChannelRealization(self.h_direct[idx], self.h_ris[idx], self.g, pos)

    def to_json(self) -> str:
        def pairs(a):
            a = np.asarray(a)
            return np.stack([a.real, a.imag], axis=-1).tolist()

        return json.dumps(
            {
                "K": self.K,
                "N": self.N,
                "h_direct": pairs(self.h_direct),
                "h_ris": pairs(self.h_ris),
                "g": pairs(self.g),
                "positions": [[p.x, p.y] for p in self.positions],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ChannelRealization":
        d = json.loads(text)

        def unpairs(a, shape):
            arr = np.asarray(a, dtype=float).reshape(*shape, 2)
            return arr[..., 0] + 1j * arr[..., 1]

        K, N = int(d["K"]), int(d["N"])
        return cls(
            unpairs(d["h_direct"], (K,)),
            unpairs(d["h_ris"], (K, N)),
            unpairs(d["g"], (N,)),
            tuple(Position2D(x, y) for x, y in d.get("positions", [])),
        )


def _steering(geo: Geometry, p: Position2D, N: int) -> np.ndarray:
    d = p.distance_to(geo.irs)
    cos_psi = (p.y - geo.irs.y) / d
    return np.exp(1j * math.pi * np.arange(N) * cos_psi)


def _los(geo: Geometry, p: Position2D, N: int, exponent: float) -> np.ndarray:
    d = p.distance_to(geo.irs)
    amp = math.sqrt(pathloss(d, exponent, geo.ref_loss_db))
    return amp * np.exp(-2j * math.pi * d / geo.wavelength) * _steering(geo, p, N)


def _cn(rng: np.random.Generator, n: int) -> np.ndarray:
    z = rng.standard_normal((n, 2))
    return (z[:, 0] + 1j * z[:, 1]) / math.sqrt(2.0)


def _place(spec: ScenarioSpec, rng: np.random.Generator) -> list[Position2D]:
    geo, K = spec.geometry, spec.K
    if spec.kind is ScenarioKind.POWER_HOMOGENEOUS:
        phi = rng.uniform(-math.pi / 2, math.pi / 2, K)
        r = geo.half_circle_radius
        return [Position2D(geo.irs.x + r * math.cos(a), geo.irs.y + r * math.sin(a)) for a in phi]
    if spec.kind is ScenarioKind.PHASE_HOMOGENEOUS:
        ys = rng.uniform(geo.line_y_min, geo.line_y_max, K)
        return [Position2D(geo.line_x, float(y)) for y in ys]
    # General: uniform on the annulus 1 m <= r <= disc_radius around the IRS
    r = np.sqrt(rng.uniform(1.0, geo.disc_radius ** 2, K))
    phi = rng.uniform(0.0, 2 * math.pi, K)
    return [
        Position2D(geo.irs.x + ri * math.cos(a), geo.irs.y + ri * math.sin(a))
        for ri, a in zip(r, phi)
    ]


def generate(spec: ScenarioSpec, params=None) -> ChannelRealization:
    """Draw one realization for ``spec`` (deterministic in ``spec.seed``).

    ``params`` is optional; when given its K and N must agree with ``spec``.
    """
    if params is not None and (params.K, params.N) != (spec.K, spec.N):
        raise ValueError(f"params (K={params.K}, N={params.N}) disagree with spec (K={spec.K}, N={spec.N})")
    geo, K, N = spec.geometry, spec.K, spec.N
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(2 + 2 * K)]
    positions = _place(spec, streams[0])

    g_los = _los(geo, geo.ap, N, geo.irs_exponent)
    hr_los = np.stack([_los(geo, p, N, geo.irs_exponent) for p in positions])

    if spec.kind is not ScenarioKind.GENERAL:
        return ChannelRealization(np.zeros(K, complex), hr_los, g_los, tuple(positions))

    kappa = 10.0 ** (spec.rician_db / 10.0)
    w_los, w_nlos = math.sqrt(kappa / (1 + kappa)), math.sqrt(1 / (1 + kappa))

    g_amp = math.sqrt(pathloss(geo.ap.distance_to(geo.irs), geo.irs_exponent, geo.ref_loss_db))
    g = w_los * g_los + w_nlos * g_amp * _cn(streams[1], N)

    h_ris = np.empty((K, N), complex)
    h_d = np.empty(K, complex)
    for k, p in enumerate(positions):
        amp = math.sqrt(pathloss(p.distance_to(geo.irs), geo.irs_exponent, geo.ref_loss_db))
        h_ris[k] = w_los * hr_los[k] + w_nlos * amp * _cn(streams[2 + k], N)
        d_ap = p.distance_to(geo.ap)
        amp_d = math.sqrt(pathloss(d_ap, geo.direct_exponent, geo.ref_loss_db))
        los_d = amp_d * np.exp(-2j * math.pi * d_ap / geo.wavelength)
        h_d[k] = w_los * los_d + w_nlos * amp_d * _cn(streams[2 + K + k], 1)[0]
    return ChannelRealization(h_d, h_ris, g, tuple(positions))


def check_unit_modulus(v: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    if v.size and np.max(np.abs(np.abs(v) - 1.0)) > atol:
        raise ModulusError("phase vector entries must have unit modulus")
    return v


def effective_gain(realization: ChannelRealization, k: int, v: np.ndarray) -> float:
    """Received power gain ``|h_d,k + sum_n cascade_k,n v_n|^2`` of device k."""
    v = check_unit_modulus(v)
    return float(abs(realization.h_direct[k] + realization.cascade[k] @ v) ** 2)


def is_power_homogeneous(realization: ChannelRealization, rtol: float = 1e-9) -> bool:
    """Per-element device->IRS magnitudes coincide across devices."""
    mag = np.abs(realization.h_ris)
    ref = mag[0]
    return bool(np.all(np.abs(mag - ref) <= rtol * np.maximum(ref, 1e-300)))


def is_phase_homogeneous(realization: ChannelRealization, atol: float = 1e-9) -> bool:
    """Cascade phase profiles coincide across devices up to a per-device constant."""
    c = realization.cascade
    if realization.N == 0:
        return True
    rel = c * np.conj(c[0])[None, :]
    # rotate each row so its first element is real, leaving only n-dependent drift
    rel = rel * np.exp(-1j * np.angle(rel[:, :1]))
    return bool(np.all(np.abs(np.angle(rel)) <= atol))

"""Latency-optimal scheduling and IRS phase design for IRS-aided federated learning."""

from .channel import ChannelRealization, Position2D, ScenarioKind, ScenarioSpec, effective_gain, generate
from .errors import BracketError, ConfigError, DomainError, InfeasibleError, ModulusError
from .fdma import solve_fdma
from .noma import noma_upload_time, solve_noma
from .system import DeviceProfile, Protocol, ProtocolSolution, Schedule, SystemParams, check_solution
from .tdma import schedule_devices, solve_tdma, upload_time
from .tradeoff import (
    ComparisonReport,
    ConvergenceParams,
    compare_protocols,
    full_scheduling_threshold,
    gap_bound,
    min_loss_given_latency,
    rho_from_kappa,
)

__all__ = [
    "BracketError",
    "ChannelRealization",
    "ComparisonReport",
    "ConfigError",
    "ConvergenceParams",
    "DeviceProfile",
    "DomainError",
    "InfeasibleError",
    "ModulusError",
    "Position2D",
    "Protocol",
    "ProtocolSolution",
    "ScenarioKind",
    "ScenarioSpec",
    "Schedule",
    "SystemParams",
    "check_solution",
    "compare_protocols",
    "effective_gain",
    "full_scheduling_threshold",
    "gap_bound",
    "generate",
    "min_loss_given_latency",
    "noma_upload_time",
    "rho_from_kappa",
    "schedule_devices",
    "solve_fdma",
    "solve_noma",
    "solve_tdma",
    "upload_time",
]

"""Experiment runner: JSON config in, seeded Monte Carlo sweeps out as CSV.

Subcommands::

    irsfl validate CONFIG            schema check only
    irsfl run CONFIG [--seed-base S] [--jobs J]
    irsfl compare CONFIG [--seed-base S] [--jobs J]

Exit codes: 0 ok, 1 config error, 2 every trial infeasible.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema
import numpy as np

from .channel import ScenarioKind, ScenarioSpec, generate, is_phase_homogeneous, is_power_homogeneous
from .errors import ConfigError, InfeasibleError
from .system import DeviceProfile, SystemParams, dbm_to_watt
from .tradeoff import (
    ConvergenceParams,
    compare_protocols,
    kappa_from_rho,
    min_loss_given_latency,
    rho_from_kappa,
    solver_for,
)

PROTOCOLS = ("tdma", "fdma", "noma", "tdma_random_phase", "tdma_full", "tdma_no_irs")
SWEEP_VARIABLES = ("energy", "N", "nu", "kappa", "tau_bar")

RUN_COLUMNS = (
    "seed", "sweep_value", "protocol", "latency_total", "latency_upload", "latency_local",
    "scheduled_count", "feasible", "condition_flags", "a_t",
)
AGG_COLUMNS = (
    "sweep_value", "protocol", "trials", "feasible", "latency_mean", "latency_se",
    "upload_mean", "upload_se", "scheduled_mean", "scheduled_se", "a_t_mean",
)
COMPARE_COLUMNS = (
    "seed", "tau_tdma", "tau_fdma", "tau_noma", "tau_noma_cold", "condition_flags",
    "tdma_le_fdma", "tdma_eq_fdma", "tdma_le_noma", "noma_le_tdma", "noma_le_fdma", "restarted", "passed",
)

_POS = {"type": "number", "exclusiveMinimum": 0}
SCHEMA = {
    "type": "object",
    "required": ["name", "scenario", "protocols", "sweep", "trials"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "scenario": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": [k.value for k in ScenarioKind]},
                "K": {"type": "integer", "minimum": 1},
                "N": {"type": "integer", "minimum": 1},
                "rician_db": {"type": "number", "minimum": 0},
            },
        },
        "system": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "bandwidth_hz": _POS,
                "noise_dbm": {"type": "number"},
                "model_bits": _POS,
                "energy_coeff": _POS,
            },
        },
        "devices": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "samples": {
                    "oneOf": [
                        {"type": "integer", "minimum": 1},
                        {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
                    ]
                },
                "cycles_per_sample": _POS,
                "energy_j": _POS,
            },
        },
        "protocols": {"type": "array", "minItems": 1, "uniqueItems": True, "items": {"enum": list(PROTOCOLS)}},
        "nu": {"type": "number", "minimum": 0, "maximum": 1},
        "tau_bar": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "convergence": {
            "type": "object",
            "required": ["L", "delta", "eps", "initial_gap"],
            "additionalProperties": False,
            "properties": {"L": _POS, "delta": _POS, "eps": _POS, "initial_gap": {"type": "number", "minimum": 0}},
        },
        "sweep": {
            "type": "object",
            "required": ["variable", "values"],
            "additionalProperties": False,
            "properties": {
                "variable": {"enum": list(SWEEP_VARIABLES)},
                "values": {"type": "array", "minItems": 1, "items": {"type": "number"}},
            },
        },
        "trials": {"type": "integer", "minimum": 1},
        "seed_base": {"type": "integer", "minimum": 0},
        "output": {"type": "string", "minLength": 1},
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    kind: ScenarioKind
    protocols: tuple
    sweep_variable: str
    sweep_values: tuple
    trials: int
    K: int = 10
    N: int = 20
    rician_db: float = 3.0
    params: SystemParams = field(default_factory=SystemParams)
    samples: tuple = (1000,)
    cycles_per_sample: float = 10.0
    energy_j: float = 0.1
    nu: float = 0.0
    tau_bar: float | None = None
    convergence: ConvergenceParams | None = None
    seed_base: int = 0
    output: str = ""

    def devices(self, energy: float | None = None) -> list[DeviceProfile]:
        e = self.energy_j if energy is None else energy
        return [DeviceProfile(int(self.samples[k % len(self.samples)]), self.cycles_per_sample, e) for k in range(self.K)]

    @property
    def output_path(self) -> Path:
        return Path(self.output or f"results/{self.name}.csv")

    @property
    def aggregate_path(self) -> Path:
        p = self.output_path
        return p.with_name(p.stem + "_agg.csv")


def _field_path(err: jsonschema.ValidationError) -> str:
    parts = []
    for p in err.absolute_path:
        parts.append(f"[{p}]" if isinstance(p, int) else ("." if parts else "") + str(p))
    return "".join(parts) or "<root>"


def validate_dict(raw) -> list[str]:
    """Every schema and cross-field problem, one message per line."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    diags = []
    for err in sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path))):
        if err.validator == "required":
            missing = err.message.split("'")[1]
            where = _field_path(err)
            diags.append(f"{missing if where == '<root>' else where + '.' + missing}: required field is missing")
        else:
            diags.append(f"{_field_path(err)}: {err.message}")
    if diags or not isinstance(raw, dict):
        return diags
    sweep = raw["sweep"]
    var, values = sweep["variable"], sweep["values"]
    ranges = {
        "energy": (lambda v: v > 0, "must be > 0"),
        "N": (lambda v: v >= 1 and float(v).is_integer(), "must be an integer >= 1"),
        "nu": (lambda v: 0 <= v <= 1, "must lie in [0, 1]"),
        "kappa": (lambda v: v >= 0, "must be >= 0"),
        "tau_bar": (lambda v: v > 0, "must be > 0"),
    }
    ok, why = ranges[var]
    for i, v in enumerate(values):
        if not ok(v):
            diags.append(f"sweep.values[{i}]: {v} {why} for sweep variable '{var}'")
    needs_conv = var in ("kappa", "tau_bar") or raw.get("tau_bar") is not None
    if needs_conv and "convergence" not in raw:
        diags.append("convergence: required when sweeping kappa or tau_bar, or when tau_bar is set")
    conv = raw.get("convergence")
    if conv and conv.get("delta", 0) > conv.get("L", math.inf):
        diags.append("convergence.delta: must not exceed convergence.L")
    return diags


def load_config(path) -> ExperimentConfig:
    """Parse and validate; raises ConfigError carrying every diagnostic."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc.strerror}"]) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from None
    diags = validate_dict(raw)
    if diags:
        raise ConfigError(diags)
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    sc, sy, dv = raw["scenario"], raw.get("system", {}), raw.get("devices", {})
    K, N = sc.get("K", 10), sc.get("N", 20)
    params = SystemParams(
        bandwidth=float(sy.get("bandwidth_hz", 10e6)),
        noise_power=dbm_to_watt(float(sy.get("noise_dbm", -80.0))),
        model_bits=float(sy.get("model_bits", 1e6)),
        energy_coeff=float(sy.get("energy_coeff", 1e-27)),
        K=K,
        N=N,
    )
    samples = dv.get("samples", 1000)
    conv = raw.get("convergence")
    return ExperimentConfig(
        name=raw["name"],
        kind=ScenarioKind(sc["kind"]),
        protocols=tuple(raw["protocols"]),
        sweep_variable=raw["sweep"]["variable"],
        sweep_values=tuple(float(v) for v in raw["sweep"]["values"]),
        trials=int(raw["trials"]),
        K=K,
        N=N,
        rician_db=float(sc.get("rician_db", 3.0)),
        params=params,
        samples=tuple(samples) if isinstance(samples, list) else (samples,),
        cycles_per_sample=float(dv.get("cycles_per_sample", 10.0)),
        energy_j=float(dv.get("energy_j", 0.1)),
        nu=float(raw.get("nu", 0.0)),
        tau_bar=raw.get("tau_bar"),
        convergence=ConvergenceParams(**conv) if conv else None,
        seed_base=int(raw.get("seed_base", 0)),
        output=raw.get("output", ""),
    )


# ------------------------------------------------------------------ trials


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float):
        return "%.17g" % x
    return str(x)


def _condition_flags(realization) -> str:
    flags = []
    if is_power_homogeneous(realization):
        flags.append("power_homogeneous")
    if is_phase_homogeneous(realization):
        flags.append("phase_homogeneous")
    if np.all(realization.h_direct == 0):
        flags.append("direct_blocked")
    return "|".join(flags)


def _point(cfg: ExperimentConfig, value: float):
    """(N, devices, rho, tau_bar) at one sweep value."""
    N, energy, tau_bar = cfg.N, cfg.energy_j, cfg.tau_bar
    nu = cfg.nu
    var = cfg.sweep_variable
    if var == "N":
        N = int(value)
    elif var == "energy":
        energy = value
    elif var == "nu":
        nu = value
    elif var == "tau_bar":
        tau_bar = value
    devices = cfg.devices(energy)
    D = float(sum(d.samples for d in devices))
    if var == "kappa":
        rho = rho_from_kappa(replace(cfg.convergence, kappa=value), D)
    else:
        rho = nu * D
    return N, devices, rho, tau_bar


def run_trial(cfg: ExperimentConfig, seed: int) -> list[tuple]:
    """Every (sweep value, protocol) row for one seed."""
    rows = []
    for value in cfg.sweep_values:
        N, devices, rho, tau_bar = _point(cfg, value)
        realization = generate(ScenarioSpec(cfg.kind, cfg.K, N, seed=seed, rician_db=cfg.rician_db))
        flags = _condition_flags(realization)
        D = np.array([d.samples for d in devices], dtype=float)
        for proto in cfg.protocols:
            kw = {"rng": np.random.default_rng([seed, 0x5EED])} if proto == "tdma_random_phase" else {}
            try:
                if tau_bar is not None:
                    res = min_loss_given_latency(
                        proto, realization, devices, cfg.params, tau_bar, cfg.convergence, solver_kwargs=kw
                    )
                    sol, a_t = res.solution, res.A_t
                else:
                    sol = solver_for(proto)(realization, devices, cfg.params, rho, **kw)
                    a_t = (
                        kappa_from_rho(cfg.convergence, sol.schedule.excluded_samples(D), D.sum())
                        if cfg.convergence
                        else None
                    )
                rows.append((
                    seed, value, proto, sol.total_latency, sol.upload_latency, sol.local_time,
                    sol.schedule.count, True, flags, a_t,
                ))
            except InfeasibleError:
                rows.append((seed, value, proto, None, None, None, None, False, flags, None))
    return rows


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *it) for it in items]
        return [f.result() for f in futures]


def _mean_se(xs):
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        return None, None
    se = float(np.std(xs, ddof=1) / math.sqrt(xs.size)) if xs.size > 1 else 0.0
    return float(np.mean(xs)), se


def aggregate_rows(rows, cfg: ExperimentConfig) -> list[tuple]:
    out = []
    for value in cfg.sweep_values:
        for proto in cfg.protocols:
            sel = [r for r in rows if r[1] == value and r[2] == proto]
            ok = [r for r in sel if r[7]]
            lat = _mean_se([r[3] for r in ok])
            up = _mean_se([r[4] for r in ok])
            cnt = _mean_se([r[6] for r in ok])
            a_t = [r[9] for r in ok if r[9] is not None]
            out.append((value, proto, len(sel), len(ok), *lat, *up, *cnt, float(np.mean(a_t)) if a_t else None))
    return out


def _write(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> list[tuple]:
    """Run every trial, write the row and aggregate CSVs, return the rows in seed order."""
    seeds = [cfg.seed_base + i for i in range(cfg.trials)]
    per_seed = _map(run_trial, [(cfg, s) for s in seeds], jobs)
    rows = [r for block in per_seed for r in block]
    _write(cfg.output_path, RUN_COLUMNS, rows)
    _write(cfg.aggregate_path, AGG_COLUMNS, aggregate_rows(rows, cfg))
    return rows


def compare_trial(cfg: ExperimentConfig, seed: int) -> tuple:
    realization = generate(ScenarioSpec(cfg.kind, cfg.K, cfg.N, seed=seed, rician_db=cfg.rician_db))
    devices = cfg.devices()
    rho = cfg.nu * sum(d.samples for d in devices)
    try:
        rep = compare_protocols(realization, devices, cfg.params, rho, seed=seed)
    except InfeasibleError:
        return (seed, None, None, None, None, _condition_flags(realization), *([None] * 5), False, False)
    c = rep.checks
    return (
        seed, rep.tdma, rep.fdma, rep.noma, rep.noma_cold, rep.flags(),
        c["tdma_le_fdma"], c["tdma_eq_fdma"], c["tdma_le_noma"], c["noma_le_tdma"], c["noma_le_fdma"],
        rep.restarted, rep.passed,
    )


def compare_experiment(cfg: ExperimentConfig, jobs: int = 1) -> list[tuple]:
    seeds = [cfg.seed_base + i for i in range(cfg.trials)]
    rows = _map(compare_trial, [(cfg, s) for s in seeds], jobs)
    p = cfg.output_path
    _write(p.with_name(p.stem + "_compare.csv"), COMPARE_COLUMNS, rows)
    return rows


# --------------------------------------------------------------------- main


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="irsfl", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    for name, text in (("run", "run a sweep and write CSVs"), ("compare", "protocol-ordering checks over seeds")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config")
        p.add_argument("--seed-base", type=int, default=None, help="override the config's seed_base")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for trials")
        p.add_argument("--output", default=None, help="override the config's output path")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"{args.config}: invalid config", file=sys.stderr)
        for d in exc.diagnostics:
            print(f"  {d}", file=sys.stderr)
        return 1
    if args.command == "validate":
        print(f"{args.config}: ok")
        return 0
    if args.seed_base is not None:
        cfg = replace(cfg, seed_base=args.seed_base)
    if args.output is not None:
        cfg = replace(cfg, output=args.output)
    if args.command == "run":
        rows = run_experiment(cfg, args.jobs)
        feasible = sum(1 for r in rows if r[7])
        print(f"wrote {len(rows)} rows ({feasible} feasible) to {cfg.output_path} and {cfg.aggregate_path}")
        return 0 if feasible else 2
    rows = compare_experiment(cfg, args.jobs)
    solved = [r for r in rows if r[1] is not None]
    failed = [r[0] for r in solved if not r[-1]]
    print(f"compared {len(solved)}/{len(rows)} seeds; ordering violations on seeds {failed}" if failed
          else f"compared {len(solved)}/{len(rows)} seeds; all predicted orderings hold")
    return 0 if solved else 2


if __name__ == "__main__":
    sys.exit(main())

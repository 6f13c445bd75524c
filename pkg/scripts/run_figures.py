"""Run every sweep config in configs/ and print the per-point mean latency table.

Usage: python3 scripts/run_figures.py [--jobs J] [--trials T] [config ...]
"""

import argparse
import csv
import time
from dataclasses import replace
from pathlib import Path

from irsfl.cli import compare_experiment, load_config, run_experiment

ROOT = Path(__file__).resolve().parent.parent


def _table(agg_path: Path) -> None:
    rows = list(csv.DictReader(open(agg_path)))
    protos = list(dict.fromkeys(r["protocol"] for r in rows))
    values = list(dict.fromkeys(r["sweep_value"] for r in rows))
    cell = {(r["sweep_value"], r["protocol"]): r for r in rows}
    print("  " + "value".rjust(10) + "".join(p.rjust(20) for p in protos))
    for v in values:
        line = f"  {float(v):10.4g}"
        for p in protos:
            r = cell[(v, p)]
            lat = float(r["latency_mean"]) if r["latency_mean"] else float("nan")
            line += f"{lat:14.5f} ({r['scheduled_mean'][:4] or '-':>4})"
        print(line)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("configs", nargs="*", type=Path)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--trials", type=int, default=None, help="override the trial count (quick looks)")
    args = ap.parse_args()
    paths = args.configs or sorted((ROOT / "configs").glob("*.json"))
    for path in paths:
        cfg = load_config(path)
        if args.trials:
            cfg = replace(cfg, trials=args.trials)
        t0 = time.perf_counter()
        if path.stem.startswith("compare"):
            rows = compare_experiment(cfg, args.jobs)
            bad = [r[0] for r in rows if not r[-1]]
            print(f"{path.stem}: {len(rows)} seeds, ordering violations on {bad or 'none'} "
                  f"({time.perf_counter() - t0:.0f} s)")
            continue
        run_experiment(cfg, args.jobs)
        print(f"{path.stem}: sweep over {cfg.sweep_variable}, {cfg.trials} trials "
              f"({time.perf_counter() - t0:.0f} s); mean latency [s] (mean scheduled)")
        _table(cfg.aggregate_path)


if __name__ == "__main__":
    main()

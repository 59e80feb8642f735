"""Sweep the worker budget for a scenario and print makespan and speedup.

    python3 scripts/worker_sweep.py                      # calibrated scenario, W in 1,2,4,8,16,17
    python3 scripts/worker_sweep.py path/to/x.scenario.json --budgets 1,2,3 --csv out.csv
"""

from __future__ import annotations

import argparse
import csv

from infoseeker.simharness import SHIPPED_DIR, ScenarioSpec, format_sweep, sweep_workers


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("scenario", nargs="?", default=str(SHIPPED_DIR / "calibrated_911.scenario.json"))
    ap.add_argument("--budgets", default="1,2,4,8,16,17")
    ap.add_argument("--csv", help="also write the rows to this CSV file")
    args = ap.parse_args()
    spec = ScenarioSpec.load(args.scenario)
    rows = sweep_workers(spec, [int(b) for b in args.budgets.split(",")])
    print(f"scenario {spec.name}")
    print(format_sweep(rows))
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["budget", "makespan", "speedup"])
            w.writerows((r.budget, r.makespan, r.speedup) for r in rows)


if __name__ == "__main__":
    main()

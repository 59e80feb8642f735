"""Run every shipped scenario, print the per-assertion report and a metrics table.

Exits non-zero when any scenario fails.
"""

from __future__ import annotations

import argparse
import sys

from infoseeker.simharness import run_scenarios, shipped_scenarios


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--parallel", action="store_true", help="run scenarios on threads")
    ap.add_argument("--metrics", action="store_true", help="print each run's metrics table too")
    args = ap.parse_args()
    reports = run_scenarios(shipped_scenarios(), parallel=args.parallel)
    for r in reports:
        print(r.report())
        if args.metrics:
            print("\n".join("    " + line for line in r.metrics.to_table().splitlines()))
    print(f"\n{sum(r.passed for r in reports)}/{len(reports)} scenarios passed")
    return 0 if all(r.passed for r in reports) else 1


if __name__ == "__main__":
    sys.exit(main())

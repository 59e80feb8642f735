"""Regenerate golden outputs for the shipped scenarios.

Goldens are checked in and reviewed by hand; rerun this only after an
intentional change to prompts, scripts or the trace format, then inspect
the diff before committing.
"""

from __future__ import annotations

import argparse

from infoseeker.simharness import ScenarioSpec, execute, shipped_scenarios


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("names", nargs="*", help="scenario names (default: all shipped)")
    args = ap.parse_args()
    for path in shipped_scenarios():
        spec = ScenarioSpec.load(path)
        if args.names and spec.name not in args.names:
            continue
        final, _, failure = execute(spec)
        if failure is not None:
            raise SystemExit(f"{spec.name}: run failed: {failure}")
        if (p := spec.golden_path("final")) is not None:
            p.write_text(final.text, encoding="utf-8")
            print(f"wrote {p.name}")
        if (p := spec.golden_path("trace")) is not None:
            # a fresh run writes the trace file itself
            execute(spec, trace_path=p)
            print(f"wrote {p.name}")


if __name__ == "__main__":
    main()

"""Command-line entry points.

    infoseeker run --config CFG [--task TEXT] [--workers N] [--max-steps S] [--trace-out PATH] [--virtual-clock]
    infoseeker scenario SPEC... [--all] [--sweep 1,2,4] [--parallel]
    infoseeker trace summarize|verify PATH

Exit codes: 0 success, 1 task or assertion failure, 2 configuration or
scenario error. Only the final answer (or the requested report) goes to
stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .config import EngineConfig, build_engine
from .core import TaskQuery
from .errors import ConfigError, InfoSeekerError, TaskFailed, TruncatedTrace
from .simharness import DurationTable, ScenarioSpec, format_sweep, run_scenarios, shipped_scenarios, sweep_workers
from .telemetry import read_trace, summarize, verify_trace

log = logging.getLogger("infoseeker")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
# duration per subtask when a plain config runs on the virtual clock
DEFAULT_VIRTUAL_DURATION = 1.0


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _budgets(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("budgets must be integers >= 1")
    return values


def cmd_run(args: argparse.Namespace) -> int:
    path = Path(args.config)
    cfg = EngineConfig.load(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    scenario = doc if "engine" in doc else None
    overrides: dict[str, dict] = {}
    if args.workers is not None:
        overrides["scheduler"] = {"budget": args.workers}
    if args.virtual_clock:
        overrides.setdefault("scheduler", {})["clock"] = "virtual"
    if args.max_steps is not None:
        overrides["host"] = {"step_limit": args.max_steps}
    if overrides:
        cfg = cfg.with_overrides(**overrides)

    task = args.task
    task_id = args.task_id
    if task is None:
        if scenario is None or "task" not in scenario:
            raise ConfigError("--task is required unless --config is a scenario file")
        task = scenario["task"]["text"]
        task_id = task_id or scenario["task"].get("task_id")
    durations = None
    if cfg.scheduler_config().clock == "virtual":
        durations = (DurationTable.from_doc(scenario.get("durations")) if scenario
                     else DurationTable(DEFAULT_VIRTUAL_DURATION))
    trace_out = args.trace_out or cfg.doc.get("trace")
    worker_dir = args.worker_trace_dir or cfg.doc.get("worker_trace_dir")
    with build_engine(cfg, duration_model=durations) as engine:
        try:
            final, sink = engine.run(TaskQuery(task, task_id or "task"), trace_path=trace_out, trace_root=worker_dir)
        except TaskFailed as exc:
            _err(f"error: {exc}")
            if exc.trace_path:
                _err(f"partial trace: {exc.trace_path}")
            return EXIT_FAIL
    print(final.text)
    _err(f"finished: {final.steps_used} step(s), terminated by {final.terminated_by.value}"
         + (f"; trace at {trace_out}" if trace_out else ""))
    return EXIT_OK


def cmd_scenario(args: argparse.Namespace) -> int:
    paths = [Path(p) for p in args.specs]
    if args.all:
        paths += shipped_scenarios()
    if not paths:
        raise ConfigError("give at least one scenario file or --all")
    specs = [ScenarioSpec.load(p) for p in paths]  # validate everything before running anything
    if args.sweep:
        for spec in specs:
            rows = sweep_workers(spec, args.sweep)
            print(f"scenario {spec.name}")
            print(format_sweep(rows))
        return EXIT_OK
    reports = run_scenarios(specs, parallel=args.parallel)
    for report in reports:
        print(report.report())
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_trace(args: argparse.Namespace) -> int:
    events = read_trace(args.path)
    if args.action == "summarize":
        metrics = summarize(events)
        print(json.dumps(metrics.to_dict(), indent=2, ensure_ascii=False) if args.json else metrics.to_table())
        return EXIT_OK
    problems = verify_trace(events)
    if problems:
        for p in problems:
            print(p)
        return EXIT_FAIL
    print(f"ok: {len(events)} events, no violations")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="infoseeker", description="Three-tier host/manager/worker research engine.")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one task")
    run.add_argument("--config", required=True, help="engine config or scenario file (JSON)")
    run.add_argument("--task", help="task text (defaults to the scenario's task)")
    run.add_argument("--task-id", help="identifier used in traces")
    run.add_argument("--workers", type=int, help="worker budget per wave")
    run.add_argument("--max-steps", type=int, help="host step limit")
    run.add_argument("--trace-out", help="write the run trace here")
    run.add_argument("--worker-trace-dir", help="write per-subtask worker traces under this directory")
    run.add_argument("--virtual-clock", action="store_true", help="simulate time instead of measuring it")
    run.set_defaults(func=cmd_run)

    sc = sub.add_parser("scenario", help="run scenario files and check their assertions")
    sc.add_argument("specs", nargs="*", help="scenario files")
    sc.add_argument("--all", action="store_true", help="include every shipped scenario")
    sc.add_argument("--sweep", type=_budgets, help="comma-separated worker budgets to sweep")
    sc.add_argument("--parallel", action="store_true", help="run scenarios concurrently")
    sc.set_defaults(func=cmd_scenario)

    tr = sub.add_parser("trace", help="inspect a run trace")
    tr.add_argument("action", choices=("summarize", "verify"))
    tr.add_argument("path")
    tr.add_argument("--json", action="store_true", help="summarize as JSON")
    tr.set_defaults(func=cmd_trace)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    except TruncatedTrace as exc:
        _err(f"truncated trace: {exc}")
        return EXIT_FAIL
    except InfoSeekerError as exc:
        _err(f"error: {type(exc).__name__}: {exc}")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

"""Scenario files: scripted backends, mock tools and a virtual clock in one document.

Scenario document::

    {
      "format": "infoseeker-scenario/1",
      "name": "restaurants",
      "description": "...",
      "task": {"text": "...", "task_id": "restaurants"},
      "engine": { ...engine config, see infoseeker.config... },
      "durations": {"default": 1.0, "subtasks": {"1.0": 2.5, "1.3.1": 4.0}},
      "sweep": [1, 2, 4, 8, 16, 17],
      "expect": { ...assertions, see ASSERTIONS... },
      "golden": {"final": "restaurants.final.md", "trace": "restaurants.trace.jsonl"}
    }

Durations are looked up by ``step.slot.revision``, then ``step.slot``, then
``default``. The engine always runs on the virtual clock here.
"""

from __future__ import annotations

import concurrent.futures as cf
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator, Mapping, Sequence

from .config import EngineConfig, build_engine
from .core import FinalAnswer, Subtask, TaskQuery
from .errors import ConfigInvalid, MissingDurations, ScenarioInvalid, TaskFailed
from .manager import dedupe, parse_subtask_list
from .telemetry import (
    Kind, RunMetrics, TraceEvent, TraceSink, compute_speedup, masked_lines, parse_trace, summarize, verify_trace,
)

log = logging.getLogger(__name__)

SCENARIO_FORMAT = "infoseeker-scenario/1"
SHIPPED_DIR = Path(__file__).parent / "scenarios"
FLOAT_TOL = 1e-9

ASSERTIONS = (
    "steps", "terminated_by", "subtasks_per_step", "wave_sizes", "wave_slots", "managers", "flags",
    "total_tool_calls", "makespan_per_step", "makespan", "final_text", "final_contains", "golden_final",
    "golden_trace", "errors", "aggregate_ok", "speedup", "sweep", "verify",
)


@dataclass(frozen=True)
class DurationTable:
    default: float | None = None
    subtasks: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any] | None) -> DurationTable:
        doc = doc or {}
        table = {str(k): float(v) for k, v in (doc.get("subtasks") or {}).items()}
        default = doc.get("default")
        for v in [*table.values(), *([default] if default is not None else [])]:
            if not math.isfinite(float(v)) or float(v) < 0:
                raise ScenarioInvalid(f"durations must be finite and >= 0, got {v}")
        return cls(float(default) if default is not None else None, table)

    def covers(self, step: int, slot: int, revision: int) -> bool:
        return self.default is not None or f"{step}.{slot}.{revision}" in self.subtasks or f"{step}.{slot}" in self.subtasks

    def __call__(self, st: Subtask) -> float:
        for key in (st.key, f"{st.step_index}.{st.slot}"):
            if key in self.subtasks:
                return self.subtasks[key]
        if self.default is None:
            raise MissingDurations(f"no duration for subtask {st.key}")
        return self.default


@dataclass
class ScenarioSpec:
    name: str
    task: TaskQuery
    engine: EngineConfig
    durations: DurationTable
    expect: dict[str, Any] = field(default_factory=dict)
    golden: dict[str, str] = field(default_factory=dict)
    sweep: list[int] = field(default_factory=list)
    description: str = ""
    base_dir: Path = field(default_factory=Path.cwd)
    source: Path | None = None

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any], base_dir: str | Path = ".", source: Path | None = None) -> ScenarioSpec:
        if not isinstance(doc, Mapping):
            raise ScenarioInvalid("scenario must be a JSON object")
        if doc.get("format", SCENARIO_FORMAT) != SCENARIO_FORMAT:
            raise ScenarioInvalid(f"unsupported scenario format {doc.get('format')!r}")
        for key in ("name", "task", "engine"):
            if key not in doc:
                raise ScenarioInvalid(f"scenario is missing {key!r}")
        task = doc["task"]
        if not isinstance(task, Mapping) or not isinstance(task.get("text"), str):
            raise ScenarioInvalid("'task' needs a 'text' string")
        base_dir = Path(base_dir)
        engine_doc = json.loads(json.dumps(doc["engine"]))
        engine_doc.setdefault("scheduler", {})["clock"] = "virtual"
        try:
            engine = EngineConfig(engine_doc, base_dir)
            engine.validate()
        except ConfigInvalid as exc:
            raise ScenarioInvalid(f"scenario {doc['name']!r}: {exc}") from exc
        expect = dict(doc.get("expect") or {})
        unknown = set(expect) - set(ASSERTIONS)
        if unknown:
            raise ScenarioInvalid(f"unknown assertions {sorted(unknown)}")
        sweep = doc.get("sweep") or []
        if any(not isinstance(w, int) or w < 1 for w in sweep):
            raise ScenarioInvalid("sweep budgets must be integers >= 1")
        spec = cls(
            name=str(doc["name"]),
            task=TaskQuery(task["text"], str(task.get("task_id", doc["name"]))),
            engine=engine,
            durations=DurationTable.from_doc(doc.get("durations")),
            expect=expect,
            golden=dict(doc.get("golden") or {}),
            sweep=list(sweep),
            description=str(doc.get("description", "")),
            base_dir=base_dir,
            source=source,
        )
        spec.validate()
        return spec

    @classmethod
    def load(cls, path: str | Path) -> ScenarioSpec:
        path = Path(path)
        if not path.is_file():
            raise ScenarioInvalid(f"scenario file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ScenarioInvalid(f"{path} is not valid JSON: {exc}") from exc
        return cls.from_doc(doc, path.parent.resolve(), path)

    def golden_path(self, kind: str) -> Path | None:
        name = self.golden.get(kind)
        return self.base_dir / name if name else None

    def validate(self) -> None:
        """Static checks: scripted keys the run will need exist and durations cover every subtask."""
        for kind in ("final", "trace"):
            wanted = {"final": "golden_final", "trace": "golden_trace"}[kind]
            if self.expect.get(wanted) and self.golden_path(kind) is None:
                raise ScenarioInvalid(f"assertion {wanted!r} needs golden.{kind}")
        try:
            scripts = _script_entries(self.engine)
        except ConfigInvalid as exc:
            raise ScenarioInvalid(str(exc)) from exc
        host = scripts.get("host")
        if host is None:
            return  # live host backend; nothing to check statically
        if "host:final" not in host and "host:*" not in host:
            raise ScenarioInvalid("host script has no 'host:final' entry")
        managers = {m["id"]: m for m in self.engine.doc["managers"]}
        cap = {mid: int(m.get("decompose_cap", 16)) for mid, m in managers.items()}
        for t, mid in _scripted_steps(host):
            if mid not in managers:
                raise ScenarioInvalid(f"host script routes step {t} to unknown manager {mid!r}")
            table = scripts.get(f"manager:{mid}")
            if table is None:
                continue
            for key in (f"{mid}:decompose:{t}", f"{mid}:reflect:{t}.1", f"{mid}:aggregate:{t}"):
                if key not in table and "manager:*" not in table:
                    raise ScenarioInvalid(f"manager {mid!r} script has no entry {key!r}")
            count = _decomposition_size(table.get(f"{mid}:decompose:{t}"), cap[mid])
            for slot in range(count):
                if not self.durations.covers(t, slot, 0):
                    raise ScenarioInvalid(f"no duration for subtask {t}.{slot}.0")
            for rnd, slots in _revisions(table, mid, t):
                for slot in slots:
                    if not self.durations.covers(t, slot, rnd):
                        raise ScenarioInvalid(f"no duration for subtask {t}.{slot}.{rnd}")


def _entries_of(spec: Mapping[str, Any] | None, base_dir: Path) -> dict[str, Any] | None:
    if not spec or spec.get("kind") != "scripted":
        return None
    script = spec.get("script")
    if isinstance(script, str):
        path = base_dir / script
        if not path.is_file():
            raise ConfigInvalid(f"script file not found: {path}")
        script = json.loads(path.read_text(encoding="utf-8"))
    return dict((script or {}).get("entries") or {})


def _script_entries(cfg: EngineConfig) -> dict[str, dict[str, Any]]:
    roles = cfg.doc.get("backends") or {}
    out: dict[str, dict[str, Any]] = {}
    host = _entries_of(roles.get("host"), cfg.base_dir)
    if host is not None:
        out["host"] = host
    for m in cfg.doc["managers"]:
        entries = _entries_of(m.get("backend") or roles.get("manager"), cfg.base_dir)
        if entries is not None:
            out[f"manager:{m['id']}"] = entries
    return out


def _responses(value: Any) -> list[Any]:
    if isinstance(value, list):
        return value
    if isinstance(value, Mapping):
        if "responses" in value:
            return list(value["responses"])
        if "repeat" in value:
            return [value["repeat"]]
    return []


def _as_doc(item: Any) -> Any:
    if isinstance(item, str):
        try:
            return json.loads(item)
        except json.JSONDecodeError:
            return None
    return item


def _scripted_steps(host: Mapping[str, Any]) -> list[tuple[int, str]]:
    steps = []
    for key, value in host.items():
        if not key.startswith("host:step"):
            continue
        try:
            t = int(key[len("host:step"):])
        except ValueError:
            continue
        # the last response is the one that should validate (earlier ones may be deliberate rejects)
        resp = _responses(value)
        doc = _as_doc(resp[-1]) if resp else None
        if isinstance(doc, Mapping) and str(doc.get("kind", "")).upper() == "STEP":
            steps.append((t, str(doc.get("manager"))))
    return sorted(steps)


def _decomposition_size(value: Any, cap: int) -> int:
    for item in reversed(_responses(value)):
        text = item if isinstance(item, str) else json.dumps(item, ensure_ascii=False)
        items = parse_subtask_list(text)
        if items is not None:
            return min(len(dedupe(items)), cap)
    return 0


def _revisions(table: Mapping[str, Any], mid: str, t: int) -> Iterator[tuple[int, list[int]]]:
    rnd = 1
    while f"{mid}:reflect:{t}.{rnd}" in table:
        resp = _responses(table[f"{mid}:reflect:{t}.{rnd}"])
        doc = _as_doc(resp[0]) if resp else None
        if not (isinstance(doc, Mapping) and str(doc.get("status", "")).lower() == "revise"):
            return
        slots = sorted({r["slot"] for r in doc.get("replacements") or [] if isinstance(r, Mapping)
                        and isinstance(r.get("slot"), int)})
        yield rnd, slots
        rnd += 1


@dataclass(frozen=True)
class AssertionResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}" + (f": {self.detail}" if self.detail else "")


@dataclass
class ScenarioReport:
    name: str
    final: FinalAnswer | None
    metrics: RunMetrics
    results: list[AssertionResult]
    events: list[TraceEvent]
    failure: TaskFailed | None = None

    @property
    def passed(self) -> bool:
        return self.failure is None and all(r.passed for r in self.results)

    def __iter__(self):
        # unpacks as (final answer, metrics, per-assertion results)
        return iter((self.final, self.metrics, self.results))

    def report(self) -> str:
        head = f"scenario {self.name}: {'PASS' if self.passed else 'FAIL'}"
        lines = [head] + [f"  {r.line()}" for r in self.results]
        if self.failure is not None:
            lines.append(f"  run failed: {self.failure}")
        return "\n".join(lines)


@dataclass(frozen=True)
class SweepRow:
    budget: int
    makespan: float
    speedup: float


def execute(spec: ScenarioSpec, *, budget: int | None = None, sentinel: bool = True,
            trace_path: str | Path | None = None, trace_root: str | Path | None = None,
            ) -> tuple[FinalAnswer | None, TraceSink, TaskFailed | None]:
    """Run the scenario's task once on the virtual clock."""
    cfg = spec.engine
    if budget is not None:
        cfg = cfg.with_overrides(scheduler={"budget": budget})
    with build_engine(cfg, sentinel=sentinel, duration_model=spec.durations) as engine:
        try:
            final, sink = engine.run(spec.task, trace_path=trace_path, trace_root=trace_root)
        except TaskFailed as exc:
            return None, exc.sink, exc
    return final, sink, None


def _close(a: float, b: float, tol: float = FLOAT_TOL) -> bool:
    return abs(float(a) - float(b)) <= tol


def _wave_slots(events: Sequence[TraceEvent]) -> list[list[list[int]]]:
    steps: dict[int, dict[int, list[int]]] = {}
    for e in events:
        if e.kind is Kind.EXECUTE:
            steps.setdefault(int(e.payload["step"]), {}).setdefault(int(e.payload["wave"]), []).append(
                int(e.payload["slot"]))
    return [[waves[w] for w in sorted(waves)] for _, waves in sorted(steps.items())]


def _check(name: str, got: Any, want: Any) -> AssertionResult:
    return AssertionResult(name, got == want, "" if got == want else f"got {got!r}, want {want!r}")


def evaluate(spec: ScenarioSpec, final: FinalAnswer | None, events: Sequence[TraceEvent],
             metrics: RunMetrics) -> list[AssertionResult]:
    exp = spec.expect
    out: list[AssertionResult] = []
    simple = {
        "steps": metrics.total_steps, "terminated_by": metrics.terminated_by,
        "subtasks_per_step": metrics.subtasks_per_step, "wave_sizes": metrics.wave_sizes,
        "managers": metrics.managers_per_step, "flags": metrics.flags_per_step,
        "total_tool_calls": metrics.total_tool_calls,
    }
    for key, got in simple.items():
        if key in exp:
            out.append(_check(key, got, exp[key]))
    if "wave_slots" in exp:
        out.append(_check("wave_slots", _wave_slots(events), exp["wave_slots"]))
    if "aggregate_ok" in exp:
        got = [e.payload.get("ok") for e in events if e.kind is Kind.AGGREGATE]
        out.append(_check("aggregate_ok", got, exp["aggregate_ok"]))
    if "makespan_per_step" in exp:
        got, want = metrics.makespan_per_step, exp["makespan_per_step"]
        ok = len(got) == len(want) and all(_close(a, b) for a, b in zip(got, want))
        out.append(AssertionResult("makespan_per_step", ok, "" if ok else f"got {got}, want {want}"))
    if "makespan" in exp:
        got = sum(metrics.makespan_per_step)
        ok = _close(got, exp["makespan"])
        out.append(AssertionResult("makespan", ok, "" if ok else f"got {got:g}, want {exp['makespan']:g}"))
    text = final.text if final is not None else None
    if "final_text" in exp:
        out.append(_check("final_text", text, exp["final_text"]))
    if "final_contains" in exp:
        missing = [s for s in exp["final_contains"] if text is None or s not in text]
        out.append(AssertionResult("final_contains", not missing, f"missing {missing}" if missing else ""))
    if exp.get("golden_final"):
        golden = spec.golden_path("final")
        want = hashlib.sha256(golden.read_bytes()).hexdigest() if golden.is_file() else None
        got = metrics.final_digest
        out.append(AssertionResult("golden_final", got is not None and got == want,
                                   "" if got == want else f"final digest {got} != golden {want} ({golden.name})"))
    if exp.get("golden_trace"):
        golden = spec.golden_path("trace")
        if not golden.is_file():
            out.append(AssertionResult("golden_trace", False, f"golden trace {golden.name} missing"))
        else:
            want = masked_lines(parse_trace(golden.read_text(encoding="utf-8")))
            got = masked_lines(events)
            diff = next((i for i, (a, b) in enumerate(zip(got, want)) if a != b), None)
            ok = got == want
            detail = "" if ok else (f"first difference at seq {diff}" if diff is not None
                                    else f"{len(got)} events vs {len(want)} in golden")
            out.append(AssertionResult("golden_trace", ok, detail))
    if "errors" in exp:
        got = sorted(str(e.payload.get("error")) for e in events if e.kind is Kind.ERROR)
        out.append(_check("errors", got, sorted(exp["errors"])))
    if "speedup" in exp:
        s = exp["speedup"]
        budget = int(s.get("budget", spec.engine.scheduler_config().budget))
        got = compute_speedup(events, budget)
        ok = abs(got - float(s["value"])) <= float(s.get("tolerance", 0.01))
        out.append(AssertionResult("speedup", ok, f"W={budget}: {got:.4f} vs {s['value']} ± {s.get('tolerance', 0.01)}"))
    if exp.get("verify"):
        problems = verify_trace(events)
        out.append(AssertionResult("verify", not problems, "; ".join(problems[:3])))
    return out


def _evaluate_sweep(spec: ScenarioSpec, sentinel: bool) -> AssertionResult:
    s = spec.expect["sweep"]
    budgets = list(s.get("budgets") or spec.sweep)
    rows = sweep_workers(spec, budgets, sentinel=sentinel)
    spans = [r.makespan for r in rows]
    problems = []
    if "makespans" in s:
        want = s["makespans"]
        if len(want) != len(spans) or not all(_close(a, b) for a, b in zip(spans, want)):
            problems.append(f"makespans {spans} != {want}")
    mode = s.get("monotone", "non-increasing")
    pairs = list(zip(spans, spans[1:]))
    if mode == "strict" and not all(b < a for a, b in pairs):
        problems.append(f"makespans {spans} not strictly decreasing")
    if mode == "non-increasing" and not all(b <= a for a, b in pairs):
        problems.append(f"makespans {spans} increase somewhere")
    table = ", ".join(f"W={r.budget}:{r.makespan:g}" for r in rows)
    return AssertionResult("sweep", not problems, "; ".join(problems) or table)


def run_scenario(spec: ScenarioSpec | str | Path, *, sentinel: bool = True,
                 trace_path: str | Path | None = None, trace_root: str | Path | None = None) -> ScenarioReport:
    """Run a scenario and evaluate its assertions. Assertion failures are reported, not raised."""
    if not isinstance(spec, ScenarioSpec):
        spec = ScenarioSpec.load(spec)
    final, sink, failure = execute(spec, sentinel=sentinel, trace_path=trace_path, trace_root=trace_root)
    events = list(sink.events)
    metrics = summarize(events)
    results = evaluate(spec, final, events, metrics)
    if "sweep" in spec.expect:
        results.append(_evaluate_sweep(spec, sentinel))
    return ScenarioReport(spec.name, final, metrics, results, events, failure)


def sweep_workers(spec: ScenarioSpec | str | Path, budgets: Sequence[int], *, sentinel: bool = True) -> list[SweepRow]:
    """Re-run the scenario at each worker budget; rows come back sorted by budget."""
    if not isinstance(spec, ScenarioSpec):
        spec = ScenarioSpec.load(spec)
    if spec.engine.scheduler_config().clock != "virtual":
        raise ScenarioInvalid("sweeps need the virtual clock")
    rows = []
    for w in sorted(set(budgets)):
        final, sink, failure = execute(spec, budget=w, sentinel=sentinel)
        if failure is not None:
            raise failure
        events = sink.events
        rows.append(SweepRow(w, sum(summarize(events).makespan_per_step), compute_speedup(events, w)))
    return rows


def format_sweep(rows: Sequence[SweepRow]) -> str:
    lines = [f"{'W':>4}  {'makespan':>12}  {'speedup':>8}"]
    lines += [f"{r.budget:>4}  {r.makespan:>12.4f}  {r.speedup:>8.4f}" for r in rows]
    return "\n".join(lines)


def shipped_scenarios() -> list[Path]:
    return sorted(SHIPPED_DIR.glob("*.scenario.json"))


def run_scenarios(paths: Sequence[str | Path], *, parallel: bool = False, sentinel: bool = True,
                  max_workers: int | None = None) -> list[ScenarioReport]:
    """Run several scenarios; ``parallel`` runs them on threads to stress shared components."""
    runner: Callable[[str | Path], ScenarioReport] = lambda p: run_scenario(p, sentinel=sentinel)
    if not parallel:
        return [runner(p) for p in paths]
    with cf.ThreadPoolExecutor(max_workers=max_workers or len(paths) or 1) as pool:
        return list(pool.map(runner, paths))

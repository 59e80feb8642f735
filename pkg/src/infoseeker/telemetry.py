"""Append-only run trace, metrics, speedup and trace verification.

Trace format: UTF-8, one JSON object per line with the fields ``seq``,
``time``, ``clock`` ("virtual" or "wall"), ``actor``, ``kind``, ``payload``,
``tokens_in`` and ``tokens_out``. Keys are sorted and separators compact so
two runs can be diffed byte for byte once masked (see ``mask_record``).

Step-scoped events carry ``payload["step"]``. A STEP event is written when
a step's (directive, summary) exchange is committed to the host context,
so it follows that step's DECOMPOSE ... AGGREGATE block.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
import re
import threading
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import MissingDurations, SinkUnavailable, TraceOrderError, TruncatedTrace
from .mcp_tools import SENTINEL_PREFIX
from .scheduler import makespan_par


class Actor(str, enum.Enum):
    HOST = "HOST"
    MANAGER = "MANAGER"
    WORKER = "WORKER"
    SCHEDULER = "SCHEDULER"
    TOOL = "TOOL"


class Kind(str, enum.Enum):
    STEP = "STEP"
    STOP = "STOP"
    DECOMPOSE = "DECOMPOSE"
    EXECUTE = "EXECUTE"
    REFLECT = "REFLECT"
    AGGREGATE = "AGGREGATE"
    TOOL_CALL = "TOOL_CALL"
    TOOL_RESULT = "TOOL_RESULT"
    FINALIZE = "FINALIZE"
    WARNING = "WARNING"
    ERROR = "ERROR"


ROLE_ACTORS = ("HOST", "MANAGER", "WORKER")
SENTINEL_RE = re.compile(re.escape(SENTINEL_PREFIX) + r"[0-9a-f]{16}")
# payload fields holding wall-clock quantities; nulled when masking wall traces
WALL_FIELDS = frozenset({"start", "end", "duration", "makespan", "elapsed", "wave_start"})
# a tool payload at least this long appearing verbatim in host text counts as a leak
LEAK_MIN_CHARS = 40


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    time: float
    actor: Actor
    kind: Kind
    payload: Mapping[str, Any] = field(default_factory=dict)
    tokens_in: int = 0
    tokens_out: int = 0
    clock: str = "virtual"

    def __post_init__(self) -> None:
        if self.seq < 0 or self.tokens_in < 0 or self.tokens_out < 0:
            raise ValueError("seq and token counts must be >= 0")

    def to_record(self) -> dict[str, Any]:
        return {
            "seq": self.seq, "time": self.time, "clock": self.clock,
            "actor": self.actor.value, "kind": self.kind.value, "payload": dict(self.payload),
            "tokens_in": self.tokens_in, "tokens_out": self.tokens_out,
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> TraceEvent:
        return cls(
            int(rec["seq"]), rec["time"], Actor(rec["actor"]), Kind(rec["kind"]),
            rec.get("payload") or {}, int(rec.get("tokens_in", 0)), int(rec.get("tokens_out", 0)),
            rec.get("clock", "virtual"),
        )


def encode_record(rec: Mapping[str, Any]) -> str:
    return json.dumps(rec, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


class TraceSink:
    """Totally ordered event log; optionally mirrored to a file line by line.

    ``seq`` is assigned here, under a lock, so concurrent emitters get a
    single order. Each line is flushed before ``record`` returns.
    """

    def __init__(self, path: str | Path | None = None, clock=None, fsync: bool = False):
        self.path = Path(path) if path is not None else None
        self.clock = clock
        self.fsync = fsync
        self.events: list[TraceEvent] = []
        self._lock = threading.RLock()
        self._fh = None
        if self.path is not None:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._fh = open(self.path, "w", encoding="utf-8")
            except OSError as exc:
                raise SinkUnavailable(f"cannot open trace file {self.path}: {exc}") from exc

    @property
    def clock_name(self) -> str:
        return getattr(self.clock, "name", "virtual")

    def record(self, evt: TraceEvent) -> None:
        with self._lock:
            expected = self.events[-1].seq + 1 if self.events else 0
            if evt.seq != expected:
                raise TraceOrderError(f"event seq {evt.seq} out of order (expected {expected})")
            if evt.clock == "virtual" and self.events and evt.time < self.events[-1].time:
                raise TraceOrderError(f"virtual time moved backwards at seq {evt.seq}")
            if self._fh is not None:
                try:
                    self._fh.write(encode_record(evt.to_record()) + "\n")
                    self._fh.flush()
                    if self.fsync:
                        os.fsync(self._fh.fileno())
                except (OSError, ValueError) as exc:
                    raise SinkUnavailable(f"trace write failed: {exc}") from exc
            self.events.append(evt)

    def emit(self, actor: Actor | str, kind: Kind | str, payload: Mapping[str, Any] | None = None,
             tokens_in: int = 0, tokens_out: int = 0, time: float | None = None) -> TraceEvent:
        with self._lock:
            if time is None:
                time = self.clock.now() if self.clock is not None else 0.0
            evt = TraceEvent(len(self.events), time, Actor(actor), Kind(kind), dict(payload or {}),
                             tokens_in, tokens_out, self.clock_name)
            self.record(evt)
            return evt

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


def read_trace(path: str | Path) -> list[TraceEvent]:
    """Parse a trace file. A missing, empty or partially written file is a TruncatedTrace."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise TruncatedTrace(f"cannot read trace {path}: {exc}") from exc
    return parse_trace(text)


def parse_trace(text: str) -> list[TraceEvent]:
    if not text.strip():
        raise TruncatedTrace("trace is empty")
    if not text.endswith("\n"):
        raise TruncatedTrace("trace ends mid-record")
    events = []
    for n, line in enumerate(text.splitlines(), 1):
        try:
            events.append(TraceEvent.from_record(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise TruncatedTrace(f"line {n} is not a trace record: {exc}") from exc
    for prev, cur in zip(events, events[1:]):
        if cur.seq != prev.seq + 1:
            raise TruncatedTrace(f"seq gap between {prev.seq} and {cur.seq}")
    return events


def is_complete(events: Sequence[TraceEvent]) -> bool:
    return bool(events) and events[-1].kind in (Kind.FINALIZE, Kind.ERROR)


def _mask_payload(obj: Any) -> Any:
    if isinstance(obj, dict):
        out = {}
        for k, v in obj.items():
            if k in WALL_FIELDS:
                out[k] = None
            else:
                out[k] = _mask_payload(v)
        return out
    if isinstance(obj, list):
        return [_mask_payload(v) for v in obj]
    return obj


def _mask_paths(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: ("<path>" if k.endswith("path") and isinstance(v, str) and os.path.isabs(v) else _mask_paths(v))
                for k, v in obj.items()}
    if isinstance(obj, list):
        return [_mask_paths(v) for v in obj]
    return obj


def mask_record(rec: Mapping[str, Any]) -> dict[str, Any]:
    """Blank nondeterministic fields: wall timestamps and durations, absolute paths.

    Virtual-clock records keep their times; those are deterministic.
    """
    out = dict(rec)
    out["payload"] = _mask_paths(rec.get("payload") or {})
    if rec.get("clock") == "wall":
        out["time"] = None
        out["payload"] = _mask_payload(out["payload"])
    return out


def masked_lines(events: Iterable[TraceEvent]) -> list[str]:
    return [encode_record(mask_record(e.to_record())) for e in events]


def _step_of(evt: TraceEvent) -> int | None:
    step = evt.payload.get("step")
    return int(step) if step is not None else None


def wave_durations(events: Sequence[TraceEvent]) -> list[list[float]]:
    """Per-wave duration vectors in slot order, in trace order of waves."""
    waves: dict[tuple[int, int], list[tuple[int, float]]] = {}
    for e in events:
        if e.kind is not Kind.EXECUTE:
            continue
        d = e.payload.get("duration")
        if d is None:
            raise MissingDurations(f"EXECUTE event {e.seq} has no duration")
        key = (int(e.payload["step"]), int(e.payload.get("wave", 0)))
        waves.setdefault(key, []).append((int(e.payload.get("position", e.payload.get("slot", 0))), d))
    return [[d for _, d in sorted(v)] for _, v in sorted(waves.items())]


def compute_speedup(events: Sequence[TraceEvent], budget: int, baseline_budget: int = 1) -> float:
    """Σ makespan at the baseline budget over Σ makespan at ``budget``, summed over waves.

    With ``baseline_budget == 1`` the numerator is the serial sum.
    """
    waves = wave_durations(events)
    if not waves:
        raise MissingDurations("trace has no EXECUTE events with durations")
    num = sum(makespan_par(d, baseline_budget) for d in waves)
    den = sum(makespan_par(d, budget) for d in waves)
    if den == 0:
        raise MissingDurations("all recorded durations are zero")
    return num / den


@dataclass
class RunMetrics:
    total_steps: int = 0
    total_subtasks: int = 0
    total_executions: int = 0
    total_tool_calls: int = 0
    subtasks_per_step: list[int] = field(default_factory=list)
    wave_sizes: list[list[int]] = field(default_factory=list)
    makespan_per_step: list[float] = field(default_factory=list)
    managers_per_step: list[str] = field(default_factory=list)
    flags_per_step: list[list[str]] = field(default_factory=list)
    tokens_in: dict[str, int] = field(default_factory=dict)
    tokens_out: dict[str, int] = field(default_factory=dict)
    terminated_by: str | None = None
    final_digest: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @property
    def tool_calls_per_step(self) -> float:
        return self.total_tool_calls / self.total_steps if self.total_steps else 0.0

    def to_table(self) -> str:
        rows = [
            ("steps", self.total_steps),
            ("subtasks", self.total_subtasks),
            ("executions", self.total_executions),
            ("tool calls", self.total_tool_calls),
            ("tool calls / step", f"{self.tool_calls_per_step:.2f}"),
            ("subtasks per step", ", ".join(map(str, self.subtasks_per_step)) or "-"),
            ("makespan per step", ", ".join(f"{m:g}" for m in self.makespan_per_step) or "-"),
            ("managers", ", ".join(self.managers_per_step) or "-"),
            ("terminated by", self.terminated_by or "-"),
        ]
        for role in ROLE_ACTORS:
            rows.append((f"tokens {role.lower()} in/out",
                         f"{self.tokens_in.get(role, 0)}/{self.tokens_out.get(role, 0)}"))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


def summarize(events: Sequence[TraceEvent]) -> RunMetrics:
    if not is_complete(events):
        raise TruncatedTrace("trace does not end with FINALIZE or a fatal ERROR")
    m = RunMetrics(tokens_in={r: 0 for r in ROLE_ACTORS}, tokens_out={r: 0 for r in ROLE_ACTORS})
    step_subtasks: dict[int, int] = {}
    waves: dict[int, dict[int, list[TraceEvent]]] = defaultdict(lambda: defaultdict(list))
    for e in events:
        if e.actor.value in m.tokens_in:
            m.tokens_in[e.actor.value] += e.tokens_in
            m.tokens_out[e.actor.value] += e.tokens_out
        if e.kind is Kind.STEP:
            m.total_steps += 1
            m.managers_per_step.append(str(e.payload.get("manager", "")))
            m.flags_per_step.append(list(e.payload.get("flags", [])))
        elif e.kind is Kind.DECOMPOSE:
            step_subtasks[_step_of(e)] = int(e.payload.get("count", 0))
        elif e.kind is Kind.EXECUTE:
            m.total_executions += 1
            waves[_step_of(e)][int(e.payload.get("wave", 0))].append(e)
        elif e.kind is Kind.TOOL_CALL:
            m.total_tool_calls += 1
        elif e.kind is Kind.FINALIZE:
            m.terminated_by = e.payload.get("terminated_by")
            text = e.payload.get("text", "")
            m.final_digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    for step in sorted(step_subtasks):
        m.subtasks_per_step.append(step_subtasks[step])
        step_waves = waves.get(step, {})
        m.wave_sizes.append([len(step_waves[w]) for w in sorted(step_waves)])
        total = 0.0
        for w in sorted(step_waves):
            wave = step_waves[w]
            if all(ev.payload.get("end") is not None for ev in wave):
                total += max(ev.payload["end"] for ev in wave) - min(ev.payload["start"] for ev in wave)
        m.makespan_per_step.append(total)
    m.total_subtasks = sum(m.subtasks_per_step)
    return m


def host_texts(events: Sequence[TraceEvent]) -> list[tuple[int, str]]:
    """(seq, text) for everything the host saw or produced: directives, summaries, final answer."""
    out = []
    for e in events:
        if e.kind is Kind.STEP:
            out.append((e.seq, str(e.payload.get("directive", ""))))
            out.append((e.seq, str(e.payload.get("summary", ""))))
        elif e.kind is Kind.FINALIZE:
            out.append((e.seq, str(e.payload.get("text", ""))))
    return out


def isolation_violations(events: Sequence[TraceEvent]) -> list[str]:
    payloads = [(e.seq, str(e.payload.get("payload", ""))) for e in events if e.kind is Kind.TOOL_RESULT]
    sentinels: dict[str, int] = {}
    for seq, text in payloads:
        for tok in SENTINEL_RE.findall(text):
            sentinels.setdefault(tok, seq)
    # compare bodies without their sentinel lines so a copy that drops the token still counts
    bodies = [(seq, SENTINEL_RE.sub("", text).strip()) for seq, text in payloads]
    problems = []
    for seq, text in host_texts(events):
        for tok in SENTINEL_RE.findall(text):
            origin = sentinels.get(tok)
            where = f"tool result seq {origin}" if origin is not None else "an unknown tool payload"
            problems.append(f"isolation violation: sentinel {tok} from {where} appears in host text at seq {seq}")
        for pseq, body in bodies:
            if len(body) >= LEAK_MIN_CHARS and body in text:
                problems.append(f"isolation violation: tool result seq {pseq} copied verbatim into host text at seq {seq}")
    return problems


_MANAGER_KINDS = frozenset({Kind.DECOMPOSE, Kind.EXECUTE, Kind.REFLECT, Kind.AGGREGATE})


def algebra_violations(events: Sequence[TraceEvent]) -> list[str]:
    problems = []
    by_step: dict[int, list[TraceEvent]] = defaultdict(list)
    for e in events:
        if e.kind is Kind.TOOL_CALL and e.actor is Actor.HOST:
            problems.append(f"host issued a tool call at seq {e.seq}")
        step = _step_of(e)
        if step is not None and e.kind in _MANAGER_KINDS:
            by_step[step].append(e)
    step_events = [e for e in events if e.kind is Kind.STEP]
    final = next((e for e in events if e.kind is Kind.FINALIZE), None)
    if final is not None:
        limit = final.payload.get("step_limit")
        if limit is not None and len(step_events) > int(limit):
            problems.append(f"{len(step_events)} STEP events exceed the step limit {limit}")
        if final.payload.get("steps_used") != len(step_events):
            problems.append(f"FINALIZE reports {final.payload.get('steps_used')} steps but trace has {len(step_events)}")
    for step, evs in sorted(by_step.items()):
        counts = Counter(e.kind for e in evs)
        if counts[Kind.DECOMPOSE] != 1:
            problems.append(f"step {step}: {counts[Kind.DECOMPOSE]} DECOMPOSE events (want 1)")
            continue
        decompose = next(e for e in evs if e.kind is Kind.DECOMPOSE)
        if counts[Kind.AGGREGATE] != 1:
            problems.append(f"step {step}: {counts[Kind.AGGREGATE]} AGGREGATE events (want 1)")
            continue
        aggregate = next(e for e in evs if e.kind is Kind.AGGREGATE)
        r_max = int(decompose.payload.get("reflect_limit", 1))
        if not 1 <= counts[Kind.REFLECT] <= r_max:
            problems.append(f"step {step}: {counts[Kind.REFLECT]} REFLECT events outside [1, {r_max}]")
        p_t = int(decompose.payload.get("count", 0))
        revisions = sum(int(e.payload.get("replaced", 0)) for e in evs if e.kind is Kind.REFLECT)
        if counts[Kind.EXECUTE] != p_t + revisions:
            problems.append(f"step {step}: {counts[Kind.EXECUTE]} EXECUTE events, want {p_t} + {revisions}")
        for e in evs:
            if e.kind is Kind.EXECUTE and not decompose.seq < e.seq < aggregate.seq:
                problems.append(f"step {step}: EXECUTE seq {e.seq} outside its DECOMPOSE/AGGREGATE block")
    return problems


def verify_trace(events: Sequence[TraceEvent]) -> list[str]:
    if not is_complete(events):
        raise TruncatedTrace("trace does not end with FINALIZE or a fatal ERROR")
    return algebra_violations(events) + isolation_violations(events)


def replay_context(events: Sequence[TraceEvent]):
    """Rebuild the host context from a trace's STEP events."""
    from .core import HostContext, StepDirective, StepSummary, TaskQuery, append_exchange

    end = next((e for e in reversed(events) if e.kind in (Kind.FINALIZE, Kind.ERROR) and "query" in e.payload), None)
    if end is None:
        raise TruncatedTrace("trace has no FINALIZE or fatal ERROR record carrying the query")
    ctx = HostContext(TaskQuery(end.payload["query"], str(end.payload.get("task_id", "task"))))
    for e in events:
        if e.kind is Kind.STEP:
            p = e.payload
            ctx = append_exchange(
                ctx, StepDirective(p["directive"], int(p["step"])),
                StepSummary(p["summary"], p["manager"], int(p.get("subtask_count", 0)), frozenset(p.get("flags", []))),
            )
    return ctx

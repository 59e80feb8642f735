"""Manager tier: decompose, run waves, reflect, aggregate.

One ``handle_step`` call is one host step: a sequential decomposition, a
concurrent map over workers (repeated for revised slots), and a sequential
reduce into a single StepSummary. Subtasks, worker results and tool
payloads never leave this module except through the summary text.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .backends import Backend, CompletionRequest, Role
from .core import (
    HostContext, ReflectionVerdict, Status, StepDirective, StepSummary, Subtask, SubtaskBatch, SubtaskResult, Verdict, nfc,
)
from .errors import DecompositionFailed, StepFailed
from .mcp_tools import McpClient
from .prompts import DEFAULT_TEMPLATES, PromptTemplates
from .scheduler import Scheduler, Wave
from .telemetry import Actor, Kind, TraceSink
from .worker import WorkerConfig, WorkerTrace, make_executor, worker_trace_path

log = logging.getLogger(__name__)

ESCALATION_MARKERS = ("BROWSER_RECOMMENDED",)
REFLECT_LIMIT_FLAG = "REFLECT_LIMIT_REACHED"


@dataclass(frozen=True)
class ManagerConfig:
    manager_id: str
    domain: str = "search"
    capability: str = ""
    decompose_cap: int = 16
    reflect_limit: int = 3
    # per-manager worker pool; None means the scheduler's budget
    pool_size: int | None = None
    markers: tuple[str, ...] = ESCALATION_MARKERS
    decompose_template: str = "manager_decompose"
    reflect_template: str = "manager_reflect"
    aggregate_template: str = "manager_aggregate"

    def __post_init__(self) -> None:
        if self.decompose_cap < 1:
            raise ValueError("decompose_cap must be >= 1")
        if self.reflect_limit < 1:
            raise ValueError("reflect_limit must be >= 1")
        if self.pool_size is not None and self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")

    @property
    def flag_vocabulary(self) -> frozenset[str]:
        return frozenset(self.markers) | {REFLECT_LIMIT_FLAG}


@dataclass
class RunContext:
    """Per-task state shared by the host and the managers it calls."""

    sink: TraceSink
    scheduler: Scheduler
    task_id: str = "task"
    trace_root: Path | None = None
    # the host keeps its latest context here so callers can inspect it afterwards
    context: HostContext | None = None

    @property
    def now(self) -> float:
        return self.scheduler.clock.now()


@dataclass
class ReflectionRecord:
    round: int
    verdict: ReflectionVerdict
    rationale: str = ""


def _parse_json_object(text: str) -> dict | None:
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, TypeError):
        return None
    return doc if isinstance(doc, dict) else None


def parse_subtask_list(text: str) -> list[str] | None:
    doc = _parse_json_object(text)
    if doc is None or not isinstance(doc.get("subtasks"), list):
        return None
    items = [s for s in doc["subtasks"] if isinstance(s, str) and s.strip()]
    return items or None


def dedupe(texts: Sequence[str]) -> list[str]:
    seen: set[str] = set()
    out = []
    for t in texts:
        key = nfc(t.strip())
        if key not in seen:
            seen.add(key)
            out.append(t.strip())
    return out


def format_results(pairs: Sequence[tuple[Subtask, SubtaskResult]], include_failed_text: bool = False) -> str:
    lines = []
    for st, res in sorted(pairs, key=lambda p: p[0].slot):
        if res.ok:
            lines.append(f"[slot {st.slot}] subtask: {st.text}\nresult: {res.text}")
        else:
            note = f"failed: {res.status.value}"
            if include_failed_text and res.error:
                note += f" ({res.error})"
            lines.append(f"[slot {st.slot}] subtask: {st.text}\nresult: ({note})")
    return "\n\n".join(lines)


class Manager:
    def __init__(
        self,
        cfg: ManagerConfig,
        backend: Backend,
        worker_backend: Backend,
        tools: McpClient,
        worker_cfg: WorkerConfig | None = None,
        templates: PromptTemplates | None = None,
        duration_model: Callable[[Subtask], float] | None = None,
    ):
        self.cfg = cfg
        self.backend = backend
        self.worker_backend = worker_backend
        self.tools = tools
        self.worker_cfg = worker_cfg or WorkerConfig()
        self.templates = templates or DEFAULT_TEMPLATES
        self.duration_model = duration_model

    @property
    def id(self) -> str:
        return self.cfg.manager_id

    def _ask(self, key: str, prompt: str, retry_note: str | None = None, bad: str | None = None):
        transcript = [("user", prompt)]
        if bad is not None:
            transcript += [("assistant", bad), ("user", retry_note or "")]
        return self.backend.complete(CompletionRequest(Role.MANAGER, "", tuple(transcript), script_key=key))

    def decompose(self, d: StepDirective, run: RunContext) -> SubtaskBatch:
        cfg = self.cfg
        prompt = self.templates.render(cfg.decompose_template, directive=d.text, domain=cfg.domain,
                                       cap=str(cfg.decompose_cap))
        key = f"{cfg.manager_id}:decompose:{d.index}"
        completion = self._ask(key, prompt)
        texts = parse_subtask_list(completion.text)
        if texts is None:
            run.sink.emit(Actor.MANAGER, Kind.WARNING,
                          {"step": d.index, "manager": cfg.manager_id, "warning": "unparseable subtask list, re-prompting"},
                          completion.prompt_tokens, completion.completion_tokens, time=run.now)
            completion = self._ask(
                key, prompt, bad=completion.text,
                retry_note='That reply was not a subtask list. Reply with exactly {"subtasks": ["..."]}.',
            )
            texts = parse_subtask_list(completion.text)
            if texts is None:
                raise DecompositionFailed(f"manager {cfg.manager_id} produced no subtask list for step {d.index}")
        texts = dedupe(texts)
        if len(texts) > cfg.decompose_cap:
            run.sink.emit(Actor.MANAGER, Kind.WARNING,
                          {"step": d.index, "manager": cfg.manager_id,
                           "warning": f"decomposition truncated from {len(texts)} to {cfg.decompose_cap} subtasks"},
                          time=run.now)
            texts = texts[: cfg.decompose_cap]
        batch = SubtaskBatch(d.index, tuple(Subtask(t, d.index, k, 0) for k, t in enumerate(texts)))
        run.sink.emit(Actor.MANAGER, Kind.DECOMPOSE,
                      {"step": d.index, "manager": cfg.manager_id, "count": len(batch),
                       "subtasks": list(texts), "reflect_limit": cfg.reflect_limit},
                      completion.prompt_tokens, completion.completion_tokens, time=run.now)
        return batch

    def reflect(self, d: StepDirective, pairs: Sequence[tuple[Subtask, SubtaskResult]], round: int,
                run: RunContext) -> ReflectionVerdict:
        cfg = self.cfg
        if round > cfg.reflect_limit:
            raise ValueError(f"round {round} exceeds reflect_limit {cfg.reflect_limit}")
        prompt = self.templates.render(cfg.reflect_template, directive=d.text, round=str(round),
                                       results=format_results(pairs, include_failed_text=True))
        completion = self._ask(f"{cfg.manager_id}:reflect:{d.index}.{round}", prompt)
        verdict, warning = self._parse_verdict(completion.text, pairs)
        if verdict.status is Verdict.REVISE and round >= cfg.reflect_limit:
            verdict = ReflectionVerdict(Verdict.ACCEPT, forced=True, rationale=verdict.rationale)
            warning = f"reflect limit {cfg.reflect_limit} reached; accepting current results"
        payload = {"step": d.index, "manager": cfg.manager_id, "round": round, "status": verdict.status.value,
                   "replaced": len(verdict.replacements), "slots": [s.slot for s in verdict.replacements],
                   "forced": verdict.forced}
        if warning:
            run.sink.emit(Actor.MANAGER, Kind.WARNING, {"step": d.index, "manager": cfg.manager_id, "warning": warning},
                          time=run.now)
        run.sink.emit(Actor.MANAGER, Kind.REFLECT, payload, completion.prompt_tokens, completion.completion_tokens,
                      time=run.now)
        return verdict

    def _parse_verdict(self, text: str, pairs: Sequence[tuple[Subtask, SubtaskResult]]):
        doc = _parse_json_object(text)
        status = str(doc.get("status", "")).lower() if doc else ""
        if status == "accept":
            return ReflectionVerdict(Verdict.ACCEPT, rationale=str(doc.get("rationale", ""))), None
        if status != "revise":
            # fail open: never block the step on an unreadable verdict
            return ReflectionVerdict(Verdict.ACCEPT), "unparseable reflection verdict; accepting"
        current = {st.slot: st for st, _ in pairs}
        next_revision = max(st.revision for st in current.values()) + 1
        replacements: dict[int, Subtask] = {}
        for item in doc.get("replacements") or []:
            if not isinstance(item, dict):
                continue
            slot, new_text = item.get("slot"), item.get("text")
            if not isinstance(slot, int) or slot not in current or slot in replacements:
                continue
            if not isinstance(new_text, str) or not new_text.strip():
                continue
            replacements[slot] = Subtask(new_text.strip(), current[slot].step_index, slot, next_revision)
        if not replacements:
            return ReflectionVerdict(Verdict.ACCEPT), "revise verdict named no valid slot; accepting"
        ordered = tuple(replacements[s] for s in sorted(replacements))
        return ReflectionVerdict(Verdict.REVISE, ordered, rationale=str(doc.get("rationale", ""))), None

    def aggregate(self, d: StepDirective, pairs: Sequence[tuple[Subtask, SubtaskResult]], run: RunContext,
                  forced: bool = False) -> StepSummary:
        cfg = self.cfg
        ordered = sorted(pairs, key=lambda p: p[0].slot)
        ok = [(st, r) for st, r in ordered if r.ok]
        failed = [st.slot for st, r in ordered if not r.ok]
        flags = {m for m in cfg.markers for _, r in ok if f"[{m}]" in r.text}
        if forced:
            flags.add(REFLECT_LIMIT_FLAG)
        if not ok:
            run.sink.emit(Actor.MANAGER, Kind.AGGREGATE,
                          {"step": d.index, "manager": cfg.manager_id, "status": "failed", "ok": 0,
                           "failed_slots": failed, "flags": sorted(flags)}, time=run.now)
            raise StepFailed(f"no subtask of step {d.index} succeeded ({len(failed)} failed)")
        prompt = self.templates.render(cfg.aggregate_template, directive=d.text, results=format_results(ordered))
        completion = self._ask(f"{cfg.manager_id}:aggregate:{d.index}", prompt)
        flags |= {m for m in cfg.markers if f"[{m}]" in completion.text}
        run.sink.emit(Actor.MANAGER, Kind.AGGREGATE,
                      {"step": d.index, "manager": cfg.manager_id, "status": "ok", "ok": len(ok),
                       "failed_slots": failed, "flags": sorted(flags)},
                      completion.prompt_tokens, completion.completion_tokens, time=run.now)
        return StepSummary(completion.text, cfg.manager_id, len(ok), frozenset(flags))

    def run_wave(self, subtasks: Sequence[Subtask], wave_no: int, run: RunContext) -> Wave:
        traces: dict[str, WorkerTrace] = {}
        templates = self.templates
        tool_lines = "\n".join(f"- {t.name}: {t.description}" for t in self.tools.cached_tools)
        executor = make_executor(
            self.worker_cfg, self.tools, self.worker_backend, traces,
            trace_root=run.trace_root, task_id=run.task_id, clock=run.scheduler.clock.now,
            duration_model=self.duration_model,
            system_prompt_for=lambda st: templates.render(
                self.worker_cfg.worker_prompt_template, tools=tool_lines, subtask=st.text),
        )
        wave = run.scheduler.execute_wave(subtasks, executor, budget=self.cfg.pool_size)
        virtual = run.scheduler.virtual
        for i, (st, res) in enumerate(zip(subtasks, wave.results)):
            at = wave.start_time + wave.starts[i] if virtual else None
            payload = {
                "step": st.step_index, "slot": st.slot, "revision": st.revision, "wave": wave_no,
                "manager": self.cfg.manager_id, "status": res.status.value, "duration": res.duration,
                "start": wave.starts[i], "end": wave.ends[i], "tool_calls": res.tool_call_count,
            }
            if res.error:
                payload["error"] = res.error
            if run.trace_root is not None:
                payload["trace_path"] = str(worker_trace_path(Path("."), run.task_id, st))
            run.sink.emit(Actor.WORKER, Kind.EXECUTE, payload, res.tokens_in, res.tokens_out, time=at)
            trace = traces.get(st.key)
            for evt in trace.events if trace else ():
                run.sink.emit(evt.actor, evt.kind, evt.payload, evt.tokens_in, evt.tokens_out, time=at)
            if res.status is Status.TIMEOUT:
                run.sink.emit(Actor.SCHEDULER, Kind.WARNING,
                              {"step": st.step_index, "slot": st.slot, "warning": "subtask timed out"}, time=at)
        return wave

    def handle_step(self, d: StepDirective, run: RunContext) -> StepSummary:
        batch = self.decompose(d, run)
        current: dict[int, Subtask] = {st.slot: st for st in batch}
        results: dict[int, SubtaskResult] = {}
        pending: Sequence[Subtask] = batch.subtasks
        forced = False
        for round in range(1, self.cfg.reflect_limit + 1):
            wave = self.run_wave(pending, round - 1, run)
            for res in wave.results:
                results[res.subtask.slot] = res
            pairs = [(current[s], results[s]) for s in sorted(current)]
            verdict = self.reflect(d, pairs, round, run)
            if verdict.status is Verdict.ACCEPT:
                forced = verdict.forced
                break
            for st in verdict.replacements:
                current[st.slot] = st
            pending = verdict.replacements
        pairs = [(current[s], results[s]) for s in sorted(current)]
        return self.aggregate(d, pairs, run, forced=forced)

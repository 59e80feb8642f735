"""The host loop: plan a step, hand it to one manager, absorb the summary.

The host prompt is built only from the query, the (directive, summary)
exchanges and the managers' capability lines. Nothing a manager does
internally can reach it except through the summary text.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Protocol

from .backends import Backend, Completion, CompletionRequest, Role
from .core import (
    ActionKind, FinalAnswer, HostAction, HostContext, StepDirective, StepSummary, TaskQuery, Termination,
    append_exchange, context_entry_count, validate_host_action,
)
from .errors import InfoSeekerError, MalformedAction, PlanningFailed, StepFailed, TaskFailed, UnknownManager
from .manager import RunContext
from .prompts import DEFAULT_TEMPLATES, PromptTemplates
from .scheduler import Scheduler, SchedulerConfig
from .telemetry import Actor, Kind, TraceSink

log = logging.getLogger(__name__)

DEFAULT_STEP_LIMIT = 12


@dataclass(frozen=True)
class HostConfig:
    step_limit: int = DEFAULT_STEP_LIMIT
    reprompt_limit: int = 1
    host_prompt_template: str = "host"
    final_prompt_template: str = "host_final"

    def __post_init__(self) -> None:
        if self.step_limit < 1:
            raise ValueError("step_limit must be >= 1")
        if self.reprompt_limit < 0:
            raise ValueError("reprompt_limit must be >= 0")


class ManagerHandle(Protocol):
    def handle_step(self, d: StepDirective, run: RunContext) -> StepSummary: ...


class ManagerRegistry:
    """Registered managers in registration order, each with a one-line capability."""

    def __init__(self) -> None:
        self._entries: dict[str, tuple[ManagerHandle, str]] = {}

    def register(self, manager_id: str, handle: ManagerHandle, capability: str) -> None:
        if manager_id in self._entries:
            raise ValueError(f"manager {manager_id!r} already registered")
        self._entries[manager_id] = (handle, capability)

    def unregister(self, manager_id: str) -> None:
        del self._entries[manager_id]

    def __contains__(self, manager_id: object) -> bool:
        return manager_id in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def handle(self, manager_id: str) -> ManagerHandle:
        return self._entries[manager_id][0]

    def capability_lines(self) -> str:
        return "\n".join(f"- {mid}: {cap}" for mid, (_, cap) in self._entries.items())


def render_exchanges(ctx: HostContext) -> str:
    if not ctx.exchanges:
        return "(none yet)"
    blocks = []
    for d, s in ctx.exchanges:
        block = f"Step {d.index} (manager: {s.source_manager})\nDirective: {d.text}\nSummary: {s.text}"
        if s.escalation_flags:
            block += f"\nFlags: {', '.join(sorted(s.escalation_flags))}"
        blocks.append(block)
    return "\n\n".join(blocks)


class Host:
    def __init__(
        self,
        backend: Backend,
        registry: ManagerRegistry,
        cfg: HostConfig | None = None,
        scheduler_cfg: SchedulerConfig | None = None,
        templates: PromptTemplates | None = None,
    ):
        self.backend = backend
        self.registry = registry
        self.cfg = cfg or HostConfig()
        self.scheduler_cfg = scheduler_cfg or SchedulerConfig()
        self.templates = templates or DEFAULT_TEMPLATES

    def _prompt(self, ctx: HostContext) -> str:
        return self.templates.render(
            self.cfg.host_prompt_template,
            query=ctx.query.text, exchanges=render_exchanges(ctx), managers=self.registry.capability_lines(),
        )

    def _plan(self, ctx: HostContext, run: RunContext | None) -> tuple[HostAction, Completion]:
        t = context_entry_count(ctx) + 1
        if t > self.cfg.step_limit:
            raise ValueError("step limit already reached")
        transcript = [("user", self._prompt(ctx))]
        last_error: Exception | None = None
        for attempt in range(self.cfg.reprompt_limit + 1):
            completion = self.backend.complete(
                CompletionRequest(Role.HOST, "", tuple(transcript), script_key=f"host:step{t}"))
            try:
                return validate_host_action(completion.text, self.registry, step_index=t), completion
            except (MalformedAction, UnknownManager) as exc:
                last_error = exc
                if run is not None:
                    run.sink.emit(Actor.HOST, Kind.WARNING,
                                  {"step": t, "attempt": attempt + 1, "warning": f"{type(exc).__name__}: {exc}"},
                                  completion.prompt_tokens, completion.completion_tokens, time=run.now)
                transcript += [
                    ("assistant", completion.text),
                    ("user", f"Your reply was rejected ({type(exc).__name__}: {exc}). "
                             "Reply with exactly one JSON action object."),
                ]
        raise PlanningFailed(f"no valid action for step {t} after {self.cfg.reprompt_limit + 1} attempts: {last_error}")

    def plan_next(self, ctx: HostContext, run: RunContext | None = None) -> HostAction:
        return self._plan(ctx, run)[0]

    def finalize(self, ctx: HostContext, terminated_by: Termination, run: RunContext | None = None) -> FinalAnswer:
        prompt = self.templates.render(self.cfg.final_prompt_template,
                                       query=ctx.query.text, exchanges=render_exchanges(ctx))
        completion = self.backend.complete(
            CompletionRequest(Role.HOST, "", (("user", prompt),), script_key="host:final"))
        answer = FinalAnswer(completion.text, context_entry_count(ctx), terminated_by)
        if run is not None:
            run.sink.emit(Actor.HOST, Kind.FINALIZE, {
                "text": answer.text, "steps_used": answer.steps_used, "terminated_by": terminated_by.value,
                "step_limit": self.cfg.step_limit, "task_id": ctx.query.task_id, "query": ctx.query.text,
            }, completion.prompt_tokens, completion.completion_tokens, time=run.now)
        return answer

    def new_run(self, q: TaskQuery, trace_path: str | Path | None = None,
                trace_root: str | Path | None = None) -> RunContext:
        scheduler = Scheduler(self.scheduler_cfg)
        sink = TraceSink(trace_path, clock=scheduler.clock)
        return RunContext(sink, scheduler, q.task_id, Path(trace_root) if trace_root is not None else None)

    def run_task(self, q: TaskQuery, trace_path: str | Path | None = None,
                 trace_root: str | Path | None = None, run: RunContext | None = None) -> tuple[FinalAnswer, TraceSink]:
        if not len(self.registry):
            raise ValueError("register at least one manager before running a task")
        run = run or self.new_run(q, trace_path, trace_root)
        ctx = HostContext(q)
        run.context = ctx
        terminated = Termination.STEP_LIMIT
        try:
            for _ in range(self.cfg.step_limit):
                action, completion = self._plan(ctx, run)
                t = context_entry_count(ctx) + 1
                if action.kind is ActionKind.STOP:
                    run.sink.emit(Actor.HOST, Kind.STOP, {"step": t},
                                  completion.prompt_tokens, completion.completion_tokens, time=run.now)
                    terminated = Termination.STOP
                    break
                assert action.directive is not None and action.manager_id is not None
                handle = self.registry.handle(action.manager_id)
                try:
                    summary = handle.handle_step(action.directive, run)
                except StepFailed as exc:
                    summary = StepSummary(f"Step failed: {exc}. No usable results were returned for this step.",
                                          action.manager_id, 0)
                ctx = append_exchange(ctx, action.directive, summary)
                run.context = ctx
                run.sink.emit(Actor.HOST, Kind.STEP, {
                    "step": t, "manager": action.manager_id, "directive": action.directive.text,
                    "summary": summary.text, "subtask_count": summary.subtask_count,
                    "flags": sorted(summary.escalation_flags),
                }, completion.prompt_tokens, completion.completion_tokens, time=run.now)
            answer = self.finalize(ctx, terminated, run)
        except InfoSeekerError as exc:
            run.sink.emit(Actor.HOST, Kind.ERROR, {
                "fatal": True, "error": type(exc).__name__, "message": str(exc),
                "steps_used": context_entry_count(ctx), "task_id": q.task_id, "query": q.text,
            }, time=run.now)
            run.sink.close()
            path = str(run.sink.path) if run.sink.path else None
            err = TaskFailed(f"task {q.task_id} failed: {type(exc).__name__}: {exc}", exc, path)
            err.sink = run.sink
            err.context = ctx
            raise err from exc
        run.sink.close()
        return answer, run.sink

"""Worker tier: one subtask, a bounded multi-turn tool loop, one result.

Tool payloads stay here. They go to the worker-local trace (a file per
subtask when a directory is configured) and to the buffered events the
manager later writes to the run trace, but never into the result text.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .backends import Backend, CompletionRequest, Role
from .core import Status, Subtask, SubtaskResult
from .errors import InfoSeekerError, TokenLimitExceeded, UnknownTool
from .mcp_tools import McpClient, ToolCall, ToolResult
from .prompts import render
from .scheduler import CancelToken


@dataclass(frozen=True)
class WorkerConfig:
    max_tool_turns: int = 12
    tool_retry_limit: int = 3
    worker_prompt_template: str = "worker"

    def __post_init__(self) -> None:
        if self.max_tool_turns < 1:
            raise ValueError("max_tool_turns must be >= 1")
        if self.tool_retry_limit < 0:
            raise ValueError("tool_retry_limit must be >= 0")


@dataclass
class PendingEvent:
    actor: str
    kind: str
    payload: dict[str, Any]
    tokens_in: int = 0
    tokens_out: int = 0


@dataclass
class WorkerTrace:
    """Events of one subtask run.

    Lines are written to ``path`` as they happen; ``events`` keeps the same
    records for the manager to copy into the run trace after the wave.
    """

    path: Path | None = None
    clock: Callable[[], float] = time.monotonic
    events: list[PendingEvent] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def add(self, actor: str, kind: str, payload: dict[str, Any], tokens_in: int = 0, tokens_out: int = 0) -> None:
        evt = PendingEvent(actor, kind, payload, tokens_in, tokens_out)
        if self.path is not None:
            record = {
                "seq": len(self.events), "time": self.clock(), "actor": actor, "kind": kind,
                "payload": payload, "tokens_in": tokens_in, "tokens_out": tokens_out,
            }
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True, separators=(",", ":")) + "\n")
        self.events.append(evt)


def worker_trace_path(root: Path, task_id: str, st: Subtask) -> Path:
    return root / str(task_id) / str(st.step_index) / f"{st.slot}.{st.revision}.trace"


def parse_tool_call(text: str) -> ToolCall | None:
    """A tool call is a JSON object ``{"tool": name, "arguments": {...}}``; anything else is final prose."""
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, TypeError):
        return None
    if not isinstance(doc, dict) or set(doc) - {"tool", "arguments"}:
        return None
    name, args = doc.get("tool"), doc.get("arguments", {})
    if not isinstance(name, str) or not name or not isinstance(args, dict):
        return None
    return ToolCall(name, args)


def _where(st: Subtask) -> dict[str, int]:
    return {"step": st.step_index, "slot": st.slot, "revision": st.revision}


def run_subtask(
    cfg: WorkerConfig,
    st: Subtask,
    tools: McpClient,
    backend: Backend,
    *,
    token: CancelToken | None = None,
    trace: WorkerTrace | None = None,
    duration_model: Callable[[Subtask], float] | None = None,
    system_prompt: str | None = None,
) -> SubtaskResult:
    """Run one subtask to a final answer.

    ``duration_model`` supplies the virtual duration of the subtask; without
    it the measured wall time is reported.
    """
    token = token or CancelToken()
    trace = trace or WorkerTrace()
    started = time.monotonic()
    if system_prompt is None:
        tool_lines = "\n".join(f"- {t.name}: {t.description}" for t in tools.cached_tools)
        system_prompt = render(cfg.worker_prompt_template, tools=tool_lines, subtask=st.text)
    transcript: list[tuple[str, str]] = [("user", st.text)]
    calls = 0
    tokens_in = tokens_out = 0

    def finish(status: Status, text: str, error: str | None = None) -> SubtaskResult:
        if duration_model is not None:
            duration = float(duration_model(st))
        else:
            duration = time.monotonic() - started
        return SubtaskResult(st, status, text, tool_call_count=calls, duration=duration,
                             tokens_in=tokens_in, tokens_out=tokens_out, error=error)

    while True:
        if token.cancelled:
            return finish(Status.TIMEOUT, token.partial_text, "cancelled by scheduler")
        req = CompletionRequest(Role.WORKER, system_prompt, tuple(transcript), script_key=f"worker:{st.key}")
        try:
            completion = backend.complete(req)
        except TokenLimitExceeded as exc:
            trace.add("WORKER", "ERROR", {**_where(st), "error": "TokenLimitExceeded", "message": str(exc)})
            return finish(Status.TOOL_ERROR, f"subtask abandoned: {exc}", "TokenLimitExceeded")
        except InfoSeekerError as exc:
            trace.add("WORKER", "ERROR", {**_where(st), "error": type(exc).__name__, "message": str(exc)})
            return finish(Status.TOOL_ERROR, f"subtask abandoned: {type(exc).__name__}", type(exc).__name__)
        tokens_in += completion.prompt_tokens
        tokens_out += completion.completion_tokens
        call = parse_tool_call(completion.text)
        if call is None:
            if not completion.text.strip():
                return finish(Status.TOOL_ERROR, "worker produced an empty answer", "EmptyAnswer")
            return finish(Status.OK, completion.text)
        if calls >= cfg.max_tool_turns:
            trace.add("WORKER", "WARNING", {**_where(st), "warning": "tool turn limit reached",
                                            "limit": cfg.max_tool_turns})
            return finish(Status.TOOL_ERROR, f"tool turn limit of {cfg.max_tool_turns} reached", "TurnLimit")
        failures = 0
        while True:
            call = ToolCall(call.tool_name, call.arguments, calls)
            trace.add("WORKER", "TOOL_CALL", {**_where(st), "tool": call.tool_name,
                                              "arguments": dict(call.arguments), "call_index": calls})
            calls += 1
            result = _invoke(tools, call)
            trace.add("TOOL", "TOOL_RESULT", {**_where(st), "tool": call.tool_name, "call_index": call.call_index,
                                              "is_error": result.is_error, "payload": result.payload})
            if not result.is_error:
                break
            failures += 1
            if failures > cfg.tool_retry_limit:
                return finish(Status.TOOL_ERROR,
                              f"tool {call.tool_name} failed after {failures} attempts", "ToolFailed")
            if calls >= cfg.max_tool_turns or token.cancelled:
                return finish(Status.TOOL_ERROR,
                              f"tool {call.tool_name} failed and the turn budget is spent", "ToolFailed")
        transcript.append(("assistant", completion.text))
        transcript.append(("tool", result.payload))


def _invoke(tools: McpClient, call: ToolCall) -> ToolResult:
    try:
        return tools.call_tool(call.tool_name, call.arguments)
    except UnknownTool as exc:
        return ToolResult(str(exc), is_error=True)
    except InfoSeekerError as exc:
        return ToolResult(f"{type(exc).__name__}: {exc}", is_error=True)


def make_executor(
    cfg: WorkerConfig,
    tools: McpClient,
    backend: Backend,
    traces: dict[str, WorkerTrace],
    *,
    trace_root: Path | None = None,
    task_id: str = "task",
    clock: Callable[[], float] = time.monotonic,
    duration_model: Callable[[Subtask], float] | None = None,
    system_prompt_for: Callable[[Subtask], str] | None = None,
) -> Callable[[Subtask, CancelToken], SubtaskResult]:
    """Bind worker dependencies into a scheduler executor.

    Each run registers its WorkerTrace in ``traces`` under the subtask key.
    """

    def execute(st: Subtask, token: CancelToken) -> SubtaskResult:
        path = worker_trace_path(trace_root, task_id, st) if trace_root is not None else None
        trace = WorkerTrace(path, clock)
        traces[st.key] = trace
        return run_subtask(
            cfg, st, tools, backend, token=token, trace=trace, duration_model=duration_model,
            system_prompt=system_prompt_for(st) if system_prompt_for else None,
        )

    return execute


def tool_payloads(events: list[PendingEvent]) -> list[str]:
    return [e.payload["payload"] for e in events if e.kind == "TOOL_RESULT"]

"""Domain types and the host-context algebra.

Every type here is a frozen dataclass; nothing is mutated after
construction, so values can be handed between threads freely.
"""

from __future__ import annotations

import enum
import json
import unicodedata
from dataclasses import dataclass, field, replace
from typing import Any, Collection, Iterable

from .errors import IndexGap, MalformedAction, UnknownManager


def nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def texts_equal(a: str, b: str) -> bool:
    """Compare two texts after NFC normalization (storage keeps them as given)."""
    return nfc(a) == nfc(b)


class ActionKind(str, enum.Enum):
    STEP = "STEP"
    STOP = "STOP"


class Status(str, enum.Enum):
    OK = "OK"
    TOOL_ERROR = "TOOL_ERROR"
    TIMEOUT = "TIMEOUT"


class Verdict(str, enum.Enum):
    ACCEPT = "ACCEPT"
    REVISE = "REVISE"


class Termination(str, enum.Enum):
    STOP = "STOP"
    STEP_LIMIT = "STEP_LIMIT"


@dataclass(frozen=True)
class TaskQuery:
    text: str
    task_id: str
    attachments: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("task text must be non-empty")
        if not str(self.task_id):
            raise ValueError("task_id must be non-empty")


@dataclass(frozen=True)
class StepDirective:
    text: str
    index: int

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("directive text must be non-empty")
        if self.index < 1:
            raise ValueError("directive index starts at 1")


@dataclass(frozen=True)
class StepSummary:
    text: str
    source_manager: str
    subtask_count: int = 0
    escalation_flags: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.subtask_count < 0:
            raise ValueError("subtask_count must be >= 0")


@dataclass(frozen=True)
class HostContext:
    """The initial query plus the ordered (directive, summary) exchanges.

    This is the only state the host reasons over. It never holds subtask
    texts or tool payloads.
    """

    query: TaskQuery
    exchanges: tuple[tuple[StepDirective, StepSummary], ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "query": self.query.text,
            "task_id": self.query.task_id,
            "exchanges": [
                {
                    "index": d.index,
                    "directive": d.text,
                    "manager": s.source_manager,
                    "summary": s.text,
                    "subtask_count": s.subtask_count,
                    "flags": sorted(s.escalation_flags),
                }
                for d, s in self.exchanges
            ],
        }

    def texts(self) -> Iterable[str]:
        """All directive and summary texts, in order."""
        for d, s in self.exchanges:
            yield d.text
            yield s.text


def append_exchange(ctx: HostContext, d: StepDirective, s: StepSummary) -> HostContext:
    expected = len(ctx.exchanges) + 1
    if d.index != expected:
        raise IndexGap(f"directive index {d.index} does not follow {expected - 1} completed steps")
    return replace(ctx, exchanges=ctx.exchanges + ((d, s),))


def context_entry_count(ctx: HostContext) -> int:
    return len(ctx.exchanges)


@dataclass(frozen=True)
class HostAction:
    kind: ActionKind
    directive: StepDirective | None = None
    manager_id: str | None = None

    def __post_init__(self) -> None:
        is_step = self.kind is ActionKind.STEP
        if is_step != (self.directive is not None) or is_step != (self.manager_id is not None):
            raise ValueError("directive and manager_id are present iff kind is STEP")


_ACTION_KEYS = {"kind", "directive", "manager"}


def validate_host_action(raw: str, registry: Collection[str], step_index: int = 1) -> HostAction:
    """Parse one host completion into a HostAction.

    The completion must be exactly one JSON object; trailing text after it
    is rejected by ``json.loads`` itself.
    """
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, TypeError) as exc:
        raise MalformedAction(f"not a JSON action document: {exc}") from None
    if not isinstance(doc, dict):
        raise MalformedAction("action document must be an object")
    extra = set(doc) - _ACTION_KEYS
    if extra:
        raise MalformedAction(f"unexpected fields: {sorted(extra)}")
    kind = doc.get("kind")
    if kind == "STOP":
        return HostAction(ActionKind.STOP)
    if kind != "STEP":
        raise MalformedAction(f"kind must be STEP or STOP, got {kind!r}")
    directive, manager = doc.get("directive"), doc.get("manager")
    if not isinstance(directive, str) or not directive.strip():
        raise MalformedAction("STEP requires a non-empty string 'directive'")
    if not isinstance(manager, str) or not manager:
        raise MalformedAction("STEP requires a string 'manager'")
    if manager not in registry:
        raise UnknownManager(f"manager {manager!r} is not registered (known: {sorted(registry)})")
    return HostAction(ActionKind.STEP, StepDirective(directive, step_index), manager)


@dataclass(frozen=True)
class Subtask:
    text: str
    step_index: int
    slot: int
    revision: int = 0

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("subtask text must be non-empty")
        if self.slot < 0 or self.revision < 0:
            raise ValueError("slot and revision must be >= 0")

    @property
    def key(self) -> str:
        return f"{self.step_index}.{self.slot}.{self.revision}"


@dataclass(frozen=True)
class SubtaskResult:
    subtask: Subtask
    status: Status
    text: str
    tool_call_count: int = 0
    duration: float = 0.0
    tokens_in: int = 0
    tokens_out: int = 0
    error: str | None = None

    def __post_init__(self) -> None:
        if self.status is Status.OK and not self.text.strip():
            raise ValueError("an OK result must carry text")
        if self.duration < 0:
            raise ValueError("duration must be >= 0")

    @property
    def ok(self) -> bool:
        return self.status is Status.OK


@dataclass(frozen=True)
class ReflectionVerdict:
    status: Verdict
    replacements: tuple[Subtask, ...] = ()
    # set when the round limit turned a REVISE into an ACCEPT
    forced: bool = False
    rationale: str = ""

    def __post_init__(self) -> None:
        if (self.status is Verdict.REVISE) != bool(self.replacements):
            raise ValueError("replacements are non-empty iff status is REVISE")


@dataclass(frozen=True)
class FinalAnswer:
    text: str
    steps_used: int
    terminated_by: Termination


@dataclass(frozen=True)
class SubtaskBatch:
    step_index: int
    subtasks: tuple[Subtask, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.subtasks)

    def __iter__(self):
        return iter(self.subtasks)

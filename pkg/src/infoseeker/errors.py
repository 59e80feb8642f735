"""Exception hierarchy shared across the engine.

Exit-code mapping used by the CLI: configuration/spec problems derive from
``ConfigError`` (exit 2); everything that aborts a task or a scenario
assertion maps to exit 1.
"""

from __future__ import annotations


class InfoSeekerError(Exception):
    """Base class for every engine error."""


# core
class IndexGap(InfoSeekerError):
    pass


class MalformedAction(InfoSeekerError):
    pass


class UnknownManager(InfoSeekerError):
    pass


# backends
class BackendUnavailable(InfoSeekerError):
    pass


class TokenLimitExceeded(InfoSeekerError):
    def __init__(self, estimated: int, ceiling: int):
        super().__init__(f"input tokens exceed limit of {ceiling} tokens (estimated {estimated})")
        self.estimated = estimated
        self.ceiling = ceiling


class ScriptExhausted(InfoSeekerError):
    pass


# host / manager
class PlanningFailed(InfoSeekerError):
    pass


class TaskFailed(InfoSeekerError):
    def __init__(self, message: str, cause: BaseException | None = None, trace_path: str | None = None):
        super().__init__(message)
        self.cause = cause
        self.trace_path = trace_path


class DecompositionFailed(InfoSeekerError):
    pass


class StepFailed(InfoSeekerError):
    pass


# mcp
class TransportError(InfoSeekerError):
    pass


class HandshakeFailed(TransportError):
    pass


class UnknownTool(InfoSeekerError):
    pass


# telemetry
class SinkUnavailable(InfoSeekerError):
    pass


class TraceOrderError(InfoSeekerError):
    pass


class TruncatedTrace(InfoSeekerError):
    pass


class MissingDurations(InfoSeekerError):
    pass


# config / scenarios
class ConfigError(InfoSeekerError):
    pass


class ConfigInvalid(ConfigError):
    pass


class ScenarioInvalid(ConfigError):
    pass

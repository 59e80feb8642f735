"""Completion backends for the three agent tiers.

Two implementations share one contract (``complete``): a scripted table
for offline runs and tests, and an HTTP client for chat-completions style
providers. Both enforce the same pre-flight token ceiling.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
import os
import threading
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .core import nfc
from .errors import BackendUnavailable, ConfigInvalid, ScriptExhausted, TokenLimitExceeded

log = logging.getLogger(__name__)

DEFAULT_TOKEN_CEILING = 272_000
CHARS_PER_TOKEN = 4
PARAM_KEYS = frozenset({"temperature", "max_tokens"})
SCRIPT_FORMAT = "infoseeker-script/1"


class Role(str, enum.Enum):
    HOST = "HOST"
    MANAGER = "MANAGER"
    WORKER = "WORKER"


@dataclass(frozen=True)
class CompletionRequest:
    role: Role
    system_prompt: str
    transcript: tuple[tuple[str, str], ...]
    params: Mapping[str, float] = field(default_factory=dict)
    # engine-chosen semantic key, e.g. "host:step1"; scripted backends try it first
    script_key: str | None = None

    def __post_init__(self) -> None:
        if not self.transcript:
            raise ValueError("transcript must be non-empty")
        unknown = set(self.params) - PARAM_KEYS
        if unknown:
            raise ValueError(f"unknown params: {sorted(unknown)}")

    def rendered(self) -> str:
        """The full prompt text as it would be sent; used for token estimates."""
        parts = [self.system_prompt]
        parts.extend(f"{speaker}: {text}" for speaker, text in self.transcript)
        return "\n\n".join(parts)


@dataclass(frozen=True)
class Completion:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / CHARS_PER_TOKEN)


def check_token_ceiling(req: CompletionRequest, ceiling: int | None) -> int:
    estimated = estimate_tokens(req.rendered())
    if ceiling is not None and estimated > ceiling:
        raise TokenLimitExceeded(estimated, ceiling)
    return estimated


def hash_key(req: CompletionRequest) -> str:
    last = req.transcript[-1][1]
    digest = hashlib.sha256(nfc(last).encode("utf-8")).hexdigest()[:12]
    return f"{req.role.value.lower()}:{digest}"


class Backend:
    """Base class: subclasses implement ``_complete``; usage is tallied here."""

    def __init__(self, token_ceiling: int | None = DEFAULT_TOKEN_CEILING):
        self.token_ceiling = token_ceiling
        self._usage_lock = threading.Lock()
        self.usage: Counter[str] = Counter()

    def complete(self, req: CompletionRequest) -> Completion:
        estimated = check_token_ceiling(req, self.token_ceiling)
        completion = self._complete(req, estimated)
        with self._usage_lock:
            self.usage[f"{req.role.value}:in"] += completion.prompt_tokens
            self.usage[f"{req.role.value}:out"] += completion.completion_tokens
        return completion

    def _complete(self, req: CompletionRequest, estimated: int) -> Completion:
        raise NotImplementedError


@dataclass
class _ScriptEntry:
    responses: list[str]
    repeat_last: bool = False
    cursor: int = 0


def _as_text(item: Any) -> str:
    if isinstance(item, str):
        return item
    # structured documents are written inline in scripts for readability
    return json.dumps(item, ensure_ascii=False)


class ScriptTable:
    """Ordered responses per match key, consumed in order.

    Lookup tries, in order: the request's explicit ``script_key``, the
    ``role:<hash of last transcript entry>`` key, then ``role:*``.
    """

    def __init__(self, entries: Mapping[str, Any]):
        self._entries: dict[str, _ScriptEntry] = {}
        for key, value in entries.items():
            if isinstance(value, list):
                self._entries[key] = _ScriptEntry([_as_text(v) for v in value])
            elif isinstance(value, dict) and "responses" in value:
                self._entries[key] = _ScriptEntry(
                    [_as_text(v) for v in value["responses"]], bool(value.get("repeat_last", False))
                )
            elif isinstance(value, dict) and "repeat" in value:
                self._entries[key] = _ScriptEntry([_as_text(value["repeat"])], repeat_last=True)
            else:
                raise ConfigInvalid(f"script entry {key!r} must be a list or a responses/repeat object")
        self._lock = threading.Lock()

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> ScriptTable:
        if not isinstance(doc, Mapping) or "entries" not in doc:
            raise ConfigInvalid("script document needs an 'entries' mapping")
        fmt = doc.get("format", SCRIPT_FORMAT)
        if fmt != SCRIPT_FORMAT:
            raise ConfigInvalid(f"unsupported script format {fmt!r}")
        return cls(doc["entries"])

    @classmethod
    def load(cls, path: str | Path) -> ScriptTable:
        with open(path, encoding="utf-8") as fh:
            return cls.from_document(json.load(fh))

    def keys(self) -> list[str]:
        return list(self._entries)

    def next_for(self, req: CompletionRequest) -> tuple[str, str]:
        candidates = [hash_key(req), f"{req.role.value.lower()}:*"]
        if req.script_key:
            candidates.insert(0, req.script_key)
        with self._lock:
            for key in candidates:
                entry = self._entries.get(key)
                if entry is None:
                    continue
                if entry.cursor >= len(entry.responses):
                    if entry.repeat_last and entry.responses:
                        return key, entry.responses[-1]
                    raise ScriptExhausted(f"script key {key!r} has no responses left")
                text = entry.responses[entry.cursor]
                entry.cursor += 1
                return key, text
        raise ScriptExhausted(f"no script entry for any of {candidates}")


class ScriptedBackend(Backend):
    """Deterministic backend driven by a ScriptTable.

    Every request is kept in ``requests`` so tests can compare the exact
    prompt bytes a tier was shown.
    """

    def __init__(self, table: ScriptTable, token_ceiling: int | None = DEFAULT_TOKEN_CEILING):
        super().__init__(token_ceiling)
        self.table = table
        self.requests: list[CompletionRequest] = []
        self._req_lock = threading.Lock()

    def _complete(self, req: CompletionRequest, estimated: int) -> Completion:
        with self._req_lock:
            self.requests.append(req)
        _, text = self.table.next_for(req)
        return Completion(text, prompt_tokens=estimated, completion_tokens=estimate_tokens(text))


_SPEAKER_ROLES = {"user": "user", "assistant": "assistant", "system": "system"}


class HttpChatBackend(Backend):
    """Chat-completions style HTTP backend.

    The bearer token is read from the environment variable named by
    ``api_key_env`` at call time; it is never stored in config files.
    """

    def __init__(
        self,
        url: str,
        model: str,
        api_key_env: str | None = None,
        temperature: float = 1.0,
        max_tokens: int | None = None,
        timeout: float = 120.0,
        token_ceiling: int | None = DEFAULT_TOKEN_CEILING,
    ):
        super().__init__(token_ceiling)
        self.url = url
        self.model = model
        self.api_key_env = api_key_env
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.timeout = timeout

    def build_body(self, req: CompletionRequest) -> dict[str, Any]:
        messages = [{"role": "system", "content": req.system_prompt}] if req.system_prompt else []
        for speaker, text in req.transcript:
            role = _SPEAKER_ROLES.get(speaker)
            if role is None:
                # tool output goes back as a user turn; provider function calling is not used
                role, text = "user", f"[{speaker} output]\n{text}"
            messages.append({"role": role, "content": text})
        body: dict[str, Any] = {
            "model": self.model,
            "messages": messages,
            "temperature": req.params.get("temperature", self.temperature),
        }
        max_tokens = req.params.get("max_tokens", self.max_tokens)
        if max_tokens is not None:
            body["max_tokens"] = int(max_tokens)
        return body

    def _complete(self, req: CompletionRequest, estimated: int) -> Completion:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if not key:
                raise BackendUnavailable(f"environment variable {self.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        data = json.dumps(self.build_body(req)).encode("utf-8")
        http_req = urllib.request.Request(self.url, data=data, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(http_req, timeout=self.timeout) as resp:
                doc = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            detail = exc.read().decode("utf-8", "replace")[:500]
            raise BackendUnavailable(f"HTTP {exc.code} from {self.url}: {detail}") from exc
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise BackendUnavailable(f"cannot reach {self.url}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise BackendUnavailable(f"non-JSON response from {self.url}") from exc
        try:
            text = doc["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"unexpected response shape: {str(doc)[:200]}") from exc
        usage = doc.get("usage") or {}
        return Completion(
            text,
            prompt_tokens=int(usage.get("prompt_tokens", estimated)),
            completion_tokens=int(usage.get("completion_tokens", estimate_tokens(text))),
        )


def backend_from_config(spec: Mapping[str, Any], base_dir: Path, token_ceiling: int | None) -> Backend:
    kind = spec.get("kind")
    if kind == "scripted":
        if "script" in spec:
            script = spec["script"]
            if isinstance(script, str):
                path = base_dir / script
                if not path.is_file():
                    raise ConfigInvalid(f"script file not found: {path}")
                table = ScriptTable.load(path)
            else:
                table = ScriptTable.from_document(script)
        else:
            raise ConfigInvalid("scripted backend needs a 'script'")
        return ScriptedBackend(table, token_ceiling=token_ceiling)
    if kind == "http":
        for required in ("url", "model"):
            if required not in spec:
                raise ConfigInvalid(f"http backend needs {required!r}")
        return HttpChatBackend(
            spec["url"],
            spec["model"],
            api_key_env=spec.get("api_key_env"),
            temperature=float(spec.get("temperature", 1.0)),
            max_tokens=spec.get("max_tokens"),
            timeout=float(spec.get("timeout", 120.0)),
            token_ceiling=token_ceiling,
        )
    raise ConfigInvalid(f"unknown backend kind {kind!r}")

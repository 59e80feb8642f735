"""A minimal MCP-style tool protocol: client, transports and a mock server.

Envelopes are JSON-RPC 2.0 objects, one per line, UTF-8. Only
``initialize``, ``tools/list`` and ``tools/call`` are implemented, plus the
``notifications/initialized`` notification the client sends after the
handshake.

Run ``python -m infoseeker.mcp_tools FIXTURE.json`` to serve a mock fixture
over stdin/stdout.
"""

from __future__ import annotations

import concurrent.futures as cf
import hashlib
import itertools
import json
import logging
import queue
import subprocess
import sys
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import __version__
from .errors import ConfigInvalid, HandshakeFailed, TransportError, UnknownTool

log = logging.getLogger(__name__)

PROTOCOL_VERSION = "2024-11-05"
FIXTURE_FORMAT = "infoseeker-mcp-fixture/1"
SENTINEL_PREFIX = "SNTL-"

# JSON-RPC error codes
PARSE_ERROR = -32700
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    description: str = ""
    input_schema: Mapping[str, Any] = field(default_factory=lambda: {"type": "object"})

    def to_wire(self) -> dict[str, Any]:
        return {"name": self.name, "description": self.description, "inputSchema": dict(self.input_schema)}


@dataclass(frozen=True)
class ToolCall:
    tool_name: str
    arguments: Mapping[str, Any]
    call_index: int = 0


@dataclass(frozen=True)
class ToolResult:
    payload: str
    is_error: bool = False

    def __post_init__(self) -> None:
        if self.is_error and not self.payload:
            raise ValueError("error results carry a message")


@dataclass(frozen=True)
class ServerCapabilities:
    server_name: str
    server_version: str
    protocol_version: str
    tool_count: int


def encode(envelope: Mapping[str, Any]) -> str:
    """Canonical single-line encoding; golden transcripts depend on it."""
    return json.dumps(envelope, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def args_digest(args: Mapping[str, Any]) -> str:
    canonical = json.dumps(args, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def sentinel_token(tool: str, digest: str, n: int) -> str:
    return SENTINEL_PREFIX + hashlib.sha256(f"{tool}|{digest}|{n}".encode()).hexdigest()[:16]


def default_search_tools() -> list[ToolDescriptor]:
    return [
        ToolDescriptor(
            "web_search",
            "Search the web and return ranked result snippets.",
            {"type": "object", "properties": {"query": {"type": "string"}}, "required": ["query"]},
        ),
        ToolDescriptor(
            "fetch_page",
            "Fetch a URL and return its readable text.",
            {"type": "object", "properties": {"url": {"type": "string"}}, "required": ["url"]},
        ),
    ]


def _reply_from(item: Any) -> ToolResult:
    if isinstance(item, str):
        return ToolResult(item)
    if not isinstance(item, Mapping):
        raise ConfigInvalid(f"fixture reply must be a string or object, got {type(item).__name__}")
    if "text_repeat" in item:
        spec = item["text_repeat"]
        text = str(spec["text"]) * int(spec["times"])
    else:
        text = str(item.get("text", ""))
    is_error = bool(item.get("is_error", False))
    if is_error and not text:
        text = "tool error"
    return ToolResult(text, is_error)


class MockToolServer:
    """In-process tool server answering from a fixture.

    Replies are keyed by (tool name, canonical argument digest) and consumed
    in order; the last reply repeats once a list is exhausted. Safe under
    concurrent calls.
    """

    def __init__(
        self,
        tools: Sequence[ToolDescriptor] = (),
        responses: Mapping[tuple[str, str], Sequence[ToolResult]] | None = None,
        defaults: Mapping[str, ToolResult] | None = None,
        name: str = "mock-tools",
        version: str = "1.0.0",
        sentinel: bool = False,
    ):
        names = [t.name for t in tools]
        if len(set(names)) != len(names):
            raise ConfigInvalid("tool names must be unique per server")
        self.tools = list(tools)
        self.responses = {k: list(v) for k, v in (responses or {}).items()}
        self.defaults = dict(defaults or {})
        self.name = name
        self.version = version
        self.sentinel = sentinel
        self.call_counts: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_fixture(cls, doc: Mapping[str, Any], sentinel: bool | None = None) -> MockToolServer:
        fmt = doc.get("format", FIXTURE_FORMAT)
        if fmt != FIXTURE_FORMAT:
            raise ConfigInvalid(f"unsupported fixture format {fmt!r}")
        if "tools" in doc:
            tools = [
                ToolDescriptor(t["name"], t.get("description", ""), t.get("input_schema", {"type": "object"}))
                for t in doc["tools"]
            ]
        else:
            tools = default_search_tools()
        responses: dict[tuple[str, str], list[ToolResult]] = {}
        for entry in doc.get("responses", []):
            digest = entry.get("digest") or args_digest(entry.get("args", {}))
            replies = [_reply_from(r) for r in entry.get("replies", [])]
            if not replies:
                raise ConfigInvalid(f"fixture entry for {entry.get('tool')!r} has no replies")
            responses.setdefault((entry["tool"], digest), []).extend(replies)
        defaults = {k: _reply_from(v) for k, v in doc.get("defaults", {}).items()}
        server = doc.get("server", {})
        return cls(
            tools, responses, defaults,
            name=server.get("name", "mock-tools"), version=server.get("version", "1.0.0"),
            sentinel=bool(doc.get("sentinel", False)) if sentinel is None else sentinel,
        )

    @classmethod
    def load(cls, path: str | Path, sentinel: bool | None = None) -> MockToolServer:
        with open(path, encoding="utf-8") as fh:
            return cls.from_fixture(json.load(fh), sentinel=sentinel)

    def _call(self, name: str, args: Mapping[str, Any]) -> ToolResult:
        digest = args_digest(args)
        key = (name, digest)
        with self._lock:
            n = self.call_counts.get(key, 0)
            self.call_counts[key] = n + 1
        replies = self.responses.get(key)
        if replies:
            result = replies[min(n, len(replies) - 1)]
        elif name in self.defaults:
            result = self.defaults[name]
        else:
            return ToolResult(f"no fixture reply for {name} with argument digest {digest}", is_error=True)
        if self.sentinel and not result.is_error:
            result = ToolResult(f"{result.payload}\n{sentinel_token(name, digest, n)}")
        return result

    def handle(self, line: str) -> str | None:
        """Answer one request line; notifications get no reply."""
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            return encode({"jsonrpc": "2.0", "id": None, "error": {"code": PARSE_ERROR, "message": "parse error"}})
        if not isinstance(msg, dict):
            return encode({"jsonrpc": "2.0", "id": None, "error": {"code": PARSE_ERROR, "message": "parse error"}})
        if "id" not in msg:
            return None
        rid, method, params = msg["id"], msg.get("method"), msg.get("params") or {}
        if method == "initialize":
            result: dict[str, Any] = {
                "protocolVersion": PROTOCOL_VERSION,
                "capabilities": {"tools": {"listChanged": False}},
                "serverInfo": {"name": self.name, "version": self.version},
            }
        elif method == "tools/list":
            result = {"tools": [t.to_wire() for t in self.tools]}
        elif method == "tools/call":
            name = params.get("name")
            if name not in {t.name for t in self.tools}:
                return encode({"jsonrpc": "2.0", "id": rid,
                               "error": {"code": INVALID_PARAMS, "message": f"Unknown tool: {name}"}})
            res = self._call(name, params.get("arguments") or {})
            result = {"content": [{"type": "text", "text": res.payload}], "isError": res.is_error}
        else:
            return encode({"jsonrpc": "2.0", "id": rid,
                           "error": {"code": METHOD_NOT_FOUND, "message": f"Method not found: {method}"}})
        return encode({"jsonrpc": "2.0", "id": rid, "result": result})


class Transport:
    def write_line(self, line: str) -> None:
        raise NotImplementedError

    def read_line(self) -> str | None:
        """Block for the next line; ``None`` means the peer closed."""
        raise NotImplementedError

    def close(self) -> None:
        pass


class LoopbackTransport(Transport):
    """Direct in-process binding to a MockToolServer.

    Requests are handled on a small thread pool, so replies to concurrent
    callers can come back out of order just as they would over a pipe.
    """

    def __init__(self, server: MockToolServer, max_workers: int = 16):
        self.server = server
        self._inbox: queue.Queue[str | None] = queue.Queue()
        self._pool = cf.ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="mock-mcp")
        self._closed = False

    def write_line(self, line: str) -> None:
        if self._closed:
            raise TransportError("transport closed")
        self._pool.submit(self._serve, line)

    def _serve(self, line: str) -> None:
        reply = self.server.handle(line)
        if reply is not None:
            self._inbox.put(reply)

    def read_line(self) -> str | None:
        return self._inbox.get()

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._pool.shutdown(wait=True)
            self._inbox.put(None)


class StdioTransport(Transport):
    """Newline-delimited envelopes over a child process's stdin/stdout."""

    def __init__(self, command: Sequence[str], cwd: str | None = None):
        try:
            self.proc = subprocess.Popen(
                list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL, cwd=cwd, encoding="utf-8", bufsize=1,
            )
        except OSError as exc:
            raise TransportError(f"cannot start tool server {command!r}: {exc}") from exc

    def write_line(self, line: str) -> None:
        assert self.proc.stdin is not None
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise TransportError("tool server pipe closed") from exc

    def read_line(self) -> str | None:
        assert self.proc.stdout is not None
        line = self.proc.stdout.readline()
        return line.rstrip("\n") if line else None

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                assert self.proc.stdin is not None
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()


class McpClient:
    """Tool client shared by all workers of a manager.

    Writes are serialized; a reader thread demultiplexes replies by id.
    Every envelope sent or received is appended to ``transcript`` as
    ``(">", line)`` or ``("<", line)``.
    """

    def __init__(self, transport: Transport, timeout: float = 60.0):
        self.transport = transport
        self.timeout = timeout
        self.transcript: list[tuple[str, str]] = []
        self._ids = itertools.count(1)
        self._pending: dict[int, cf.Future] = {}
        self._lock = threading.Lock()
        self._write_lock = threading.Lock()
        self._closed = False
        self._tools: list[ToolDescriptor] | None = None
        self._reader = threading.Thread(target=self._read_loop, name="mcp-reader", daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        while True:
            try:
                line = self.transport.read_line()
            except Exception as exc:  # transport-specific failures end the stream
                log.warning("tool transport read failed: %s", exc)
                line = None
            if line is None:
                break
            with self._lock:
                self.transcript.append(("<", line))
            try:
                msg = json.loads(line)
                rid = msg.get("id")
            except (json.JSONDecodeError, AttributeError):
                log.warning("dropping unparseable envelope: %.200s", line)
                continue
            with self._lock:
                fut = self._pending.pop(rid, None)
            if fut is None:
                log.warning("reply for unknown id %r", rid)
                continue
            fut.set_result(msg)
        with self._lock:
            self._closed = True
            pending, self._pending = self._pending, {}
        for fut in pending.values():
            fut.set_exception(TransportError("tool server closed the connection"))

    def _send(self, envelope: dict[str, Any]) -> None:
        line = encode(envelope)
        with self._write_lock:
            with self._lock:
                if self._closed:
                    raise TransportError("tool server closed the connection")
                self.transcript.append((">", line))
            self.transport.write_line(line)

    def request(self, method: str, params: Mapping[str, Any] | None = None) -> dict[str, Any]:
        fut: cf.Future = cf.Future()
        with self._lock:
            if self._closed:
                raise TransportError("tool server closed the connection")
            rid = next(self._ids)
            self._pending[rid] = fut
        envelope: dict[str, Any] = {"jsonrpc": "2.0", "id": rid, "method": method}
        if params is not None:
            envelope["params"] = dict(params)
        try:
            self._send(envelope)
        except TransportError:
            with self._lock:
                self._pending.pop(rid, None)
            raise
        try:
            return fut.result(timeout=self.timeout)
        except cf.TimeoutError as exc:
            with self._lock:
                self._pending.pop(rid, None)
            raise TransportError(f"no reply to {method} within {self.timeout}s") from exc

    def notify(self, method: str, params: Mapping[str, Any] | None = None) -> None:
        envelope: dict[str, Any] = {"jsonrpc": "2.0", "method": method}
        if params is not None:
            envelope["params"] = dict(params)
        self._send(envelope)

    def initialize(self) -> ServerCapabilities:
        try:
            reply = self.request("initialize", {
                "protocolVersion": PROTOCOL_VERSION,
                "capabilities": {},
                "clientInfo": {"name": "infoseeker", "version": __version__},
            })
            if "error" in reply:
                raise HandshakeFailed(f"initialize rejected: {reply['error'].get('message')}")
            info = reply["result"]
            self.notify("notifications/initialized")
            tools = self.list_tools()
        except HandshakeFailed:
            raise
        except (TransportError, KeyError, TypeError) as exc:
            raise HandshakeFailed(f"handshake failed: {exc}") from exc
        server = info.get("serverInfo", {})
        return ServerCapabilities(
            server.get("name", ""), server.get("version", ""), info.get("protocolVersion", ""), len(tools)
        )

    @property
    def cached_tools(self) -> list[ToolDescriptor]:
        """Descriptors from the last ``tools/list`` reply (empty before one)."""
        return list(self._tools or [])

    def list_tools(self) -> list[ToolDescriptor]:
        reply = self.request("tools/list")
        if "error" in reply:
            raise TransportError(f"tools/list failed: {reply['error'].get('message')}")
        tools = [
            ToolDescriptor(t["name"], t.get("description", ""), t.get("inputSchema", {"type": "object"}))
            for t in reply["result"].get("tools", [])
        ]
        self._tools = tools
        return tools

    def call_tool(self, name: str, args: Mapping[str, Any]) -> ToolResult:
        known = self._tools if self._tools is not None else self.list_tools()
        if name not in {t.name for t in known}:
            raise UnknownTool(f"tool {name!r} is not offered by the server")
        reply = self.request("tools/call", {"name": name, "arguments": dict(args)})
        if "error" in reply:
            err = reply["error"]
            if err.get("code") == INVALID_PARAMS and "Unknown tool" in str(err.get("message")):
                raise UnknownTool(str(err.get("message")))
            return ToolResult(str(err.get("message") or "tool error"), is_error=True)
        result = reply.get("result") or {}
        text = "\n".join(
            part.get("text", "") for part in result.get("content", []) if part.get("type") == "text"
        )
        is_error = bool(result.get("isError", False))
        if is_error and not text:
            text = "tool error"
        return ToolResult(text, is_error)

    def close(self) -> None:
        self.transport.close()


def serve_stdio(server: MockToolServer, stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.rstrip("\n")
        if not line:
            continue
        reply = server.handle(line)
        if reply is not None:
            stdout.write(reply + "\n")
            stdout.flush()


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if len(argv) != 1:
        print("usage: python -m infoseeker.mcp_tools FIXTURE.json", file=sys.stderr)
        return 2
    sys.stdin.reconfigure(encoding="utf-8")
    sys.stdout.reconfigure(encoding="utf-8")
    serve_stdio(MockToolServer.load(argv[0]))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

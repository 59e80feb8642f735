from __future__ import annotations

import json
import sys
import threading
from collections import Counter
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from infoseeker.errors import HandshakeFailed, UnknownTool
from infoseeker.mcp_tools import (
    LoopbackTransport, McpClient, MockToolServer, StdioTransport, Transport, args_digest, encode,
    sentinel_token,
)

GOLDEN_NAMES = ("handshake", "list", "call")
FIXTURES = Path(__file__).parent / "fixtures"


def client_for(path, sentinel=False):
    return McpClient(LoopbackTransport(MockToolServer.load(path, sentinel=sentinel)))


def transcript_lines(client):
    return [f"{d} {line}" for d, line in client.transcript]


def session(fixtures_dir, name):
    """Run one scripted session and return its transcript lines."""
    c = client_for(fixtures_dir / "search_tools.json")
    try:
        c.initialize()
        if name in ("list", "call"):
            c.list_tools()
        if name == "call":
            c.call_tool("web_search", {"query": "michelin 3 star paris"})
            c.call_tool("fetch_page", {"url": "https://flaky.example/page"})
            c.call_tool("fetch_page", {"url": "https://flaky.example/page"})
            c.request("tools/call", {"name": "no_such_tool", "arguments": {}})
            c.request("resources/list")
    finally:
        c.close()
    return transcript_lines(c)


@pytest.mark.parametrize("name", GOLDEN_NAMES)
def test_golden_transcripts(fixtures_dir, name):
    golden = (fixtures_dir / f"mcp_{name}.golden.txt").read_text(encoding="utf-8").splitlines()
    assert session(fixtures_dir, name) == golden


def test_two_handshakes_byte_identical(fixtures_dir):
    a, b = session(fixtures_dir, "handshake"), session(fixtures_dir, "handshake")
    assert a == b


def test_capabilities(fixtures_dir):
    c = client_for(fixtures_dir / "search_tools.json")
    caps = c.initialize()
    assert (caps.server_name, caps.tool_count) == ("mock-search", 2)
    assert {t.name for t in c.list_tools()} == {"web_search", "fetch_page"}
    assert c.list_tools() == c.list_tools()
    c.close()


def test_empty_server(fixtures_dir):
    c = client_for(fixtures_dir / "empty_tools.json")
    assert c.initialize().tool_count == 0
    assert c.list_tools() == []
    c.close()


def test_call_results(fixtures_dir):
    c = client_for(fixtures_dir / "search_tools.json")
    c.initialize()
    r = c.call_tool("web_search", {"query": "michelin 3 star paris"})
    assert not r.is_error and r.payload.startswith("1. MICHELIN Guide")
    first = c.call_tool("fetch_page", {"url": "https://flaky.example/page"})
    second = c.call_tool("fetch_page", {"url": "https://flaky.example/page"})
    assert (first.is_error, second.is_error) == (True, False)
    assert second.payload == "Recovered page body after a retry."
    with pytest.raises(UnknownTool):
        c.call_tool("no_such_tool", {})
    c.close()


def test_missing_fixture_entry_is_tool_error(fixtures_dir):
    c = client_for(fixtures_dir / "search_tools.json")
    c.initialize()
    r = c.call_tool("fetch_page", {"url": "https://unknown.example"})
    assert r.is_error and args_digest({"url": "https://unknown.example"}) in r.payload
    c.close()


def test_sentinels_are_deterministic_and_unique(fixtures_dir):
    payloads = []
    for _ in range(2):
        c = client_for(fixtures_dir / "search_tools.json", sentinel=True)
        c.initialize()
        payloads.append([c.call_tool("web_search", {"query": q}).payload for q in ("a", "b", "a")])
        c.close()
    assert payloads[0] == payloads[1]
    tails = [p.rsplit("\n", 1)[1] for p in payloads[0]]
    assert len(set(tails)) == 3 and all(t.startswith("SNTL-") and len(t) == 21 for t in tails)


class _HangUp(Transport):
    """Answers nothing and reports the stream closed."""

    def write_line(self, line):
        pass

    def read_line(self):
        return None


def test_closed_mid_handshake():
    with pytest.raises(HandshakeFailed):
        McpClient(_HangUp()).initialize()


def test_stdio_transport_matches_loopback(fixtures_dir):
    fixture = str(fixtures_dir / "search_tools.json")
    c = McpClient(StdioTransport([sys.executable, "-m", "infoseeker.mcp_tools", fixture]), timeout=20)
    try:
        caps = c.initialize()
        r = c.call_tool("web_search", {"query": "michelin 3 star paris"})
    finally:
        c.close()
    assert caps.tool_count == 2
    assert r.payload.startswith("1. MICHELIN Guide")
    handshake = session(fixtures_dir, "handshake")
    assert transcript_lines(c)[:len(handshake)] == handshake


def test_server_parse_error_and_notification():
    s = MockToolServer()
    assert json.loads(s.handle("{not json"))["error"]["code"] == -32700
    assert s.handle(encode({"jsonrpc": "2.0", "method": "notifications/initialized"})) is None


@settings(max_examples=15, deadline=None)
@given(st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=16, max_size=64))
def test_concurrent_calls_keep_id_pairing(queries):
    c = client_for(FIXTURES / "search_tools.json", sentinel=True)
    c.initialize()
    results = [None] * len(queries)
    errors = []
    barrier = threading.Barrier(16)

    def worker(w):
        try:
            barrier.wait()
            for i in range(w, len(queries), 16):
                results[i] = c.call_tool("web_search", {"query": queries[i]}).payload
        except Exception as exc:  # surfaced by the assertion below
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(w,)) for w in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    c.close()
    assert not errors
    sent = [json.loads(line) for d, line in c.transcript if d == ">" and "id" in json.loads(line)]
    recv = [json.loads(line) for d, line in c.transcript if d == "<"]
    ids = [m["id"] for m in sent]
    assert len(ids) == len(set(ids))
    assert Counter(m["id"] for m in recv) == Counter(ids)
    # pairing: a caller's sentinel is derived from its own query digest, so a
    # reply routed to the wrong caller would carry another query's token
    per_query = Counter(queries)
    for i, q in enumerate(queries):
        own = {sentinel_token("web_search", args_digest({"query": q}), n) for n in range(per_query[q])}
        assert results[i].rsplit("\n", 1)[1] in own
    for q, n in per_query.items():
        tails = {results[i].rsplit("\n", 1)[1] for i, qq in enumerate(queries) if qq == q}
        assert len(tails) == n

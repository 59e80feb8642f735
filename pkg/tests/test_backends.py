from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given, strategies as st

from infoseeker.backends import (
    CompletionRequest, HttpChatBackend, Role, ScriptedBackend, ScriptTable, backend_from_config, estimate_tokens,
    hash_key,
)
from infoseeker.errors import BackendUnavailable, ConfigInvalid, ScriptExhausted, TokenLimitExceeded


def req(text="hello", role=Role.HOST, key=None, system=""):
    return CompletionRequest(role, system, (("user", text),), script_key=key)


def test_script_key_lookup():
    b = ScriptedBackend(ScriptTable({"host:step1": ['{"kind": "STOP"}']}))
    assert b.complete(req(key="host:step1")).text == '{"kind": "STOP"}'


def test_entries_consumed_in_order_then_exhausted():
    b = ScriptedBackend(ScriptTable({"k": ["one", "two"]}))
    assert [b.complete(req(key="k")).text for _ in range(2)] == ["one", "two"]
    with pytest.raises(ScriptExhausted):
        b.complete(req(key="k"))


def test_repeat_and_structured_entries():
    t = ScriptTable({"a": {"repeat": "same"}, "b": {"responses": [{"kind": "STOP"}], "repeat_last": True}})
    b = ScriptedBackend(t)
    assert {b.complete(req(key="a")).text for _ in range(3)} == {"same"}
    assert [b.complete(req(key="b")).text for _ in range(2)] == ['{"kind": "STOP"}'] * 2


def test_fallback_to_hash_then_wildcard():
    r = req("exact prompt")
    t = ScriptTable({hash_key(r): ["by hash"], "host:*": {"repeat": "wild"}})
    b = ScriptedBackend(t)
    assert b.complete(r).text == "by hash"
    assert b.complete(req("other")).text == "wild"
    assert hash_key(r).startswith("host:") and len(hash_key(r)) == len("host:") + 12


def test_token_ceiling_raises_before_consuming():
    b = ScriptedBackend(ScriptTable({"k": ["x"]}), token_ceiling=10)
    with pytest.raises(TokenLimitExceeded) as exc:
        b.complete(req("y" * 100, key="k"))
    assert exc.value.ceiling == 10 and exc.value.estimated > 10
    assert b.requests == []


def test_default_ceiling_value():
    from infoseeker.backends import DEFAULT_TOKEN_CEILING
    assert DEFAULT_TOKEN_CEILING == 272_000
    b = ScriptedBackend(ScriptTable({"k": ["x"]}))
    with pytest.raises(TokenLimitExceeded):
        b.complete(req("z" * (272_000 * 4 + 4), key="k"))


def test_estimate_tokens():
    assert estimate_tokens("") == 0
    est = estimate_tokens("a" * 4000)
    assert est == 4000 // 4 and 500 <= est <= 2000


@given(st.text(), st.text())
def test_estimate_monotone(s, t):
    assert estimate_tokens(s + t) >= estimate_tokens(s)


def test_usage_additivity():
    b = ScriptedBackend(ScriptTable({"host:*": {"repeat": "abcdefgh"}}))
    outs = [b.complete(req("p" * n)) for n in (4, 40, 400)]
    assert b.usage["HOST:in"] == sum(c.prompt_tokens for c in outs)
    assert b.usage["HOST:out"] == 3 * 2


def test_scripted_determinism():
    doc = {"entries": {"host:*": ["a", "b", "c"]}}
    runs = [[ScriptedBackend(ScriptTable.from_document(doc)).complete(req()).text]
            for _ in range(2)]
    assert runs[0] == runs[1]


def test_request_validation():
    with pytest.raises(ValueError):
        CompletionRequest(Role.HOST, "", ())
    with pytest.raises(ValueError):
        CompletionRequest(Role.HOST, "", (("user", "x"),), params={"top_k": 3})


def test_script_document_checks(tmp_path):
    with pytest.raises(ConfigInvalid):
        ScriptTable.from_document({"format": "other/9", "entries": {}})
    with pytest.raises(ConfigInvalid):
        ScriptTable({"k": 3})
    with pytest.raises(ConfigInvalid):
        backend_from_config({"kind": "scripted", "script": "missing.json"}, tmp_path, None)
    with pytest.raises(ConfigInvalid):
        backend_from_config({"kind": "carrier-pigeon"}, tmp_path, None)


class _Handler(BaseHTTPRequestHandler):
    seen: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append((dict(self.headers), body))
        if body["model"] == "broken":
            self.send_response(500)
            self.end_headers()
            self.wfile.write(b"boom")
            return
        out = {"choices": [{"message": {"content": "pong"}}], "usage": {"prompt_tokens": 7, "completion_tokens": 1}}
        data = json.dumps(out).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def chat_server():
    _Handler.seen = []
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    th = threading.Thread(target=srv.serve_forever, daemon=True)
    th.start()
    yield f"http://127.0.0.1:{srv.server_port}/v1/chat/completions"
    srv.shutdown()


def test_http_backend_roundtrip(chat_server, monkeypatch):
    monkeypatch.setenv("TEST_CHAT_KEY", "sekret")
    b = HttpChatBackend(chat_server, "m1", api_key_env="TEST_CHAT_KEY", max_tokens=64)
    r = CompletionRequest(Role.WORKER, "sys", (("user", "ping"), ("assistant", "{}"), ("tool", "data")),
                          params={"temperature": 0.2})
    c = b.complete(r)
    assert (c.text, c.prompt_tokens, c.completion_tokens) == ("pong", 7, 1)
    headers, body = _Handler.seen[0]
    assert headers["Authorization"] == "Bearer sekret"
    assert body["temperature"] == 0.2 and body["max_tokens"] == 64
    assert [m["role"] for m in body["messages"]] == ["system", "user", "assistant", "user"]
    assert body["messages"][-1]["content"].endswith("data")
    assert b.usage["WORKER:in"] == 7


def test_http_backend_errors(chat_server, monkeypatch):
    monkeypatch.delenv("MISSING_KEY_VAR", raising=False)
    with pytest.raises(BackendUnavailable):
        HttpChatBackend(chat_server, "m", api_key_env="MISSING_KEY_VAR").complete(req())
    with pytest.raises(BackendUnavailable):
        HttpChatBackend(chat_server, "broken").complete(req())
    with pytest.raises(BackendUnavailable):
        HttpChatBackend("http://127.0.0.1:9/none", "m", timeout=2).complete(req())


def test_http_backend_from_config(tmp_path):
    b = backend_from_config({"kind": "http", "url": "http://x", "model": "m", "api_key_env": "K"}, tmp_path, 100)
    assert isinstance(b, HttpChatBackend) and b.token_ceiling == 100
    with pytest.raises(ConfigInvalid):
        backend_from_config({"kind": "http", "url": "http://x"}, tmp_path, 100)

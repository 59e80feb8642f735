"""Small builders for scripted engines used across the tests."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from infoseeker.config import EngineConfig, build_engine
from infoseeker.simharness import DurationTable

ACCEPT = {"status": "accept"}
STOP = {"kind": "STOP"}


def step(directive: str, manager: str = "search") -> dict:
    return {"kind": "STEP", "directive": directive, "manager": manager}


def call(tool: str, **arguments) -> dict:
    return {"tool": tool, "arguments": arguments}


def scripted(entries: dict) -> dict:
    return {"kind": "scripted", "script": {"entries": entries}}


def fixture(**extra) -> dict:
    doc = {"format": "infoseeker-mcp-fixture/1",
           "defaults": {"web_search": "Result list: alpha, beta, gamma. Ranked by relevance for the query.",
                        "fetch_page": "Readable page text with headings and a short body for the request."}}
    doc.update(extra)
    return doc


def manager(mid: str, entries: dict, tools: dict | None = None, **extra) -> dict:
    return {"id": mid, "domain": mid, "capability": f"{mid} specialist", "backend": scripted(entries),
            "tools": {"kind": "mock", "fixture": tools or fixture()}, **extra}


def engine_doc(host: dict, managers: list[dict], **sections: Any) -> dict:
    doc = {"backends": {"host": scripted(host)}, "managers": managers,
           "scheduler": {"budget": 8, "clock": "virtual"}}
    for k, v in sections.items():
        if isinstance(v, dict) and isinstance(doc.get(k), dict):
            doc[k] = {**doc[k], **v}
        else:
            doc[k] = v
    return doc


def make_engine(doc: dict, base_dir: Path | str = ".", durations: dict | float | None = 1.0, sentinel=True):
    cfg = EngineConfig(json.loads(json.dumps(doc)), Path(base_dir))
    cfg.validate()
    if isinstance(durations, dict):
        model = DurationTable.from_doc(durations)
    elif durations is None:
        model = None
    else:
        model = DurationTable(float(durations))
    return build_engine(cfg, sentinel=sentinel, duration_model=model)


def one_step_entries(n: int = 2, mid: str = "search", t: int = 1, tool_calls: int = 1) -> dict:
    """Manager + worker script for one step with ``n`` subtasks that all succeed."""
    entries: dict = {f"{mid}:decompose:{t}": [{"subtasks": [f"part {k}" for k in range(n)]}],
                     f"{mid}:reflect:{t}.1": [ACCEPT],
                     f"{mid}:aggregate:{t}": [f"summary of step {t}"]}
    for k in range(n):
        calls = [call("web_search", query=f"q{t}.{k}.{i}") for i in range(tool_calls)]
        entries[f"worker:{t}.{k}.0"] = [*calls, f"answer {t}.{k}"]
    return entries


def host_script(*actions: dict, final: str = "final answer") -> dict:
    """Host entries: one action per step, then the final answer."""
    entries = {f"host:step{t}": [a] for t, a in enumerate(actions, 1)}
    entries["host:final"] = [final]
    return entries


def run_engine(doc: dict, query: str = "test query", durations=1.0, sentinel=True, **kw):
    from infoseeker.core import TaskQuery

    with make_engine(doc, durations=durations, sentinel=sentinel) as engine:
        answer, sink = engine.run(TaskQuery(query, "t1"), **kw)
    return answer, sink.events


def kinds(events, kind: str) -> list:
    return [e for e in events if e.kind.value == kind]

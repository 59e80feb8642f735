from __future__ import annotations

import dataclasses
import json

import pytest
from hypothesis import given, strategies as st

from infoseeker.core import TaskQuery
from infoseeker.errors import MissingDurations, TraceOrderError, TruncatedTrace
from infoseeker.scheduler import makespan_par
from infoseeker.telemetry import (
    Actor, Kind, TraceEvent, TraceSink, compute_speedup, mask_record, masked_lines, parse_trace, read_trace,
    replay_context, summarize, verify_trace, wave_durations,
)

from helpers import STOP, engine_doc, host_script, make_engine, manager, one_step_entries, step
from oracles import count_step_lines


def execute(step_no, slot, duration, wave=0):
    return {"step": step_no, "slot": slot, "wave": wave, "duration": duration, "start": 0, "end": duration}


def synthetic(durations_per_wave):
    sink = TraceSink()
    for w, ds in enumerate(durations_per_wave):
        for slot, d in enumerate(ds):
            sink.emit(Actor.WORKER, Kind.EXECUTE, execute(1, slot, d, w))
    sink.emit(Actor.HOST, Kind.FINALIZE, {"text": "x"})
    return sink.events


def test_first_seq_is_zero_and_increments():
    sink = TraceSink()
    a = sink.emit(Actor.HOST, Kind.STOP, {"step": 1})
    b = sink.emit(Actor.HOST, Kind.FINALIZE, {})
    assert (a.seq, b.seq) == (0, 1)


def test_out_of_order_and_backwards_time_rejected():
    sink = TraceSink()
    sink.emit(Actor.HOST, Kind.STOP, time=5.0)
    with pytest.raises(TraceOrderError):
        sink.record(TraceEvent(3, 6.0, Actor.HOST, Kind.STOP))
    with pytest.raises(TraceOrderError):
        sink.record(TraceEvent(1, 4.0, Actor.HOST, Kind.STOP))


def test_file_mirror_and_truncation(tmp_path):
    path = tmp_path / "t.jsonl"
    sink = TraceSink(path)
    sink.emit(Actor.HOST, Kind.STOP, {"step": 1})
    sink.emit(Actor.HOST, Kind.FINALIZE, {"text": "é"})
    sink.close()
    events = read_trace(path)
    assert [e.kind for e in events] == [Kind.STOP, Kind.FINALIZE]
    raw = path.read_text(encoding="utf-8")
    with pytest.raises(TruncatedTrace):
        parse_trace(raw[:-5])
    with pytest.raises(TruncatedTrace):
        parse_trace("")
    with pytest.raises(TruncatedTrace):
        read_trace(tmp_path / "missing.jsonl")
    first, second = raw.splitlines()
    with pytest.raises(TruncatedTrace):
        parse_trace(second + "\n" + first + "\n")


def test_summarize_refuses_incomplete():
    sink = TraceSink()
    sink.emit(Actor.HOST, Kind.STOP, {"step": 1})
    with pytest.raises(TruncatedTrace):
        summarize(sink.events)


def test_mask_wall_fields_only():
    rec = TraceEvent(0, 12.5, Actor.WORKER, Kind.EXECUTE, {"duration": 3.1, "slot": 2, "trace_path": "/abs/x"},
                     clock="wall").to_record()
    masked = mask_record(rec)
    assert masked["time"] is None and masked["payload"] == {"duration": None, "slot": 2, "trace_path": "<path>"}
    virtual = dict(rec, clock="virtual")
    assert mask_record(virtual)["time"] == 12.5 and mask_record(virtual)["payload"]["duration"] == 3.1


def test_summarize_restaurants_golden(scenarios_dir):
    events = read_trace(scenarios_dir / "restaurants.trace.jsonl")
    m = summarize(events)
    assert m.total_steps == 2 and m.total_subtasks == 12
    assert m.subtasks_per_step == [2, 10] and m.total_tool_calls == 22
    assert m.tool_calls_per_step == 11.0
    assert m.terminated_by == "STOP"
    assert verify_trace(events) == []


def test_empty_loop_metrics():
    doc = engine_doc(host_script(STOP, final="known"), [manager("search", {})])
    with make_engine(doc) as engine:
        _, sink = engine.run(TaskQuery("q", "t"))
    m = summarize(sink.events)
    assert (m.total_steps, m.total_subtasks, m.total_tool_calls, m.tool_calls_per_step) == (0, 0, 0, 0.0)


def test_token_totals_equal_backend_usage():
    entries = {**one_step_entries(2, t=1), **one_step_entries(3, t=2, tool_calls=2)}
    doc = engine_doc(host_script(step("a"), step("b"), STOP), [manager("search", entries)])
    with make_engine(doc) as engine:
        _, sink = engine.run(TaskQuery("q", "t"))
        usage = {}
        for b in {id(b): b for b in engine.backends.values()}.values():
            for k, v in b.usage.items():
                usage[k] = usage.get(k, 0) + v
    m = summarize(sink.events)
    for role in ("HOST", "MANAGER", "WORKER"):
        assert m.tokens_in[role] == usage.get(f"{role}:in", 0)
        assert m.tokens_out[role] == usage.get(f"{role}:out", 0)


def test_injected_leak_is_caught(scenarios_dir):
    events = read_trace(scenarios_dir / "restaurants.trace.jsonl")
    sentinel = next(e for e in events if e.kind is Kind.TOOL_RESULT).payload["payload"].rsplit("\n", 1)[1]
    i = next(i for i, e in enumerate(events) if e.kind is Kind.STEP)
    leaked = dict(events[i].payload, summary=events[i].payload["summary"] + " " + sentinel)
    events[i] = dataclasses.replace(events[i], payload=leaked)
    problems = verify_trace(events)
    assert len(problems) == 1 and sentinel in problems[0]


def test_verbatim_payload_copy_is_caught(scenarios_dir):
    events = read_trace(scenarios_dir / "restaurants.trace.jsonl")
    body = next(e for e in events if e.kind is Kind.TOOL_RESULT).payload["payload"].rsplit("\n", 1)[0]
    i = next(i for i, e in reversed(list(enumerate(events))) if e.kind is Kind.FINALIZE)
    events[i] = dataclasses.replace(events[i], payload=dict(events[i].payload, text=body))
    assert any("copied verbatim" in p for p in verify_trace(events))


def test_replay_context_from_seven_step_trace(tmp_path):
    entries = {}
    for t in range(1, 8):
        entries.update(one_step_entries(1 + t % 3, t=t))
    doc = engine_doc(host_script(*[step(f"d{t}") for t in range(1, 8)], STOP), [manager("search", entries)])
    path = tmp_path / "seven.jsonl"
    with make_engine(doc) as engine:
        _, sink = engine.run(TaskQuery("q", "t"), trace_path=path)
    events = read_trace(path)
    ctx = replay_context(events)
    assert len(ctx.exchanges) == count_step_lines(path) == 7
    assert [s.text for _, s in ctx.exchanges] == [f"summary of step {t}" for t in range(1, 8)]
    assert [e.to_record() for e in events] == [e.to_record() for e in sink.events]


def test_masked_lines_are_stable_across_runs(tmp_path):
    doc = engine_doc(host_script(step("a"), STOP), [manager("search", one_step_entries(3))])
    runs = []
    for _ in range(2):
        with make_engine(doc) as engine:
            _, sink = engine.run(TaskQuery("q", "t"))
        runs.append(masked_lines(sink.events))
    assert runs[0] == runs[1]


@pytest.mark.parametrize("waves,budget,want", [
    ([[3, 5, 2]], 3, 2.0),
    ([[3, 5, 2]], 1, 1.0),
    ([[1] * 17], 17, 17.0),
    ([[4, 1, 1, 1, 1]], 2, 2.0),
])
def test_speedup_examples(waves, budget, want):
    assert compute_speedup(synthetic(waves), budget) == pytest.approx(want)


def test_speedup_sums_over_waves():
    events = synthetic([[2, 2], [6]])
    assert compute_speedup(events, 2) == pytest.approx(10 / 8)
    assert wave_durations(events) == [[2, 2], [6]]


def test_speedup_needs_durations():
    sink = TraceSink()
    sink.emit(Actor.WORKER, Kind.EXECUTE, {"step": 1, "slot": 0})
    with pytest.raises(MissingDurations):
        compute_speedup(sink.events, 2)
    with pytest.raises(MissingDurations):
        compute_speedup(synthetic([]), 2)


@given(st.lists(st.lists(st.integers(1, 30), min_size=1, max_size=12), min_size=1, max_size=4), st.integers(1, 15))
def test_speedup_monotone_and_bounded(waves, w):
    events = synthetic(waves)
    s, s_next = compute_speedup(events, w), compute_speedup(events, w + 1)
    assert 1.0 <= s <= s_next + 1e-12
    assert s <= w + 1e-12
    serial = sum(sum(d) for d in waves)
    assert s == pytest.approx(serial / sum(makespan_par(d, w) for d in waves))


def test_trace_lines_are_sorted_compact_json(scenarios_dir):
    line = (scenarios_dir / "restaurants.trace.jsonl").read_text(encoding="utf-8").splitlines()[0]
    rec = json.loads(line)
    assert line == json.dumps(rec, ensure_ascii=False, sort_keys=True, separators=(",", ":"))

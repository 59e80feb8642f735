from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from infoseeker.core import Status, Subtask, SubtaskResult, TaskQuery
from infoseeker.errors import TaskFailed
from infoseeker.manager import REFLECT_LIMIT_FLAG, ManagerConfig, dedupe, format_results, parse_subtask_list
from infoseeker.telemetry import algebra_violations, summarize

from helpers import (
    ACCEPT, STOP, call, engine_doc, host_script, kinds, make_engine, manager, one_step_entries,
    run_engine, step,
)


def one_step_doc(entries, mid="search", **sections):
    return engine_doc(host_script(step("do the thing", mid), STOP), [manager(mid, entries)], **sections)


def test_two_subtasks_one_wave():
    answer, events = run_engine(one_step_doc(one_step_entries(2)))
    (dec,) = kinds(events, "DECOMPOSE")
    assert dec.payload["count"] == 2
    assert [e.payload["slot"] for e in kinds(events, "EXECUTE")] == [0, 1]
    (stp,) = kinds(events, "STEP")
    assert stp.payload["summary"] == "summary of step 1" and stp.payload["subtask_count"] == 2
    assert algebra_violations(events) == []


def test_ten_subtasks_ten_executions():
    _, events = run_engine(one_step_doc(one_step_entries(10, tool_calls=2)))
    m = summarize(events)
    assert m.subtasks_per_step == [10] and m.total_executions == 10 and m.total_tool_calls == 20


def test_decomposition_cap_truncates_with_warning():
    entries = one_step_entries(16)
    entries["search:decompose:1"] = [{"subtasks": [f"part {k}" for k in range(25)]}]
    _, events = run_engine(one_step_doc(entries))
    assert kinds(events, "DECOMPOSE")[0].payload["count"] == 16
    assert any("truncated from 25 to 16" in w.payload["warning"] for w in kinds(events, "WARNING"))


def test_custom_cap():
    entries = one_step_entries(3)
    entries["search:decompose:1"] = [{"subtasks": ["part 0", "part 1", "part 2", "part 3", "part 4"]}]
    doc = one_step_doc(entries)
    doc["managers"][0]["decompose_cap"] = 3
    _, events = run_engine(doc)
    assert kinds(events, "DECOMPOSE")[0].payload["subtasks"] == ["part 0", "part 1", "part 2"]


def test_duplicates_removed_before_numbering():
    entries = one_step_entries(2)
    entries["search:decompose:1"] = [{"subtasks": ["part 0", "  part 0 ", "part 1"]}]
    _, events = run_engine(one_step_doc(entries))
    assert kinds(events, "DECOMPOSE")[0].payload["subtasks"] == ["part 0", "part 1"]


def test_reprompt_once_then_succeed():
    entries = one_step_entries(2)
    entries["search:decompose:1"] = ["I think we should search.", {"subtasks": ["part 0", "part 1"]}]
    _, events = run_engine(one_step_doc(entries))
    assert kinds(events, "DECOMPOSE")[0].payload["count"] == 2
    assert len(kinds(events, "WARNING")) == 1


def test_two_bad_decompositions_fail_the_task():
    entries = one_step_entries(2)
    entries["search:decompose:1"] = ["nope", "still nope"]
    with pytest.raises(TaskFailed) as exc:
        run_engine(one_step_doc(entries))
    assert type(exc.value.cause).__name__ == "DecompositionFailed"
    last = exc.value.sink.events[-1]
    assert last.kind.value == "ERROR" and last.payload["fatal"]


def test_unparseable_verdict_fails_open():
    entries = one_step_entries(2)
    entries["search:reflect:1.1"] = ["looks fine I guess"]
    _, events = run_engine(one_step_doc(entries))
    (ref,) = kinds(events, "REFLECT")
    assert ref.payload["status"] == "ACCEPT"
    assert len(kinds(events, "EXECUTE")) == 2


def test_revise_reruns_only_named_slots_with_bumped_revision():
    entries = one_step_entries(3)
    entries["search:reflect:1.1"] = [{"status": "revise", "replacements": [{"slot": 1, "text": "part 1, narrower"}]}]
    entries["search:reflect:1.2"] = [ACCEPT]
    entries["worker:1.1.1"] = ["better answer 1"]
    _, events = run_engine(one_step_doc(entries))
    ex = [(e.payload["slot"], e.payload["revision"], e.payload["wave"]) for e in kinds(events, "EXECUTE")]
    assert ex == [(0, 0, 0), (1, 0, 0), (2, 0, 0), (1, 1, 1)]
    assert summarize(events).wave_sizes == [[3, 1]]
    assert algebra_violations(events) == []


def test_revision_numbers_count_rounds():
    entries = one_step_entries(2)
    entries["search:reflect:1.1"] = [{"status": "revise", "replacements": [{"slot": 0, "text": "again"}]}]
    entries["search:reflect:1.2"] = [{"status": "revise", "replacements": [{"slot": 1, "text": "other"}]}]
    entries["search:reflect:1.3"] = [ACCEPT]
    entries["worker:1.0.1"] = ["r"]
    entries["worker:1.1.2"] = ["r"]
    _, events = run_engine(one_step_doc(entries))
    assert [(e.payload["slot"], e.payload["revision"]) for e in kinds(events, "EXECUTE")][2:] == [(0, 1), (1, 2)]


def test_reflect_limit_forces_accept_and_flags():
    entries = one_step_entries(1)
    for r in (1, 2, 3):
        entries[f"search:reflect:1.{r}"] = [{"status": "revise", "replacements": [{"slot": 0, "text": f"try {r}"}]}]
    entries["worker:1.0.1"] = ["r1"]
    entries["worker:1.0.2"] = ["r2"]
    _, events = run_engine(one_step_doc(entries))
    refs = kinds(events, "REFLECT")
    assert len(refs) == 3 and refs[-1].payload["forced"] and refs[-1].payload["status"] == "ACCEPT"
    assert len(kinds(events, "EXECUTE")) == 3
    assert kinds(events, "STEP")[0].payload["flags"] == [REFLECT_LIMIT_FLAG]


def test_escalation_flag_from_worker_text():
    entries = one_step_entries(2)
    entries["worker:1.1.0"] = ["The page is rendered by script. [BROWSER_RECOMMENDED]"]
    _, events = run_engine(one_step_doc(entries))
    assert kinds(events, "STEP")[0].payload["flags"] == ["BROWSER_RECOMMENDED"]


def test_aggregate_sees_results_in_slot_order():
    entries = one_step_entries(3)
    doc = one_step_doc(entries)
    # slot 0 runs longest so it finishes last
    with make_engine(doc, durations={"default": 1, "subtasks": {"1.0": 9}}) as engine:
        engine.run(TaskQuery("q", "t"))
        prompt = engine.backends["manager:search"].requests[-1].transcript[-1][1]
    assert prompt.index("[slot 0]") < prompt.index("[slot 1]") < prompt.index("[slot 2]")


def test_all_failed_is_step_failure_not_task_failure():
    fx = {"format": "infoseeker-mcp-fixture/1",
          "responses": [{"tool": "fetch_page", "args": {"url": "u"}, "replies": [{"is_error": True}]}]}
    entries = {"search:decompose:1": [{"subtasks": ["a"]}], "search:reflect:1.1": [ACCEPT],
               "worker:1.0.0": [call("fetch_page", url="u")]}
    doc = engine_doc(host_script(step("x"), STOP), [manager("search", entries, tools=fx)])
    answer, events = run_engine(doc)
    (agg,) = kinds(events, "AGGREGATE")
    assert agg.payload["status"] == "failed"
    assert kinds(events, "STEP")[0].payload["summary"].startswith("Step failed")
    assert answer.text == "final answer"


def test_sixteen_subtasks_on_four_runners():
    _, events = run_engine(one_step_doc(one_step_entries(16), scheduler={"budget": 4}))
    ex = kinds(events, "EXECUTE")
    assert len(ex) == 16 and summarize(events).makespan_per_step == [4.0]
    # never more than four subtasks in flight
    for t in range(4):
        assert sum(1 for e in ex if e.payload["start"] <= t < e.payload["end"]) == 4


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.lists(st.lists(st.integers(0, 5), max_size=3), max_size=3))
def test_execution_count_within_bound(p, rounds):
    entries = one_step_entries(p)
    r_max = 3
    revise_rounds = rounds[: r_max]
    for r, slots in enumerate(revise_rounds, 1):
        reps = [{"slot": s, "text": f"redo {s} r{r}"} for s in sorted(set(slots)) if s < p]
        entries[f"search:reflect:1.{r}"] = [{"status": "revise", "replacements": reps} if reps else ACCEPT]
        for s in range(p):
            entries.setdefault(f"worker:1.{s}.{r}", ["again"])
    for r in range(len(revise_rounds) + 1, r_max + 1):
        entries[f"search:reflect:1.{r}"] = [ACCEPT]
    _, events = run_engine(one_step_doc(entries))
    n = len(kinds(events, "EXECUTE"))
    assert p <= n <= p + r_max * p
    assert algebra_violations(events) == []


def test_parse_and_dedupe_helpers():
    assert parse_subtask_list('{"subtasks": ["a", " ", 3, "b"]}') == ["a", "b"]
    assert parse_subtask_list('{"subtasks": []}') is None
    assert parse_subtask_list("[1]") is None
    assert dedupe(["Café", "Café", "x"]) == ["Café", "x"]


def test_format_results_marks_failures():
    a, b = Subtask("s0", 1, 0, 0), Subtask("s1", 1, 1, 0)
    text = format_results([(b, SubtaskResult(b, Status.TIMEOUT, "")), (a, SubtaskResult(a, Status.OK, "fine"))])
    assert text.index("[slot 0]") < text.index("[slot 1]")
    assert "failed: TIMEOUT" in text or "failed: timeout" in text.lower()


def test_manager_config_bounds():
    with pytest.raises(ValueError):
        ManagerConfig("m", reflect_limit=0)
    with pytest.raises(ValueError):
        ManagerConfig("m", decompose_cap=0)
    assert ManagerConfig("m").reflect_limit == 3 and ManagerConfig("m").decompose_cap == 16

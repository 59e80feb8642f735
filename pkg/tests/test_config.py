from __future__ import annotations

import json

import pytest

from infoseeker.config import EngineConfig, build_engine
from infoseeker.core import TaskQuery
from infoseeker.errors import ConfigInvalid

from helpers import STOP, engine_doc, host_script, manager, one_step_entries, scripted, step


def base_doc():
    return engine_doc(host_script(step("x"), STOP), [manager("search", one_step_entries(2))])


def write(tmp_path, doc, name="engine.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc), encoding="utf-8")
    return p


@pytest.mark.parametrize("mutate", [
    lambda d: d.update(managers=[]),
    lambda d: d.update(managers=[d["managers"][0], d["managers"][0]]),
    lambda d: d.update(format="other/2"),
    lambda d: d.update(scheduler={"budget": 0}),
    lambda d: d.update(host={"step_limit": 0}),
    lambda d: d.update(worker={"no_such_knob": 1}),
    lambda d: d["managers"][0].update(reflect_limit=0),
    lambda d: d.update(templates="nowhere"),
])
def test_invalid_configs_rejected(mutate):
    doc = base_doc()
    mutate(doc)
    with pytest.raises(ConfigInvalid):
        EngineConfig(doc).validate()


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigInvalid):
        EngineConfig.load(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigInvalid):
        EngineConfig.load(bad)


def test_scenario_file_doubles_as_config(scenarios_dir):
    cfg = EngineConfig.load(scenarios_dir / "riddle.scenario.json")
    assert [m["id"] for m in cfg.doc["managers"]] == ["search", "browser"]


def test_defaults_and_overrides():
    cfg = EngineConfig(base_doc())
    assert cfg.token_ceiling == 272_000
    assert cfg.host_config().step_limit == 12 and cfg.worker_config().tool_retry_limit == 3
    over = cfg.with_overrides(scheduler={"budget": 3}, host={"step_limit": 2})
    assert over.scheduler_config().budget == 3 and over.scheduler_config().clock == "virtual"
    assert over.host_config().step_limit == 2
    assert cfg.scheduler_config().budget == 8  # original untouched


def test_file_references_resolve_relative_to_config(tmp_path):
    (tmp_path / "host.json").write_text(json.dumps({"entries": host_script(step("x"), STOP)}), encoding="utf-8")
    (tmp_path / "tools.json").write_text(json.dumps({"defaults": {"web_search": "r"}}), encoding="utf-8")
    doc = base_doc()
    doc["backends"]["host"] = {"kind": "scripted", "script": "host.json"}
    doc["managers"][0]["tools"] = {"kind": "mock", "fixture": "tools.json"}
    cfg = EngineConfig.load(write(tmp_path, doc))
    with build_engine(cfg) as engine:
        answer, _ = engine.run(TaskQuery("q", "t"))
    assert answer.steps_used == 1


def test_role_default_backends_and_capability_fallback():
    entries = one_step_entries(2)
    doc = engine_doc(host_script(step("x"), STOP), [{"id": "search", "domain": "news"}])
    doc["backends"]["manager"] = scripted(entries)
    cfg = EngineConfig(doc)
    cfg.validate()
    with build_engine(cfg) as engine:
        assert engine.host.registry.capability_lines() == "- search: news manager"
        assert engine.backends["worker:search"] is engine.backends["manager:search"]
        answer, _ = engine.run(TaskQuery("q", "t"))
    assert answer.text == "final answer"


def test_missing_backends_rejected():
    doc = base_doc()
    del doc["backends"]["host"]
    with pytest.raises(ConfigInvalid):
        build_engine(EngineConfig(doc))
    doc = base_doc()
    del doc["managers"][0]["backend"]
    with pytest.raises(ConfigInvalid):
        build_engine(EngineConfig(doc))


def test_unknown_tools_kind():
    doc = base_doc()
    doc["managers"][0]["tools"] = {"kind": "telepathy"}
    with pytest.raises(ConfigInvalid):
        build_engine(EngineConfig(doc))

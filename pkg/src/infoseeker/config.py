"""Engine configuration: load a JSON config and assemble a runnable engine.

Config document (all sections optional except ``managers``)::

    {
      "format": "infoseeker-config/1",
      "templates": "prompts",                 # directory overriding bundled templates
      "token_ceiling": 272000,
      "backends": {"host": B, "manager": B, "worker": B},   # per-role defaults
      "host": {"step_limit": 12, "reprompt_limit": 1},
      "scheduler": {"budget": 8, "subtask_timeout": 300, "clock": "wall"},
      "worker": {"max_tool_turns": 12, "tool_retry_limit": 3},
      "managers": [{"id": "search", "domain": "search", "capability": "...",
                    "decompose_cap": 16, "reflect_limit": 3, "pool_size": null,
                    "backend": B, "worker_backend": B, "tools": T}],
      "trace": "run.trace.jsonl",
      "worker_trace_dir": "worker-traces"
    }

A backend ``B`` is ``{"kind": "scripted", "script": PATH | SCRIPT}`` or
``{"kind": "http", "url": ..., "model": ..., "api_key_env": "ENV_NAME"}``.
Secrets are only ever read from the environment variable named there.
Tools ``T`` are ``{"kind": "mock", "fixture": PATH | FIXTURE}`` or
``{"kind": "stdio", "command": [...]}``. Relative paths resolve against the
config file's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from .backends import DEFAULT_TOKEN_CEILING, Backend, backend_from_config
from .core import Subtask, TaskQuery
from .errors import ConfigInvalid
from .host import Host, HostConfig, ManagerRegistry
from .manager import Manager, ManagerConfig
from .mcp_tools import LoopbackTransport, McpClient, MockToolServer, StdioTransport
from .prompts import DEFAULT_TEMPLATES, PromptTemplates
from .scheduler import SchedulerConfig
from .worker import WorkerConfig

CONFIG_FORMAT = "infoseeker-config/1"


@dataclass
class EngineConfig:
    doc: dict[str, Any]
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path: str | Path) -> EngineConfig:
        path = Path(path)
        if not path.is_file():
            raise ConfigInvalid(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"{path} is not valid JSON: {exc}") from exc
        if isinstance(doc, dict) and "engine" in doc:
            # a scenario file doubles as a config
            doc = doc["engine"]
        cfg = cls(doc, path.parent.resolve())
        cfg.validate()
        return cfg

    def validate(self) -> None:
        doc = self.doc
        if not isinstance(doc, dict):
            raise ConfigInvalid("config must be a JSON object")
        if doc.get("format", CONFIG_FORMAT) != CONFIG_FORMAT:
            raise ConfigInvalid(f"unsupported config format {doc.get('format')!r}")
        managers = doc.get("managers")
        if not isinstance(managers, list) or not managers:
            raise ConfigInvalid("config needs a non-empty 'managers' list")
        ids = [m.get("id") for m in managers]
        if any(not isinstance(i, str) or not i for i in ids) or len(set(ids)) != len(ids):
            raise ConfigInvalid("manager ids must be unique non-empty strings")
        # constructing the typed configs runs their own invariant checks
        self.host_config()
        self.scheduler_config()
        self.worker_config()
        for m in managers:
            self.manager_config(m)
        if "templates" in doc and not (self.base_dir / doc["templates"]).is_dir():
            raise ConfigInvalid(f"template directory not found: {self.base_dir / doc['templates']}")

    def _typed(self, factory, section: str, **fixed):
        try:
            return factory(**{**dict(self.doc.get(section) or {}), **fixed})
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"invalid '{section}' section: {exc}") from exc

    def host_config(self) -> HostConfig:
        return self._typed(HostConfig, "host")

    def scheduler_config(self) -> SchedulerConfig:
        return self._typed(SchedulerConfig, "scheduler")

    def worker_config(self) -> WorkerConfig:
        return self._typed(WorkerConfig, "worker")

    def manager_config(self, m: Mapping[str, Any]) -> ManagerConfig:
        known = {"domain", "capability", "decompose_cap", "reflect_limit", "pool_size"}
        try:
            return ManagerConfig(m["id"], **{k: v for k, v in m.items() if k in known})
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"invalid manager {m.get('id')!r}: {exc}") from exc

    @property
    def token_ceiling(self) -> int | None:
        return self.doc.get("token_ceiling", DEFAULT_TOKEN_CEILING)

    def with_overrides(self, **sections: Mapping[str, Any]) -> EngineConfig:
        """Copy with keys merged into the named sections, e.g. ``scheduler={"budget": 4}``."""
        doc = json.loads(json.dumps(self.doc))
        for section, values in sections.items():
            merged = dict(doc.get(section) or {})
            merged.update(values)
            doc[section] = merged
        cfg = EngineConfig(doc, self.base_dir)
        cfg.validate()
        return cfg

    def resolve(self, value: str | None) -> Path | None:
        return None if value is None else self.base_dir / value


@dataclass
class Engine:
    host: Host
    managers: dict[str, Manager]
    clients: list[McpClient]
    backends: dict[str, Backend]
    config: EngineConfig

    def run(self, q: TaskQuery, trace_path: str | Path | None = None, trace_root: str | Path | None = None):
        return self.host.run_task(q, trace_path=trace_path, trace_root=trace_root)

    def close(self) -> None:
        for client in self.clients:
            client.close()

    def __enter__(self) -> Engine:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _load_json_or_inline(value: Any, base_dir: Path, what: str) -> Any:
    if isinstance(value, str):
        path = base_dir / value
        if not path.is_file():
            raise ConfigInvalid(f"{what} file not found: {path}")
        return json.loads(path.read_text(encoding="utf-8"))
    return value


def _tool_client(spec: Mapping[str, Any] | None, cfg: EngineConfig, sentinel: bool | None) -> McpClient:
    spec = spec or {"kind": "mock", "fixture": {}}
    kind = spec.get("kind")
    if kind == "mock":
        fixture = _load_json_or_inline(spec.get("fixture", {}), cfg.base_dir, "tool fixture")
        transport = LoopbackTransport(MockToolServer.from_fixture(fixture, sentinel=sentinel))
    elif kind == "stdio":
        command = spec.get("command")
        if not isinstance(command, list) or not command:
            raise ConfigInvalid("stdio tools need a 'command' list")
        transport = StdioTransport(command, cwd=str(cfg.base_dir))
    else:
        raise ConfigInvalid(f"unknown tools kind {kind!r}")
    client = McpClient(transport)
    client.initialize()
    return client


def build_engine(
    cfg: EngineConfig,
    *,
    sentinel: bool | None = None,
    duration_model: Callable[[Subtask], float] | None = None,
) -> Engine:
    doc = cfg.doc
    ceiling = cfg.token_ceiling
    templates = PromptTemplates(cfg.resolve(doc["templates"])) if "templates" in doc else DEFAULT_TEMPLATES
    role_specs = doc.get("backends") or {}

    def backend_for(spec: Mapping[str, Any] | None, role: str) -> Backend | None:
        spec = spec or role_specs.get(role)
        return backend_from_config(spec, cfg.base_dir, ceiling) if spec else None

    backends: dict[str, Backend] = {}
    host_backend = backend_for(None, "host")
    if host_backend is None:
        raise ConfigInvalid("no backend bound to the host role")
    backends["host"] = host_backend
    registry = ManagerRegistry()
    managers: dict[str, Manager] = {}
    clients: list[McpClient] = []
    worker_cfg = cfg.worker_config()
    try:
        for m in doc["managers"]:
            mcfg = cfg.manager_config(m)
            mb = backend_for(m.get("backend"), "manager")
            if mb is None:
                raise ConfigInvalid(f"no backend bound to manager {mcfg.manager_id!r}")
            wb = backend_for(m.get("worker_backend"), "worker") or mb
            client = _tool_client(m.get("tools"), cfg, sentinel)
            clients.append(client)
            manager = Manager(mcfg, mb, wb, client, worker_cfg, templates, duration_model)
            managers[mcfg.manager_id] = manager
            backends[f"manager:{mcfg.manager_id}"] = mb
            backends[f"worker:{mcfg.manager_id}"] = wb
            registry.register(mcfg.manager_id, manager, mcfg.capability or f"{mcfg.domain} manager")
    except Exception:
        for client in clients:
            client.close()
        raise
    host = Host(host_backend, registry, cfg.host_config(), cfg.scheduler_config(), templates)
    return Engine(host, managers, clients, backends, cfg)

"""Prompt templates.

Templates are plain UTF-8 text files with ``{name}`` placeholders. Only
placeholders passed to ``render`` are substituted, in a single pass, so
braces elsewhere (JSON examples) need no escaping and substituted values
are never re-expanded.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

from ..errors import ConfigInvalid

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


class PromptTemplates:
    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory is not None else None
        self._cache: dict[str, str] = {}

    def get(self, name: str) -> str:
        if name not in self._cache:
            self._cache[name] = self._load(name)
        return self._cache[name]

    def _load(self, name: str) -> str:
        filename = f"{name}.txt"
        if self.directory is not None:
            path = self.directory / filename
            if path.is_file():
                return path.read_text(encoding="utf-8")
        try:
            return resources.files(__package__).joinpath(filename).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigInvalid(f"prompt template {name!r} not found") from None

    def render(self, name: str, **values: str) -> str:
        return fill(self.get(name), **values)


def fill(template: str, **values: str) -> str:
    def sub(m: re.Match) -> str:
        key = m.group(1)
        return str(values[key]) if key in values else m.group(0)

    return _PLACEHOLDER.sub(sub, template)


DEFAULT_TEMPLATES = PromptTemplates()


def render(name: str, **values: str) -> str:
    return DEFAULT_TEMPLATES.render(name, **values)

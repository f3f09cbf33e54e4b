"""Application tool taxonomy used to validate model answers.

The default table covers Photoshop tools grouped by function. Another
application can be described by a JSON file of the same shape::

    {"categories": [{"name": "Move", "tools": ["Move Tool", ...]}, ...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import ValidationError
from .ocr import match_menu_item, normalize_text


@dataclass(frozen=True)
class ToolTaxonomy:
    categories: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        seen_cats, seen_tools = set(), set()
        for name, tools in self.categories:
            key = normalize_text(name)
            if key in seen_cats:
                raise ValidationError(f"duplicate category {name!r}")
            seen_cats.add(key)
            for tool in tools:
                tkey = normalize_text(tool)
                if tkey in seen_tools:
                    raise ValidationError(f"tool {tool!r} listed in more than one category")
                seen_tools.add(tkey)
        object.__setattr__(self, "_tool_index", {
            normalize_text(t): name for name, tools in self.categories for t in tools
        })
        object.__setattr__(self, "_category_names", {
            normalize_text(name): name for name, _ in self.categories
        })

    @classmethod
    def from_dict(cls, data: dict) -> "ToolTaxonomy":
        try:
            cats = tuple((c["name"], tuple(c["tools"])) for c in data["categories"])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed taxonomy document: {exc}") from None
        return cls(cats)

    @classmethod
    def from_file(cls, path) -> "ToolTaxonomy":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @property
    def category_names(self) -> list[str]:
        return [name for name, _ in self.categories]

    @property
    def tools(self) -> list[str]:
        return [t for _, tools in self.categories for t in tools]

    def category_of(self, tool: str) -> str | None:
        return self._tool_index.get(normalize_text(tool))

    def validate(self, category: str, tool: str) -> bool:
        canonical = self._category_names.get(normalize_text(category))
        return canonical is not None and self.category_of(tool) == canonical

    def fuzzy_tool(self, text: str) -> tuple[str, float] | None:
        return match_menu_item(text, self.tools)


@lru_cache(maxsize=1)
def default_taxonomy() -> ToolTaxonomy:
    raw = resources.files("screenschema").joinpath("data/photoshop_tools.json").read_text("utf-8")
    return ToolTaxonomy.from_dict(json.loads(raw))


def category_of(tool: str) -> str | None:
    return default_taxonomy().category_of(tool)


def validate(category: str, tool: str) -> bool:
    return default_taxonomy().validate(category, tool)


def fuzzy_tool(text: str) -> tuple[str, float] | None:
    return default_taxonomy().fuzzy_tool(text)

"""Prompt tag to full text prompt mapping."""
from __future__ import annotations

import json
from pathlib import Path

DEFAULT_SUBJECT = "a watermelon"

DEFAULT_TEMPLATES = {
    "horizontal": "the horizontal cross-sectional view of {subject}",
    "radial": "the vertical cross-sectional view of {subject}",
    "random": "a cross-sectional view of {subject}",
}


class PromptMapError(ValueError):
    pass


class PromptMap:
    def __init__(self, mapping: dict[str, str]):
        if not mapping:
            raise PromptMapError("prompt map must not be empty")
        self.mapping = dict(mapping)

    @classmethod
    def default(cls, subject: str = DEFAULT_SUBJECT) -> "PromptMap":
        return cls({tag: t.format(subject=subject) for tag, t in DEFAULT_TEMPLATES.items()})

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptMap":
        doc = json.loads(Path(path).read_text())
        if not isinstance(doc, dict) or not all(
                isinstance(k, str) and isinstance(v, str) for k, v in doc.items()):
            raise PromptMapError(f"{path}: expected a flat string-to-string JSON object")
        return cls(doc)

    def prompt_for(self, tag: str) -> str:
        if tag in self.mapping:
            return self.mapping[tag]
        raise PromptMapError(f"no prompt registered for tag {tag!r}; "
                             f"known tags: {sorted(self.mapping)}")

    def check_covers(self, tags) -> None:
        missing = sorted(set(tags) - set(self.mapping))
        if missing:
            raise PromptMapError(f"prompt map lacks entries for tags: {missing}")

"""Prompt templates for slot filling, bulk pattern generation and cloze probing.

Template bodies live in versioned text files under ``templates/``; rendering is
strict ``string.Template`` substitution so that identical inputs always produce
identical bytes.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from string import Template
from types import MappingProxyType
from typing import Mapping, Sequence

from .model import ExtractionKind

TEMPLATE_VERSION = "v1"
MASK = "[MASK]"
PLACEHOLDERS = frozenset({"action", "object", "candidates", "number", "domain_of_interest", "tool"})
CANDIDATES_CLAUSE = " Choose only from the following candidates: $candidates."

_PLACEHOLDER = re.compile(r"\$(?:\{(\w+)\}|(\w+))")


class TemplateId(enum.Enum):
    SLOT_TOOL = "slot_tool"
    SLOT_STATE_BEFORE = "slot_state_before"
    SLOT_STATE_AFTER = "slot_state_after"
    SLOT_SPATIAL = "slot_spatial"
    BULK_PATTERNS = "bulk_patterns"
    CLOZE_TOOL = "cloze_tool"
    CLOZE_STATE_BEFORE = "cloze_state_before"
    CLOZE_STATE_AFTER = "cloze_state_after"


SLOT_TEMPLATES = MappingProxyType(
    {
        ExtractionKind.TOOL: TemplateId.SLOT_TOOL,
        ExtractionKind.STATE_BEFORE: TemplateId.SLOT_STATE_BEFORE,
        ExtractionKind.STATE_AFTER: TemplateId.SLOT_STATE_AFTER,
        ExtractionKind.SPATIAL: TemplateId.SLOT_SPATIAL,
    }
)
CLOZE_TEMPLATES = MappingProxyType(
    {
        ExtractionKind.TOOL: TemplateId.CLOZE_TOOL,
        ExtractionKind.STATE_BEFORE: TemplateId.CLOZE_STATE_BEFORE,
        ExtractionKind.STATE_AFTER: TemplateId.CLOZE_STATE_AFTER,
    }
)


class PromptError(ValueError):
    pass


class EmptyCandidates(PromptError):
    pass


class MissingTool(PromptError):
    pass


class InvalidNumber(PromptError):
    pass


class UnsupportedKind(PromptError):
    pass


def placeholders(body: str) -> set[str]:
    return {m.group(1) or m.group(2) for m in _PLACEHOLDER.finditer(body)}


@dataclass(frozen=True)
class PromptTemplate:
    id: TemplateId
    body: str

    def __post_init__(self) -> None:
        unknown = placeholders(self.body) - PLACEHOLDERS
        if unknown:
            raise PromptError(f"template {self.id.value} uses unknown placeholders {sorted(unknown)}")


@dataclass(frozen=True)
class RenderedPrompt:
    template_id: TemplateId
    bindings: Mapping[str, str]
    text: str


@lru_cache(maxsize=None)
def load_template(template_id: TemplateId) -> PromptTemplate:
    path = resources.files(__package__).joinpath("templates", TEMPLATE_VERSION, f"{template_id.value}.txt")
    body = path.read_text(encoding="utf-8")
    if body.endswith("\n"):
        body = body[:-1]
    return PromptTemplate(template_id, body)


def render(template: PromptTemplate, bindings: Mapping[str, str]) -> RenderedPrompt:
    """Substitute every placeholder; missing bindings and `$name` in values are errors."""
    for name, value in bindings.items():
        if _PLACEHOLDER.search(value):
            raise PromptError(f"binding {name!r} contains a placeholder-like sequence: {value!r}")
    try:
        text = Template(template.body).substitute(bindings)
    except KeyError as exc:
        raise PromptError(f"template {template.id.value} needs a value for {exc.args[0]!r}") from None
    used = placeholders(template.body)
    frozen = MappingProxyType({k: bindings[k] for k in sorted(used)})
    return RenderedPrompt(template.id, frozen, text)


def render_slot_prompt(
    kind: ExtractionKind,
    action: str,
    object: str,
    candidates: Sequence[str],
    tool: str | None = None,
    *,
    allow_ungrounded: bool = False,
) -> RenderedPrompt:
    if not candidates and not allow_ungrounded:
        raise EmptyCandidates("candidates are required unless ungrounded prompting is allowed")
    if kind is ExtractionKind.SPATIAL and not tool:
        raise MissingTool("spatial prompts need the tool the object is related to")
    template = load_template(SLOT_TEMPLATES[kind])
    if not candidates:
        template = PromptTemplate(template.id, template.body.replace(CANDIDATES_CLAUSE, ""))
    bindings = {"action": action, "object": object, "candidates": ", ".join(candidates)}
    if kind is ExtractionKind.SPATIAL:
        bindings["tool"] = tool
    return render(template, {k: v for k, v in bindings.items() if k in placeholders(template.body)})


def render_bulk_prompt(number: int, domain: str) -> RenderedPrompt:
    if isinstance(number, bool) or not isinstance(number, int) or number < 1:
        raise InvalidNumber(f"number of patterns must be a positive integer, got {number!r}")
    if not domain.strip():
        raise PromptError("domain of interest must be non-empty")
    return render(load_template(TemplateId.BULK_PATTERNS), {"number": str(number), "domain_of_interest": domain})


def render_cloze(kind: ExtractionKind, action: str, object: str) -> str:
    """Masked sentence with a single generic ``[MASK]``; backends swap in their own token."""
    if kind not in CLOZE_TEMPLATES:
        raise UnsupportedKind(f"no cloze sentence defined for {kind.value}")
    return render(load_template(CLOZE_TEMPLATES[kind]), {"action": action, "object": object}).text

"""Action-pattern data model, label normalization and the ground-truth loader."""
from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

_STRIP_CHARS = " \t\r\n\f\v.,;:!?\"'()"
_WHITESPACE = re.compile(r"\s+")

DEFAULT_SPATIAL_VOCABULARY = frozenset(
    {
        "above",
        "around",
        "behind",
        "below",
        "beside",
        "far from",
        "in",
        "in front of",
        "inside",
        "left of",
        "near",
        "next to",
        "on",
        "on top of",
        "right of",
        "through",
        "touching",
        "under",
    }
)

GROUND_TRUTH_KEYS = (
    "action",
    "object",
    "tools",
    "object_states_before",
    "object_states_after",
    "spatial_relations",
)


def normalize_label(raw: str) -> str:
    """Lowercase, trim surrounding whitespace/punctuation and collapse inner whitespace."""
    collapsed = _WHITESPACE.sub(" ", raw.lower())
    return collapsed.strip(_STRIP_CHARS)


def unique_labels(raw_labels: Iterable[str]) -> tuple[str, ...]:
    """Normalize and deduplicate while keeping first-seen order; empties are dropped."""
    seen: dict[str, None] = {}
    for raw in raw_labels:
        label = normalize_label(raw)
        if label:
            seen.setdefault(label, None)
    return tuple(seen)


class ExtractionKind(enum.Enum):
    TOOL = "tool"
    STATE_BEFORE = "state_before"
    STATE_AFTER = "state_after"
    SPATIAL = "spatial"

    @classmethod
    def parse(cls, text: str) -> ExtractionKind:
        key = text.strip().lower().replace("-", "_")
        for kind in cls:
            if kind.value == key or kind.name.lower() == key:
                return kind
        raise ValueError(f"unknown extraction kind {text!r}; expected one of {[k.value for k in cls]}")


@dataclass(frozen=True)
class SpatialRelation:
    subject: str
    relation: str
    relatum: str
    freeform: bool = False


@dataclass(frozen=True)
class ActionPattern:
    """One action pattern: who does what to which objects with which tools.

    Label collections are tuples in relevance/insertion order. Construction does
    not enforce the invariants; use :func:`validate_pattern` for that.
    """

    action: str
    agents: tuple[str, ...]
    objects: tuple[str, ...]
    tools: tuple[str, ...] = ()
    states_before: tuple[str, ...] = ()
    states_after: tuple[str, ...] = ()
    spatial_relations: tuple[SpatialRelation, ...] = ()

    @classmethod
    def from_labels(
        cls,
        action: str,
        agents: Iterable[str],
        objects: Iterable[str],
        tools: Iterable[str] = (),
        states_before: Iterable[str] = (),
        states_after: Iterable[str] = (),
        spatial_relations: Iterable[SpatialRelation] = (),
    ) -> ActionPattern:
        return cls(
            action=normalize_label(action),
            agents=unique_labels(agents),
            objects=unique_labels(objects),
            tools=unique_labels(tools),
            states_before=unique_labels(states_before),
            states_after=unique_labels(states_after),
            spatial_relations=tuple(spatial_relations),
        )


@dataclass(frozen=True)
class Verdict:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_pattern(
    p: ActionPattern, spatial_vocabulary: frozenset[str] = DEFAULT_SPATIAL_VOCABULARY
) -> Verdict:
    violations: list[str] = []
    if not normalize_label(p.action):
        violations.append("action must be non-empty")
    elif normalize_label(p.action) != p.action:
        violations.append("action is not a normalized label")
    for name in ("agents", "objects"):
        if not getattr(p, name):
            violations.append(f"{name} must be non-empty")
    for name in ("agents", "objects", "tools", "states_before", "states_after"):
        labels = getattr(p, name)
        normalized = [normalize_label(x) for x in labels]
        if any(not x for x in normalized):
            violations.append(f"empty label in {name}")
        if len(set(normalized)) != len(normalized):
            violations.append(f"duplicate label in {name}")
    for i, rel in enumerate(p.spatial_relations):
        if not (rel.subject and rel.relation and rel.relatum):
            violations.append(f"spatial relation {i} has an empty field")
        elif not rel.freeform and rel.relation not in spatial_vocabulary:
            violations.append(f"spatial relation {i} uses unknown relation {rel.relation!r}")
    if len(set(p.spatial_relations)) != len(p.spatial_relations):
        violations.append("duplicate spatial relation")
    return Verdict(tuple(violations))


@dataclass(frozen=True)
class GroundTruthEntry:
    action: str
    object: str
    tools: tuple[str, ...]
    object_states_before: tuple[str, ...]
    object_states_after: tuple[str, ...]
    spatial_relations: tuple[str, ...]
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def spatial_parsed(self) -> tuple[SpatialRelation, ...]:
        """Spatial strings parsed as ``<object> <relation> <top tool>``."""
        from .parsing import parse_spatial_ground_truth

        tool = self.tools[0]
        return tuple(parse_spatial_ground_truth(raw, self.object, tool) for raw in self.spatial_relations)

    def truth_labels(self, kind: ExtractionKind) -> tuple[str, ...]:
        if kind is ExtractionKind.TOOL:
            return self.tools
        if kind is ExtractionKind.STATE_BEFORE:
            return self.object_states_before
        if kind is ExtractionKind.STATE_AFTER:
            return self.object_states_after
        # freeform relations compare as whole strings; relation field already holds them
        return unique_labels(rel.relation for rel in self.spatial_parsed)

    def to_record(self) -> dict:
        return {
            "action": self.action,
            "object": self.object,
            "tools": list(self.tools),
            "object_states_before": list(self.object_states_before),
            "object_states_after": list(self.object_states_after),
            "spatial_relations": list(self.spatial_relations),
        }


class GroundTruthError(ValueError):
    """Base class for ground-truth schema problems."""


class MalformedFile(GroundTruthError):
    def __init__(self, position: str, detail: str):
        self.position = position
        super().__init__(f"malformed ground-truth file at {position}: {detail}")


class EntryError(GroundTruthError):
    reason = "invalid"

    def __init__(self, index: int, key: str, detail: str = ""):
        self.index = index
        self.key = key
        msg = f"entry {index}: {self.reason} {key!r}"
        super().__init__(f"{msg} ({detail})" if detail else msg)


class MissingKey(EntryError):
    reason = "missing key"


class EmptyList(EntryError):
    reason = "empty list for key"


class InvalidValue(EntryError):
    reason = "invalid value for key"


class UnexpectedKey(EntryError):
    reason = "unexpected key"


def _label_list(record: dict, index: int, key: str, *, normalize: bool = True) -> tuple[str, ...]:
    value = record[key]
    if not isinstance(value, list) or not all(isinstance(x, str) for x in value):
        raise InvalidValue(index, key, "expected a list of strings")
    if normalize:
        labels = unique_labels(value)
    else:
        labels = tuple(dict.fromkeys(x.strip() for x in value if normalize_label(x)))
    if not labels:
        raise EmptyList(index, key)
    return labels


def _entry_from_record(record: object, index: int, strict: bool) -> GroundTruthEntry:
    if not isinstance(record, dict):
        raise InvalidValue(index, "<record>", "expected a JSON object")
    for key in GROUND_TRUTH_KEYS:
        if key not in record:
            raise MissingKey(index, key)
    extra = {k: v for k, v in record.items() if k not in GROUND_TRUTH_KEYS}
    if extra:
        if strict:
            raise UnexpectedKey(index, sorted(extra)[0])
        log.warning("entry %d: ignoring unexpected keys %s", index, sorted(extra))
    labels = {}
    for key in ("action", "object"):
        if not isinstance(record[key], str) or not normalize_label(record[key]):
            raise InvalidValue(index, key, "expected a non-empty string")
        labels[key] = normalize_label(record[key])
    return GroundTruthEntry(
        action=labels["action"],
        object=labels["object"],
        tools=_label_list(record, index, "tools"),
        object_states_before=_label_list(record, index, "object_states_before"),
        object_states_after=_label_list(record, index, "object_states_after"),
        spatial_relations=_label_list(record, index, "spatial_relations", normalize=False),
        extra=extra,
    )


def parse_ground_truth(text: str, *, strict: bool = False) -> list[GroundTruthEntry]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"line {exc.lineno} column {exc.colno}", exc.msg) from exc
    if not isinstance(data, list):
        raise MalformedFile("line 1 column 1", "top-level value must be an array")
    return [_entry_from_record(record, i, strict) for i, record in enumerate(data)]


def load_ground_truth(path: str | Path, *, strict: bool = False) -> list[GroundTruthEntry]:
    """Load a JSON array of ground-truth records, preserving list order.

    Labels are normalized; empty and duplicate list items are dropped.
    Spatial strings are kept as written (trimmed) so they can be re-parsed.
    With ``strict`` set, keys beyond the six known ones are an error.
    """
    return parse_ground_truth(Path(path).read_text(encoding="utf-8"), strict=strict)


def dump_ground_truth(entries: Sequence[GroundTruthEntry], path: str | Path) -> None:
    payload = [entry.to_record() for entry in entries]
    Path(path).write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


PATTERN_LIST_KEYS = ("agents", "tools", "object_states_before", "object_states_after", "spatial_relations")


def pattern_from_record(record: dict, index: int = 0) -> ActionPattern:
    """Build a pattern from a pattern-file record (ground-truth layout plus ``agents``).

    ``object`` may be a single string or ``objects`` a list. Spatial strings are
    read as ``<object> <relation> <first tool>``.
    """
    from .parsing import parse_spatial_ground_truth

    if not isinstance(record, dict):
        raise InvalidValue(index, "<record>", "expected a JSON object")
    if "action" not in record:
        raise MissingKey(index, "action")
    if not isinstance(record["action"], str):
        raise InvalidValue(index, "action", "expected a string")
    if "objects" in record:
        objects = record["objects"]
    elif "object" in record:
        objects = [record["object"]] if isinstance(record["object"], str) else record["object"]
    else:
        raise MissingKey(index, "object")
    lists = {"objects": objects}
    for key in PATTERN_LIST_KEYS:
        lists[key] = record.get(key, [])
    for key, value in lists.items():
        if not isinstance(value, list) or not all(isinstance(x, str) for x in value):
            raise InvalidValue(index, key, "expected a list of strings")
    pattern = ActionPattern.from_labels(
        record["action"],
        lists["agents"],
        lists["objects"],
        lists["tools"],
        lists["object_states_before"],
        lists["object_states_after"],
    )
    if lists["spatial_relations"] and pattern.objects:
        relatum = pattern.tools[0] if pattern.tools else ""
        relations = [parse_spatial_ground_truth(raw, pattern.objects[0], relatum) for raw in lists["spatial_relations"]]
        pattern = ActionPattern(
            pattern.action,
            pattern.agents,
            pattern.objects,
            pattern.tools,
            pattern.states_before,
            pattern.states_after,
            tuple(dict.fromkeys(r for r in relations if r.relation)),
        )
    return pattern


def pattern_to_record(p: ActionPattern) -> dict:
    record: dict = {"action": p.action, "agents": list(p.agents)}
    if len(p.objects) == 1:
        record["object"] = p.objects[0]
    else:
        record["objects"] = list(p.objects)
    record["tools"] = list(p.tools)
    if p.states_before:
        record["object_states_before"] = list(p.states_before)
    if p.states_after:
        record["object_states_after"] = list(p.states_after)
    if p.spatial_relations:
        record["spatial_relations"] = [
            r.relation if r.freeform else f"{r.subject} {r.relation} {r.relatum}" for r in p.spatial_relations
        ]
    return record


def load_patterns(path: str | Path) -> list[ActionPattern]:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"line {exc.lineno} column {exc.colno}", exc.msg) from exc
    if not isinstance(data, list):
        raise MalformedFile("line 1 column 1", "top-level value must be an array")
    return [pattern_from_record(record, i) for i, record in enumerate(data)]


def dump_patterns(patterns: Sequence[ActionPattern], path: str | Path) -> None:
    payload = [pattern_to_record(p) for p in patterns]
    Path(path).write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")

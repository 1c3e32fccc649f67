"""Turn raw model text into ranked labels and action-pattern tuples."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Collection

from .model import ActionPattern, SpatialRelation, normalize_label, validate_pattern

NONE_MARKERS = frozenset({"none", "n/a", "-"})

_LIST_MARKER = re.compile(r"^\s*(?:\d+[.)]|[-*•])\s+")
_TUPLE = re.compile(r"\(([^()]*)\)")


class EmptyParse(ValueError):
    def __init__(self, message: str = "no labels could be parsed from the response", rejected: int = 0):
        self.rejected = rejected
        super().__init__(message)


@dataclass(frozen=True)
class RankedLabels:
    labels: tuple[str, ...]
    rejected: int = 0


@dataclass(frozen=True)
class MalformedLine:
    line_number: int
    raw: str
    reason: str


@dataclass
class TupleParseReport:
    patterns: list[ActionPattern] = field(default_factory=list)
    malformed: list[MalformedLine] = field(default_factory=list)
    # 1-based line number of every parsed pattern, parallel to ``patterns``
    pattern_lines: list[int] = field(default_factory=list)


def _split_items(text: str) -> list[str]:
    items = []
    for line in text.splitlines():
        line = _LIST_MARKER.sub("", line)
        items.extend(part for part in line.split(","))
    return [label for label in map(normalize_label, items) if label]


def parse_ranked_list(raw: str, candidates: Collection[str] | None = None) -> RankedLabels:
    """Parse a comma/newline separated answer into distinct labels in response order.

    A conversational lead-in such as ``"Sure! Here are the tools:"`` is dropped
    when the first line has a colon and the text after its last colon still
    yields at least one item. Items not in ``candidates`` (when given) are
    dropped and counted as rejected.
    """
    body = raw
    first, _, rest = raw.partition("\n")
    if ":" in first:
        remainder = first.rsplit(":", 1)[1] + ("\n" + rest if rest else "")
        if _split_items(remainder):
            body = remainder

    labels: dict[str, None] = {}
    rejected = 0
    allowed = None if candidates is None else {normalize_label(c) for c in candidates}
    for label in _split_items(body):
        if label in labels:
            continue
        if allowed is not None and label not in allowed:
            rejected += 1
            continue
        labels[label] = None
    if not labels:
        raise EmptyParse(rejected=rejected)
    return RankedLabels(tuple(labels), rejected)


def _pattern_from_fields(fields: list[str]) -> ActionPattern:
    action, agent, obj = fields[:3]
    tools: list[str] = []
    if len(fields) == 4:
        tool = fields[3]
        if tool.strip().lower() not in NONE_MARKERS and normalize_label(tool) not in NONE_MARKERS:
            tools.append(tool)
    return ActionPattern.from_labels(action, [agent], [obj], tools)


def parse_pattern_tuples(raw: str) -> TupleParseReport:
    """Collect ``(action, agent, object[, tool])`` tuples, one report slot per tuple.

    Lines without an opening parenthesis are treated as chatter and skipped.
    """
    report = TupleParseReport()
    for number, line in enumerate(raw.splitlines(), start=1):
        if "(" not in line:
            continue
        groups = _TUPLE.findall(line)
        if not groups:
            report.malformed.append(MalformedLine(number, line, "unbalanced parentheses"))
            continue
        for group in groups:
            fields = group.split(",")
            if len(fields) not in (3, 4):
                report.malformed.append(
                    MalformedLine(number, line, f"expected 3 or 4 fields, got {len(fields)}")
                )
                continue
            if any(not normalize_label(f) for f in fields[:3]):
                report.malformed.append(MalformedLine(number, line, "empty action, agent or object"))
                continue
            pattern = _pattern_from_fields(fields)
            verdict = validate_pattern(pattern)
            if not verdict.ok:
                report.malformed.append(MalformedLine(number, line, "; ".join(verdict.violations)))
                continue
            report.patterns.append(pattern)
            report.pattern_lines.append(number)
    return report


def parse_spatial_ground_truth(raw: str, object: str, tool: str) -> SpatialRelation:
    """Read ``"<object> <relation> <tool>"``; anything else becomes a freeform relation."""
    text = normalize_label(raw)
    subject, relatum = normalize_label(object), normalize_label(tool)
    head, tail = subject + " ", " " + relatum
    if subject and relatum and text.startswith(head) and text.endswith(tail):
        middle = text[len(head) : len(text) - len(tail)].strip()
        if middle:
            return SpatialRelation(subject, middle, relatum)
    return SpatialRelation(subject, text, relatum, freeform=True)

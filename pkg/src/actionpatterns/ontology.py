"""OWL 2 DL TBox for action patterns and ABox population, serialized as Turtle."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence
from urllib.parse import quote, urlsplit

from .model import ActionPattern, validate_pattern

RDF = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
RDFS = "http://www.w3.org/2000/01/rdf-schema#"
OWL = "http://www.w3.org/2002/07/owl#"
XSD = "http://www.w3.org/2001/XMLSchema#"
DEFAULT_BASE_IRI = "http://example.org/action-patterns#"

CLASSES = ("Action", "Object", "State", "Location", "Time")
# property -> (domain, range)
PROPERTIES = {
    "has_agent": ("Action", "Object"),
    "has_object": ("Action", "Object"),
    "has_tool": ("Action", "Object"),
    "has_location": ("Action", "Location"),
    "has_time": ("Action", "Time"),
    "has_state": ("Object", "State"),
    "has_state_before": ("Object", "State"),
    "has_state_after": ("Object", "State"),
    "spatially_related_to": ("Object", "Object"),
}
SUB_PROPERTIES = {"has_state_before": "has_state", "has_state_after": "has_state"}
# class -> [(restriction kind, property, filler)]; has_tool's ">= 0" is vacuous and left out
RESTRICTIONS = {
    "Action": [
        ("minQualifiedCardinality", "has_agent", "Object"),
        ("minQualifiedCardinality", "has_object", "Object"),
        ("qualifiedCardinality", "has_location", "Location"),
        ("qualifiedCardinality", "has_time", "Time"),
    ],
    "Object": [("minQualifiedCardinality", "has_state", "State")],
}

STATE_TAG = "state"
RELATION_TAG = "rel"


class OntologyError(ValueError):
    pass


class EmptyLabel(OntologyError):
    pass


class InvalidPattern(OntologyError):
    def __init__(self, index: int, violations: Sequence[str]):
        self.index = index
        self.violations = tuple(violations)
        super().__init__(f"pattern {index} is invalid: {'; '.join(violations)}")


@dataclass(frozen=True)
class OntologyVocabulary:
    base_iri: str = DEFAULT_BASE_IRI

    def __post_init__(self) -> None:
        parts = urlsplit(self.base_iri)
        if not (parts.scheme and (parts.netloc or parts.path)):
            raise OntologyError(f"base IRI must be absolute: {self.base_iri!r}")
        if not self.base_iri.endswith(("/", "#")):
            raise OntologyError(f"base IRI must end with '/' or '#': {self.base_iri!r}")
        if any(c in self.base_iri for c in ' <>"{}|^`\\'):
            raise OntologyError(f"base IRI contains characters not allowed in an IRI: {self.base_iri!r}")

    @property
    def ontology_iri(self) -> str:
        return self.base_iri.rstrip("#/")


@dataclass
class OntologyDocument:
    turtle: str
    triple_count: int
    individuals: dict[str, int] = field(default_factory=dict)


def mint_iri(base: str, label: str, discriminator: str | None = None) -> str:
    """``base`` + percent-encoded label (spaces become ``_``, literal ``_`` is escaped)."""
    if not label:
        raise EmptyLabel("cannot mint an IRI for an empty label")
    local = quote(label, safe=" ").replace("_", "%5F").replace(" ", "_")
    if discriminator:
        local += "_" + quote(discriminator, safe="")
    return base + local


def _iri(iri: str) -> str:
    return f"<{iri}>"


def _literal(text: str) -> str:
    escaped = text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\r", "\\r")
    return f'"{escaped}"'


class _Graph:
    """Ordered triple buffer with Turtle output grouped by subject."""

    def __init__(self, vocab: OntologyVocabulary):
        self.vocab = vocab
        self.triples: list[tuple[str, str, str]] = []
        self._seen: set[tuple[str, str, str]] = set()
        self._bnodes = 0

    def add(self, s: str, p: str, o: str) -> None:
        if (s, p, o) not in self._seen:
            self._seen.add((s, p, o))
            self.triples.append((s, p, o))

    def bnode(self) -> str:
        self._bnodes += 1
        return f"_:r{self._bnodes}"

    def v(self, name: str) -> str:
        return ":" + name

    def serialize(self) -> str:
        lines = [
            f"@prefix : {_iri(self.vocab.base_iri)} .",
            f"@prefix owl: {_iri(OWL)} .",
            f"@prefix rdf: {_iri(RDF)} .",
            f"@prefix rdfs: {_iri(RDFS)} .",
            f"@prefix xsd: {_iri(XSD)} .",
            "",
        ]
        grouped: dict[str, dict[str, list[str]]] = {}
        for s, p, o in self.triples:
            grouped.setdefault(s, {}).setdefault(p, []).append(o)
        for s, predicates in grouped.items():
            parts = [f"{p} {' , '.join(objs)}" for p, objs in predicates.items()]
            lines.append(f"{s} " + " ;\n    ".join(parts) + " .")
            lines.append("")
        return "\n".join(lines)


def _emit_tbox(g: _Graph) -> None:
    v = g.v
    g.add(_iri(g.vocab.ontology_iri), "a", "owl:Ontology")
    for name in CLASSES:
        g.add(v(name), "a", "owl:Class")
        g.add(v(name), "rdfs:label", _literal(name))
        for restriction, prop, filler in RESTRICTIONS.get(name, ()):
            node = g.bnode()
            g.add(v(name), "rdfs:subClassOf", node)
            g.add(node, "a", "owl:Restriction")
            g.add(node, "owl:onProperty", v(prop))
            g.add(node, f"owl:{restriction}", '"1"^^xsd:nonNegativeInteger')
            g.add(node, "owl:onClass", v(filler))
    for name, (domain, range_) in PROPERTIES.items():
        g.add(v(name), "a", "owl:ObjectProperty")
        g.add(v(name), "rdfs:domain", v(domain))
        g.add(v(name), "rdfs:range", v(range_))
        if name in SUB_PROPERTIES:
            g.add(v(name), "rdfs:subPropertyOf", v(SUB_PROPERTIES[name]))


def emit_tbox(vocab: OntologyVocabulary | None = None) -> OntologyDocument:
    g = _Graph(vocab or OntologyVocabulary())
    _emit_tbox(g)
    return OntologyDocument(g.serialize(), len(g.triples), {name: 0 for name in CLASSES})


def populate(patterns: Sequence[ActionPattern], vocab: OntologyVocabulary | None = None) -> OntologyDocument:
    """TBox plus one Action individual per pattern; Object and State individuals are shared by label.

    Spatial relations become triples between Object individuals under a minted
    sub-property of ``spatially_related_to``. Freeform relations are skipped.
    """
    vocab = vocab or OntologyVocabulary()
    for i, pattern in enumerate(patterns):
        verdict = validate_pattern(pattern)
        if not verdict.ok:
            raise InvalidPattern(i, verdict.violations)

    g = _Graph(vocab)
    _emit_tbox(g)
    base = vocab.base_iri
    typed: dict[str, str] = {}
    labels: dict[str, str] = {}

    def individual(iri: str, cls: str, label: str) -> str:
        if typed.setdefault(iri, cls) != cls:
            raise OntologyError(f"IRI {iri} would be both {typed[iri]} and {cls}")
        labels[iri] = label
        return _iri(iri)

    relation_props: dict[str, str] = {}
    links: list[tuple[str, str, str]] = []
    for i, p in enumerate(patterns):
        action = individual(mint_iri(base, p.action, f"ap{i}"), "Action", p.action)
        for prop, group in (("has_agent", p.agents), ("has_object", p.objects), ("has_tool", p.tools)):
            for label in group:
                links.append((action, g.v(prop), individual(mint_iri(base, label), "Object", label)))
        for obj in p.objects:
            subject = _iri(mint_iri(base, obj))
            for prop, states in (("has_state_before", p.states_before), ("has_state_after", p.states_after)):
                for state in states:
                    links.append((subject, g.v(prop), individual(mint_iri(base, state, STATE_TAG), "State", state)))
        for rel in p.spatial_relations:
            if rel.freeform:
                continue
            prop_iri = mint_iri(base, rel.relation, RELATION_TAG)
            relation_props[prop_iri] = rel.relation
            links.append(
                (
                    individual(mint_iri(base, rel.subject), "Object", rel.subject),
                    _iri(prop_iri),
                    individual(mint_iri(base, rel.relatum), "Object", rel.relatum),
                )
            )

    for prop_iri in sorted(relation_props):
        g.add(_iri(prop_iri), "a", "owl:ObjectProperty")
        g.add(_iri(prop_iri), "rdfs:subPropertyOf", g.v("spatially_related_to"))
        g.add(_iri(prop_iri), "rdfs:label", _literal(relation_props[prop_iri]))
    by_subject: dict[str, list[tuple[str, str]]] = {}
    for s, prop, o in links:
        by_subject.setdefault(s, []).append((prop, o))
    order = {"Action": 0, "Object": 1, "State": 2}
    # stable sort: actions stay in pattern order, shared individuals sort by IRI
    ranked = sorted(typed.items(), key=lambda item: (order[item[1]], "" if item[1] == "Action" else item[0]))
    for iri, cls in ranked:
        node = _iri(iri)
        g.add(node, "a", "owl:NamedIndividual")
        g.add(node, "a", g.v(cls))
        g.add(node, "rdfs:label", _literal(labels[iri]))
        for prop, o in by_subject.get(node, ()):
            g.add(node, prop, o)

    counts = {name: 0 for name in CLASSES}
    for cls in typed.values():
        counts[cls] += 1
    return OntologyDocument(g.serialize(), len(g.triples), counts)

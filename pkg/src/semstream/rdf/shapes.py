"""A small shape language: per-predicate cardinality and datatype constraints.

Shapes and rules can be loaded from TOML::

    [prefixes]
    ex = "http://example.org/"

    [[shape]]
    target = "fhir:Patient"

      [[shape.property]]
      path = "fhir:Patient.birthDate"
      min = 1
      max = 1
      datatype = "date"

    [[rule]]
    name = "syllogism"
    text = "?x ex:isA ?c . ?c ex:is ?p => ?x ex:is ?p"

``max`` may be omitted for "unbounded". ``datatype`` is one of
``string``, ``decimal``, ``integer``, ``date``, ``dateTime`` or ``iri``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Sequence, Tuple

from .._toml import load_toml
from .inference import InferenceRule, parse_rule
from .terms import PREFIXES, Datatype, Iri, Literal, ResourceGraph, iri


class ShapeError(ValueError):
    pass


class ShapeTypeMismatch(ShapeError):
    pass


IRI_KIND = "iri"


@dataclass(frozen=True)
class PropertyConstraint:
    predicate: Iri
    min_count: int = 0
    max_count: Optional[int] = None
    datatype: Optional[str] = None  # a Datatype value or "iri"

    def __post_init__(self):
        if self.min_count < 0:
            raise ShapeError("min_count must be >= 0")
        if self.max_count is not None and self.max_count < self.min_count:
            raise ShapeError(f"{self.predicate.value}: min_count exceeds max_count")
        if self.datatype is not None and self.datatype != IRI_KIND:
            Datatype(self.datatype)


@dataclass(frozen=True)
class Shape:
    target_type: Iri
    constraints: Tuple[PropertyConstraint, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))

    def required(self) -> List[Iri]:
        return [c.predicate for c in self.constraints if c.min_count > 0]


class ViolationKind(str, enum.Enum):
    MIN_COUNT = "MIN_COUNT"
    MAX_COUNT = "MAX_COUNT"
    DATATYPE = "DATATYPE"


@dataclass(frozen=True)
class Violation:
    predicate: Iri
    kind: ViolationKind
    detail: str


@dataclass
class ValidationReport:
    conforms: bool
    violations: List[Violation] = field(default_factory=list)


def _datatype_ok(obj, expected: str) -> bool:
    if expected == IRI_KIND:
        return isinstance(obj, Iri)
    return isinstance(obj, Literal) and obj.datatype.value == expected


def validate_shape(graph: ResourceGraph, shape: Shape) -> ValidationReport:
    if graph.rdf_type != shape.target_type:
        raise ShapeTypeMismatch(
            f"graph {graph.root.value} is a {graph.rdf_type.value}, shape targets {shape.target_type.value}"
        )
    violations: List[Violation] = []
    for c in shape.constraints:
        objects = [t.object for t in graph.triples if t.subject == graph.root and t.predicate == c.predicate]
        n = len(objects)
        if n < c.min_count:
            violations.append(Violation(c.predicate, ViolationKind.MIN_COUNT, f"{n} < {c.min_count}"))
        if c.max_count is not None and n > c.max_count:
            violations.append(Violation(c.predicate, ViolationKind.MAX_COUNT, f"{n} > {c.max_count}"))
        if c.datatype is not None:
            bad = [o for o in objects if not _datatype_ok(o, c.datatype)]
            if bad:
                violations.append(Violation(
                    c.predicate, ViolationKind.DATATYPE, f"{len(bad)} value(s) not {c.datatype}",
                ))
    return ValidationReport(not violations, violations)


def _prefixes(doc: Mapping) -> dict:
    prefixes = dict(PREFIXES)
    prefixes.update(doc.get("prefixes", {}))
    return prefixes


def _expand(name: str, prefixes: Mapping[str, str]) -> Iri:
    prefix, sep, local = name.partition(":")
    if sep and prefix in prefixes:
        return Iri(prefixes[prefix] + local)
    return iri(name)


def shapes_from_config(doc: Mapping) -> List[Shape]:
    prefixes = _prefixes(doc)
    shapes = []
    for entry in doc.get("shape", []):
        constraints = [
            PropertyConstraint(
                predicate=_expand(p["path"], prefixes),
                min_count=int(p.get("min", 0)),
                max_count=int(p["max"]) if "max" in p else None,
                datatype=p.get("datatype"),
            )
            for p in entry.get("property", [])
        ]
        shapes.append(Shape(_expand(entry["target"], prefixes), tuple(constraints)))
    return shapes


def rules_from_config(doc: Mapping) -> List[InferenceRule]:
    prefixes = _prefixes(doc)
    return [parse_rule(r["text"], prefixes, r.get("name", "")) for r in doc.get("rule", [])]


def load_shapes(path) -> List[Shape]:
    return shapes_from_config(load_toml(path))


def load_rules(path) -> List[InferenceRule]:
    return rules_from_config(load_toml(path))


def shape_for(shapes: Sequence[Shape], graph: ResourceGraph) -> Optional[Shape]:
    for s in shapes:
        if s.target_type == graph.rdf_type:
            return s
    return None


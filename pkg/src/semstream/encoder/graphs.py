"""Stage 2: domain records to FHIR-style RDF resource graphs.

This module must not import any wire-format module (hl7v2, fhir, pipe);
its only inputs are :mod:`semstream.records` values. One routine per
resource type is registered in :data:`GRAPH_ENCODERS`.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime
from decimal import Decimal
from typing import Any, Callable, Dict, List, Optional, Tuple, Type
from urllib.parse import quote, unquote

from ..clock import format_timestamp, parse_timestamp
from ..records import (
    AbnormalFlag,
    Coding,
    DomainRecord,
    EncounterClass,
    EncounterRecord,
    EncounterStatus,
    ObservationRecord,
    PatientRecord,
    Sex,
)
from ..rdf.shapes import IRI_KIND, PropertyConstraint, Shape
from ..rdf.terms import (
    FHIR,
    INGESTED_AT,
    RDF_TYPE,
    Datatype,
    Iri,
    Literal,
    ResourceGraph,
    Term,
    Triple,
    decimal_literal,
)

SUBJECT_SCHEME = "urn:fhir:"

_GENDER = {Sex.F: "female", Sex.M: "male", Sex.O: "other", Sex.U: "unknown"}
_SEX = {v: k for k, v in _GENDER.items()}


class GraphDecodeError(ValueError):
    pass


def resource_iri(resource_type: str, rid: str) -> Iri:
    return Iri(f"{SUBJECT_SCHEME}{resource_type}/{quote(rid, safe='-._~')}")


def resource_id(node: Iri, resource_type: str) -> str:
    prefix = f"{SUBJECT_SCHEME}{resource_type}/"
    if not node.value.startswith(prefix):
        raise GraphDecodeError(f"{node.value} is not a {resource_type} reference")
    return unquote(node.value[len(prefix):])


def type_iri(resource_type: str) -> Iri:
    return Iri(FHIR + resource_type)


# --- value converters --------------------------------------------------------

@dataclass(frozen=True)
class Converter:
    kind: str  # a Datatype value or "iri"
    to_term: Callable[[Any], Term]
    from_term: Callable[[Term], Any]


def _lit(term: Term) -> str:
    if not isinstance(term, Literal):
        raise GraphDecodeError(f"expected a literal, got {term}")
    return term.lexical


STRING = Converter("string", lambda v: Literal(str(v)), _lit)
DATE = Converter("date", lambda v: Literal(v.isoformat(), Datatype.DATE), lambda t: date.fromisoformat(_lit(t)))
DATETIME = Converter(
    "dateTime",
    lambda v: Literal(format_timestamp(v), Datatype.DATETIME),
    lambda t: parse_timestamp(_lit(t)),
)
DECIMAL = Converter("decimal", decimal_literal, lambda t: Decimal(_lit(t)))


def _enum(cls, render: Optional[Dict] = None) -> Converter:
    back = {v: k for k, v in render.items()} if render else None
    return Converter(
        "string",
        lambda v: Literal(render[v] if render else cls(v).value),
        lambda t: back[_lit(t)] if back else cls(_lit(t)),
    )


def _ref(resource_type: str) -> Converter:
    def from_term(term: Term) -> str:
        if not isinstance(term, Iri):
            raise GraphDecodeError(f"expected a {resource_type} reference, got {term}")
        return resource_id(term, resource_type)
    return Converter(IRI_KIND, lambda v: resource_iri(resource_type, v), from_term)


# --- mapping table -----------------------------------------------------------

@dataclass(frozen=True)
class FieldMapping:
    field: str  # attribute path on the record, dotted for nested values
    predicate: Iri
    converter: Converter
    required: bool = False


def _p(path: str) -> Iri:
    return Iri(FHIR + path)


@dataclass(frozen=True)
class ResourceMapping:
    resource_type: str
    record_type: Type
    fields: Tuple[FieldMapping, ...]

    def predicates(self) -> List[Iri]:
        return [f.predicate for f in self.fields]


MAPPING_TABLE: Dict[Type, ResourceMapping] = {
    PatientRecord: ResourceMapping("Patient", PatientRecord, (
        FieldMapping("id", _p("Patient.identifier.value"), STRING, True),
        FieldMapping("family", _p("Patient.name.family"), STRING),
        FieldMapping("given", _p("Patient.name.given"), STRING),
        FieldMapping("middle", _p("Patient.name.middle"), STRING),
        FieldMapping("dob", _p("Patient.birthDate"), DATE, True),
        FieldMapping("sex", _p("Patient.gender"), _enum(Sex, _GENDER), True),
        FieldMapping("street", _p("Patient.address.line"), STRING),
        FieldMapping("city", _p("Patient.address.city"), STRING),
        FieldMapping("state", _p("Patient.address.state"), STRING),
        FieldMapping("zip", _p("Patient.address.postalCode"), STRING),
        FieldMapping("phone", _p("Patient.telecom.value"), STRING),
    )),
    EncounterRecord: ResourceMapping("Encounter", EncounterRecord, (
        FieldMapping("id", _p("Encounter.identifier.value"), STRING, True),
        FieldMapping("patient_id", _p("Encounter.subject"), _ref("Patient"), True),
        FieldMapping("encounter_class", _p("Encounter.class"), _enum(EncounterClass), True),
        FieldMapping("start", _p("Encounter.period.start"), DATETIME, True),
        FieldMapping("end", _p("Encounter.period.end"), DATETIME),
        FieldMapping("status", _p("Encounter.status"), _enum(EncounterStatus), True),
    )),
    ObservationRecord: ResourceMapping("Observation", ObservationRecord, (
        FieldMapping("id", _p("Observation.identifier.value"), STRING, True),
        FieldMapping("patient_id", _p("Observation.subject"), _ref("Patient"), True),
        FieldMapping("encounter_id", _p("Observation.encounter"), _ref("Encounter")),
        FieldMapping("code.system", _p("Observation.code.coding.system"), STRING, True),
        FieldMapping("code.code", _p("Observation.code.coding.code"), STRING, True),
        FieldMapping("code.display", _p("Observation.code.coding.display"), STRING),
        FieldMapping("value", _p("Observation.valueQuantity.value"), DECIMAL, True),
        FieldMapping("units", _p("Observation.valueQuantity.unit"), STRING),
        FieldMapping("reference_range", _p("Observation.referenceRange.text"), STRING),
        FieldMapping("abnormal_flag", _p("Observation.interpretation.code"), _enum(AbnormalFlag)),
        FieldMapping("effective_at", _p("Observation.effectiveDateTime"), DATETIME, True),
        FieldMapping("performer", _p("Observation.performer.display"), STRING),
    )),
}

_BY_TYPE_IRI = {type_iri(m.resource_type): m for m in MAPPING_TABLE.values()}


def _get(rec: Any, path: str) -> Any:
    for part in path.split("."):
        rec = getattr(rec, part)
    return rec


def _present(value: Any) -> bool:
    return value is not None and value != ""


def encode_record(rec: DomainRecord, ingested_at: datetime) -> ResourceGraph:
    """Map one record to its resource graph, stamped with ``ingested_at``.

    Absent optional fields (None or empty string) produce no triple.
    """
    mapping = MAPPING_TABLE[type(rec)]
    root = resource_iri(mapping.resource_type, rec.id)
    triples = {
        Triple(root, RDF_TYPE, type_iri(mapping.resource_type)),
        Triple(root, INGESTED_AT, DATETIME.to_term(ingested_at)),
    }
    for fm in mapping.fields:
        value = _get(rec, fm.field)
        if _present(value):
            triples.add(Triple(root, fm.predicate, fm.converter.to_term(value)))
    return ResourceGraph(root, frozenset(triples), ingested_at)


def _encoder_for(record_type: Type) -> Callable[[DomainRecord, datetime], ResourceGraph]:
    def encode(rec: DomainRecord, ingested_at: datetime) -> ResourceGraph:
        if not isinstance(rec, record_type):
            raise TypeError(f"expected {record_type.__name__}, got {type(rec).__name__}")
        return encode_record(rec, ingested_at)
    encode.__name__ = f"encode_{record_type.__name__}"
    return encode


# Stage-2 routines, one per resource type (the M in N + M).
GRAPH_ENCODERS: Dict[str, Callable[[DomainRecord, datetime], ResourceGraph]] = {
    m.resource_type: _encoder_for(t) for t, m in MAPPING_TABLE.items()
}


def decode_graph(graph: ResourceGraph) -> DomainRecord:
    """Inverse of :func:`encode_record` (ignores the ingest stamp)."""
    mapping = _BY_TYPE_IRI.get(graph.rdf_type)
    if mapping is None:
        raise GraphDecodeError(f"no mapping for {graph.rdf_type.value}")
    values: Dict[Iri, Term] = {}
    for t in graph.triples:
        if t.subject == graph.root:
            values[t.predicate] = t.object
    kwargs: Dict[str, Any] = {}
    coding: Dict[str, Any] = {}
    for fm in mapping.fields:
        term = values.get(fm.predicate)
        if term is None:
            continue
        value = fm.converter.from_term(term)
        if fm.field.startswith("code."):
            coding[fm.field[5:]] = value
        else:
            kwargs[fm.field] = value
    if mapping.record_type is ObservationRecord:
        kwargs["code"] = Coding(**coding)
    try:
        return mapping.record_type(**kwargs)
    except TypeError as exc:
        raise GraphDecodeError(f"{graph.root.value}: {exc}") from exc


def resource_shape(resource_type: str) -> Shape:
    mapping = next(m for m in MAPPING_TABLE.values() if m.resource_type == resource_type)
    constraints = [PropertyConstraint(INGESTED_AT, 1, 1, Datatype.DATETIME.value)]
    constraints += [
        PropertyConstraint(fm.predicate, 1 if fm.required else 0, 1, fm.converter.kind)
        for fm in mapping.fields
    ]
    return Shape(type_iri(resource_type), tuple(constraints))


def resource_shapes() -> List[Shape]:
    return [resource_shape(m.resource_type) for m in MAPPING_TABLE.values()]

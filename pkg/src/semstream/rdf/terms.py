"""RDF terms, triples, triple patterns and timestamped resource graphs."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from datetime import datetime
from decimal import Decimal, InvalidOperation
from typing import FrozenSet, Iterable, Optional, Union

from ..clock import parse_timestamp

RDF = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
XSD = "http://www.w3.org/2001/XMLSchema#"
FHIR = "http://hl7.org/fhir/"
SEM = "urn:semstream:"

PREFIXES = {
    "rdf": RDF,
    "xsd": XSD,
    "fhir": FHIR,
    "sem": SEM,
}


class TermError(ValueError):
    pass


class Datatype(str, enum.Enum):
    STRING = "string"
    DECIMAL = "decimal"
    INTEGER = "integer"
    DATE = "date"
    DATETIME = "dateTime"

    @property
    def iri(self) -> str:
        return XSD + self.value


_LEXICAL = {
    Datatype.DECIMAL: re.compile(r"[+-]?(\d+(\.\d*)?|\.\d+)\Z"),
    Datatype.INTEGER: re.compile(r"[+-]?\d+\Z"),
    Datatype.DATE: re.compile(r"-?\d{4,}-\d{2}-\d{2}(Z|[+-]\d{2}:\d{2})?\Z"),
    Datatype.DATETIME: re.compile(
        r"-?\d{4,}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(\.\d+)?(Z|[+-]\d{2}:\d{2})?\Z"
    ),
}

_IRI_FORBIDDEN = re.compile(r'[\x00-\x20<>"{}|^`\\]')
_SCHEME = re.compile(r"[A-Za-z][A-Za-z0-9+.-]*:")
_BLANK_LABEL = re.compile(r"[A-Za-z0-9_][A-Za-z0-9_-]*\Z")
_VARIABLE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


@dataclass(frozen=True, order=True)
class Iri:
    value: str

    def __post_init__(self):
        if not self.value or not _SCHEME.match(self.value) or _IRI_FORBIDDEN.search(self.value):
            raise TermError(f"not an absolute IRI: {self.value!r}")

    def __str__(self) -> str:
        return f"<{self.value}>"


@dataclass(frozen=True, order=True)
class Blank:
    label: str

    def __post_init__(self):
        if not _BLANK_LABEL.match(self.label):
            raise TermError(f"bad blank node label {self.label!r}")

    def __str__(self) -> str:
        return f"_:{self.label}"


@dataclass(frozen=True)
class Literal:
    lexical: str
    datatype: Datatype = Datatype.STRING

    def __post_init__(self):
        object.__setattr__(self, "datatype", Datatype(self.datatype))
        pattern = _LEXICAL.get(self.datatype)
        if pattern is not None and not pattern.match(self.lexical):
            raise TermError(f"{self.lexical!r} is not a valid xsd:{self.datatype.value}")

    @property
    def is_numeric(self) -> bool:
        return self.datatype in (Datatype.DECIMAL, Datatype.INTEGER)

    def numeric(self) -> Decimal:
        if not self.is_numeric:
            raise TermError(f"literal {self.lexical!r} is xsd:{self.datatype.value}, not numeric")
        try:
            return Decimal(self.lexical)
        except InvalidOperation as exc:  # pragma: no cover - guarded by the lexical check
            raise TermError(str(exc)) from exc

    def __str__(self) -> str:
        return f'"{self.lexical}"^^xsd:{self.datatype.value}'


@dataclass(frozen=True, order=True)
class Variable:
    name: str

    def __post_init__(self):
        if not _VARIABLE.match(self.name):
            raise TermError(f"bad variable name {self.name!r}")

    def __str__(self) -> str:
        return f"?{self.name}"


Term = Union[Iri, Literal, Blank]
PatternTerm = Union[Iri, Literal, Blank, Variable]


def term_key(term: PatternTerm) -> tuple:
    """Total order over terms: kind, then lexical value, then datatype."""
    if isinstance(term, Iri):
        return (0, term.value, "")
    if isinstance(term, Blank):
        return (1, term.label, "")
    if isinstance(term, Literal):
        return (2, term.lexical, term.datatype.value)
    return (3, term.name, "")


def iri(value: str) -> Iri:
    """Build an IRI, expanding a known ``prefix:local`` name."""
    prefix, sep, local = value.partition(":")
    if sep and prefix in PREFIXES and not local.startswith("//"):
        return Iri(PREFIXES[prefix] + local)
    return Iri(value)


RDF_TYPE = Iri(RDF + "type")
INGESTED_AT = Iri(SEM + "ingestedAt")


def decimal_literal(value: Decimal | int | str) -> Literal:
    d = Decimal(value)
    if not d.is_finite():
        raise TermError("decimal literals must be finite")
    return Literal(format(d, "f"), Datatype.DECIMAL)


@dataclass(frozen=True)
class Triple:
    subject: Union[Iri, Blank]
    predicate: Iri
    object: Term

    def __post_init__(self):
        if not isinstance(self.subject, (Iri, Blank)):
            raise TermError(f"subject must be an IRI or blank node, got {self.subject!r}")
        if not isinstance(self.predicate, Iri):
            raise TermError(f"predicate must be an IRI, got {self.predicate!r}")
        if not isinstance(self.object, (Iri, Blank, Literal)):
            raise TermError(f"object must be a term, got {self.object!r}")

    def sort_key(self) -> tuple:
        return (term_key(self.subject), term_key(self.predicate), term_key(self.object))

    def __str__(self) -> str:
        return f"{self.subject} {self.predicate} {self.object} ."


@dataclass(frozen=True)
class TriplePattern:
    subject: PatternTerm
    predicate: PatternTerm
    object: PatternTerm

    def __iter__(self):
        return iter((self.subject, self.predicate, self.object))

    @property
    def variables(self) -> FrozenSet[Variable]:
        return frozenset(t for t in self if isinstance(t, Variable))

    def __str__(self) -> str:
        return f"{self.subject} {self.predicate} {self.object}"


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class ResourceGraph:
    """All triples describing one resource, stamped with its ingest time."""

    root: Iri
    triples: FrozenSet[Triple]
    ingested_at: datetime

    def __post_init__(self):
        object.__setattr__(self, "triples", frozenset(self.triples))
        types = [t for t in self.triples if t.subject == self.root and t.predicate == RDF_TYPE]
        if len(types) != 1:
            raise GraphError(f"{self.root.value} must have exactly one rdf:type triple, has {len(types)}")
        if self.ingested_at.tzinfo is None:
            raise GraphError("ingested_at must be timezone-aware")

    @property
    def rdf_type(self) -> Iri:
        for t in self.triples:
            if t.subject == self.root and t.predicate == RDF_TYPE:
                return t.object  # type: ignore[return-value]
        raise GraphError("unreachable")

    def __len__(self) -> int:
        return len(self.triples)

    def sorted_triples(self) -> list:
        return sorted(self.triples, key=Triple.sort_key)

    @classmethod
    def from_triples(cls, triples: Iterable[Triple], root: Optional[Iri] = None) -> "ResourceGraph":
        """Rebuild a graph from its triples, reading the ingest time from ``sem:ingestedAt``."""
        triples = frozenset(triples)
        if root is None:
            roots = {t.subject for t in triples if t.predicate == INGESTED_AT}
            if len(roots) != 1:
                raise GraphError(f"expected one sem:ingestedAt subject, found {len(roots)}")
            root = roots.pop()
        stamps = [t.object for t in triples if t.subject == root and t.predicate == INGESTED_AT]
        if len(stamps) != 1 or not isinstance(stamps[0], Literal):
            raise GraphError(f"{root} needs exactly one sem:ingestedAt literal")
        return cls(root, triples, parse_timestamp(stamps[0].lexical))

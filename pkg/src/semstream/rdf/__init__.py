"""RDF data model, Turtle I/O, rule inference and shape validation."""

from .inference import InferenceRule, RuleError, apply_rules, parse_rule
from .shapes import (
    PropertyConstraint,
    Shape,
    ShapeTypeMismatch,
    ValidationReport,
    Violation,
    ViolationKind,
    validate_shape,
)
from .terms import (
    FHIR,
    INGESTED_AT,
    PREFIXES,
    RDF_TYPE,
    SEM,
    Blank,
    Datatype,
    GraphError,
    Iri,
    Literal,
    ResourceGraph,
    TermError,
    Triple,
    TriplePattern,
    Variable,
    decimal_literal,
    iri,
    term_key,
)
from .turtle import TurtleSyntaxError, format_term, parse_pattern, parse_term, parse_turtle, serialize_turtle

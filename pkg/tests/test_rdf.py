from importlib import resources

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semstream import hl7v2
from semstream.clock import DEFAULT_EPOCH
from semstream.encoder import encode_record, resource_shape, resource_shapes
from semstream.rdf import (
    FHIR,
    PREFIXES,
    RDF_TYPE,
    Datatype,
    InferenceRule,
    Iri,
    Literal,
    ResourceGraph,
    RuleError,
    Shape,
    ShapeTypeMismatch,
    TermError,
    Triple,
    TriplePattern,
    TurtleSyntaxError,
    ViolationKind,
    apply_rules,
    parse_rule,
    parse_turtle,
    serialize_turtle,
    validate_shape,
)
from semstream.rdf.shapes import ShapeError, PropertyConstraint, load_rules, load_shapes
from semstream.rdf.terms import Variable
from semstream.rdf.turtle import prefix_header

from oracles import all_solutions, naive_closure
from strategies import SMALL_PREDICATES, SMALL_SUBJECTS, VARIABLES, triple_sets

EX = "http://example.org/"
EX_PREFIXES = {"ex": EX}


def ex(local):
    return Iri(EX + local)


# --- terms -------------------------------------------------------------------

@pytest.mark.parametrize("value", ["", "no-scheme", "http://a b", "urn:x<y>"])
def test_bad_iris(value):
    with pytest.raises(TermError):
        Iri(value)


@pytest.mark.parametrize("lexical, dt", [("1.2.3", Datatype.DECIMAL), ("x", Datatype.INTEGER),
                                          ("2024-13", Datatype.DATE), ("2024-01-01", Datatype.DATETIME)])
def test_bad_literals(lexical, dt):
    with pytest.raises(TermError):
        Literal(lexical, dt)


def test_literal_subject_rejected():
    with pytest.raises(TermError):
        Triple(Literal("x"), ex("p"), ex("o"))


def test_graph_needs_exactly_one_type():
    root = ex("r")
    two = {Triple(root, RDF_TYPE, ex("A")), Triple(root, RDF_TYPE, ex("B"))}
    with pytest.raises(ValueError):
        ResourceGraph(root, two, DEFAULT_EPOCH)
    with pytest.raises(ValueError):
        ResourceGraph(root, set(), DEFAULT_EPOCH)


# --- turtle ------------------------------------------------------------------

def test_blood_pressure_statement():
    triple = Triple(ex("bloodPressure"), ex("value"), Literal("120", Datatype.DECIMAL))
    doc = serialize_turtle({triple}, {**PREFIXES, **EX_PREFIXES})
    body = [l for l in doc.splitlines() if l and not l.startswith("@prefix")]
    assert body == ["ex:bloodPressure", '    ex:value "120"^^xsd:decimal .']
    assert parse_turtle(doc) == {triple}


def test_empty_document_is_header_only():
    assert serialize_turtle(set()) == prefix_header()
    assert parse_turtle(serialize_turtle(set())) == set()


@given(triple_sets)
@settings(max_examples=300)
def test_turtle_round_trip(triples):
    assert parse_turtle(serialize_turtle(triples)) == set(triples)


@given(triple_sets, st.randoms())
@settings(max_examples=50)
def test_turtle_is_deterministic(triples, rnd):
    shuffled = list(triples)
    rnd.shuffle(shuffled)
    assert serialize_turtle(shuffled) == serialize_turtle(triples)


def test_parse_hand_written():
    text = """@prefix ex: <http://example.org/> .
    ex:a a ex:Thing ; ex:n 5, 2.5 ; ex:s "hi\\n" .
    <urn:b> ex:d "2024-01-01"^^<http://www.w3.org/2001/XMLSchema#date> .
    """
    got = parse_turtle(text)
    assert Triple(ex("a"), RDF_TYPE, ex("Thing")) in got
    assert Triple(ex("a"), ex("n"), Literal("5", Datatype.INTEGER)) in got
    assert Triple(ex("a"), ex("n"), Literal("2.5", Datatype.DECIMAL)) in got
    assert Triple(ex("a"), ex("s"), Literal("hi\n")) in got
    assert Triple(Iri("urn:b"), ex("d"), Literal("2024-01-01", Datatype.DATE)) in got


@pytest.mark.parametrize("text, line, column", [
    ("ex:a ex:b ex:c .", 1, 1),  # undeclared prefix
    ("@prefix ex: <http://example.org/> .\nex:a ex:b", 2, 10),
    ("@prefix ex: <http://example.org/> .\n\nex:a ex:b ex:c ex:d .", 3, 16),
])
def test_syntax_errors_carry_position(text, line, column):
    with pytest.raises(TurtleSyntaxError) as exc:
        parse_turtle(text)
    assert (exc.value.line, exc.value.column) == (line, column)
    assert isinstance(exc.value, SyntaxError)


# --- inference ---------------------------------------------------------------

SYLLOGISM = "?x ex:isA ?c . ?c ex:is ?p => ?x ex:is ?p"


def test_syllogism():
    rule = parse_rule(SYLLOGISM, EX_PREFIXES)
    facts = {Triple(ex("Socrates"), ex("isA"), ex("man")), Triple(ex("man"), ex("is"), ex("mortal"))}
    closure = apply_rules(facts, [rule])
    assert closure - facts == {Triple(ex("Socrates"), ex("is"), ex("mortal"))}
    assert len(closure) == 3
    assert apply_rules(closure, [rule]) == closure


def test_packaged_rules_file():
    rules = load_rules(resources.files("semstream") / "data" / "rules.toml")
    assert [r.name for r in rules] == ["syllogism"]
    assert rules[0] == parse_rule(SYLLOGISM, EX_PREFIXES, "syllogism")


def test_no_rules_is_identity():
    facts = {Triple(ex("a"), ex("b"), ex("c"))}
    assert apply_rules(facts, []) == facts


@pytest.mark.parametrize("text", ["?x ex:a ?y => ?z ex:a ?y", "?x ex:a ?y", "=> ?x ex:a ex:b"])
def test_bad_rules(text):
    with pytest.raises((RuleError, TurtleSyntaxError)):
        parse_rule(text, EX_PREFIXES)


_rule_terms = st.one_of(st.sampled_from(VARIABLES[:3]), st.sampled_from(SMALL_SUBJECTS[:3]))


@st.composite
def rules(draw):
    n = draw(st.integers(1, 2))
    ants = [TriplePattern(draw(_rule_terms), draw(st.sampled_from(SMALL_PREDICATES)), draw(_rule_terms))
            for _ in range(n)]
    bound = sorted(set().union(*(a.variables for a in ants)), key=lambda v: v.name)
    pool = bound + SMALL_SUBJECTS[:2]
    head = TriplePattern(draw(st.sampled_from(pool)), draw(st.sampled_from(SMALL_PREDICATES)),
                         draw(st.sampled_from(pool)))
    return InferenceRule(tuple(ants), head)


_graph_triples = st.builds(Triple, st.sampled_from(SMALL_SUBJECTS), st.sampled_from(SMALL_PREDICATES),
                           st.sampled_from(SMALL_SUBJECTS))


@given(st.frozensets(_graph_triples, min_size=30, max_size=30), st.lists(rules(), min_size=1, max_size=3))
@settings(max_examples=60, deadline=None)
def test_closure_matches_naive_fixpoint(triples, rule_list):
    closure = apply_rules(triples, rule_list)
    assert closure == naive_closure(triples, rule_list)
    assert triples <= closure
    assert apply_rules(closure, rule_list) == closure


def _instantiate(pattern, binding):
    return Triple(*(binding[t.name] if isinstance(t, Variable) else t for t in pattern))


@given(st.frozensets(_graph_triples, max_size=20), st.lists(rules(), min_size=1, max_size=2))
@settings(max_examples=40, deadline=None)
def test_soundness(triples, rule_list):
    closure = apply_rules(triples, rule_list)
    derivable = set()
    for rule in rule_list:
        for b in all_solutions(list(rule.antecedents), closure):
            derivable.add(_instantiate(rule.consequent, b))
    assert closure - triples <= derivable


# --- shapes ------------------------------------------------------------------

def _oru_patient_graph(text):
    patient, _ = hl7v2.extract_observations(hl7v2.parse_message(text))
    return encode_record(patient, DEFAULT_EPOCH)


def _manual_walk(graph, shape):
    """Check constraints one by one without the validator."""
    ok = True
    for c in shape.constraints:
        objs = [t.object for t in graph.triples if t.subject == graph.root and t.predicate == c.predicate]
        ok &= c.min_count <= len(objs) and (c.max_count is None or len(objs) <= c.max_count)
        if c.datatype == "iri":
            ok &= all(isinstance(o, Iri) for o in objs)
        elif c.datatype:
            ok &= all(isinstance(o, Literal) and o.datatype.value == c.datatype for o in objs)
    return ok


def test_oru_sample_patient_conforms(oru_text):
    graph = _oru_patient_graph(oru_text)
    shape = resource_shape("Patient")
    birth = [c for c in shape.constraints if c.predicate == Iri(FHIR + "Patient.birthDate")]
    assert birth and (birth[0].min_count, birth[0].max_count, birth[0].datatype) == (1, 1, "date")
    assert _manual_walk(graph, shape)
    report = validate_shape(graph, shape)
    assert report.conforms and report.violations == []


def test_missing_birth_date(oru_text):
    graph = _oru_patient_graph(oru_text)
    birth = Iri(FHIR + "Patient.birthDate")
    stripped = ResourceGraph(graph.root, {t for t in graph.triples if t.predicate != birth}, graph.ingested_at)
    report = validate_shape(stripped, resource_shape("Patient"))
    assert not report.conforms
    assert [(v.predicate, v.kind) for v in report.violations] == [(birth, ViolationKind.MIN_COUNT)]


def test_max_count_and_datatype_violations():
    root = ex("r")
    p = ex("p")
    graph = ResourceGraph(root, {Triple(root, RDF_TYPE, ex("T")), Triple(root, p, Literal("a")),
                                 Triple(root, p, Literal("b"))}, DEFAULT_EPOCH)
    report = validate_shape(graph, Shape(ex("T"), (PropertyConstraint(p, 0, 1, "decimal"),)))
    assert {v.kind for v in report.violations} == {ViolationKind.MAX_COUNT, ViolationKind.DATATYPE}


def test_shape_type_mismatch(oru_text):
    with pytest.raises(ShapeTypeMismatch):
        validate_shape(_oru_patient_graph(oru_text), resource_shape("Observation"))


def test_min_above_max_rejected():
    with pytest.raises(ShapeError):
        PropertyConstraint(ex("p"), 2, 1)


def test_packaged_shapes_match_mapping_table():
    assert load_shapes(resources.files("semstream") / "data" / "shapes.toml") == resource_shapes()

"""Hypothesis strategies shared by the property tests."""

from datetime import date, datetime, timedelta, timezone
from decimal import Decimal

from hypothesis import strategies as st

from semstream.clock import DEFAULT_EPOCH
from semstream.hl7v2 import Hl7Message, Segment
from semstream.rdf import ResourceGraph
from semstream.rdf.terms import RDF_TYPE, Blank, Datatype, Iri, Literal, Triple, TriplePattern, Variable
from semstream.records import (
    AbnormalFlag,
    Coding,
    EncounterClass,
    EncounterRecord,
    EncounterStatus,
    ObservationRecord,
    PatientRecord,
    Sex,
)

# --- RDF terms ---------------------------------------------------------------

_NAMESPACES = ["http://hl7.org/fhir/", "http://example.org/", "urn:semstream:", "urn:x:"]
_LOCAL = st.text("abcXYZ019_.-/#", min_size=0, max_size=8)

iris = st.builds(lambda ns, local: Iri(ns + local), st.sampled_from(_NAMESPACES), _LOCAL)
blanks = st.builds(Blank, st.from_regex(r"[a-z][a-z0-9_]{0,5}", fullmatch=True))

_text = st.text(st.characters(blacklist_categories=("Cs",)), max_size=12)
_decimals = st.decimals(min_value=-10**6, max_value=10**6, places=3, allow_nan=False, allow_infinity=False)
_dates = st.dates(min_value=date(1900, 1, 1), max_value=date(2100, 12, 31))
_datetimes = st.datetimes(min_value=datetime(1970, 1, 2), max_value=datetime(2100, 1, 1),
                          timezones=st.just(timezone.utc))

literals = st.one_of(
    st.builds(Literal, _text),
    st.builds(lambda d: Literal(format(d, "f"), Datatype.DECIMAL), _decimals),
    st.builds(lambda i: Literal(str(i), Datatype.INTEGER), st.integers(-10**9, 10**9)),
    st.builds(lambda d: Literal(d.isoformat(), Datatype.DATE), _dates),
    st.builds(lambda t: Literal(t.isoformat(timespec="milliseconds").replace("+00:00", "Z"), Datatype.DATETIME),
              _datetimes),
)

triples = st.builds(Triple, st.one_of(iris, blanks), iris, st.one_of(iris, blanks, literals))
triple_sets = st.frozensets(triples, max_size=25)

# Small vocabularies so random patterns actually join.
SMALL_SUBJECTS = [Iri(f"urn:s:{i}") for i in range(6)]
SMALL_PREDICATES = [Iri(f"urn:p:{i}") for i in range(4)]
SMALL_OBJECTS = SMALL_SUBJECTS + [Literal(str(i), Datatype.DECIMAL) for i in range(0, 200, 25)] + [Literal("x")]
VARIABLES = [Variable(n) for n in "abcd"]

small_triples = st.builds(
    Triple, st.sampled_from(SMALL_SUBJECTS), st.sampled_from(SMALL_PREDICATES), st.sampled_from(SMALL_OBJECTS)
)


def small_patterns(var_weight=0.5):
    def term(pool):
        return st.one_of(st.sampled_from(VARIABLES), st.sampled_from(pool))
    return st.builds(TriplePattern, term(SMALL_SUBJECTS), term(SMALL_PREDICATES), term(SMALL_OBJECTS))


# --- seeded stores and queries over the small vocabulary ---------------------

THING = Iri("urn:type:Thing")


def random_graphs(rng, total=100, t0=DEFAULT_EPOCH):
    """One graph per small subject, ``total`` triples in all, ingested within 20 s of ``t0``."""
    graphs = []
    count = 0
    subjects = list(SMALL_SUBJECTS)
    rng.shuffle(subjects)
    for i, root in enumerate(subjects):
        body = {Triple(root, RDF_TYPE, THING)}
        want = (total - count) // (len(subjects) - i)
        while len(body) < want:
            body.add(Triple(root, rng.choice(SMALL_PREDICATES), rng.choice(SMALL_OBJECTS)))
        graphs.append(ResourceGraph(root, body, t0 + timedelta(seconds=rng.randint(1, 20))))
        count += len(body)
    return graphs


def random_query(rng):
    """(patterns, filters, select) with filters as (var, op, Decimal) and select as names."""
    patterns = []
    for _ in range(rng.randint(1, 3)):
        s = rng.choice(VARIABLES[:2]) if rng.random() < 0.85 else rng.choice(SMALL_SUBJECTS)
        p = rng.choice(SMALL_PREDICATES) if rng.random() < 0.7 else rng.choice(VARIABLES[2:])
        o = rng.choice(VARIABLES) if rng.random() < 0.75 else rng.choice(SMALL_OBJECTS)
        patterns.append(TriplePattern(s, p, o))
    bound = sorted({v for pat in patterns for v in pat.variables}, key=lambda v: v.name)
    if not bound:
        patterns.append(TriplePattern(VARIABLES[0], VARIABLES[2], VARIABLES[3]))
        bound = [VARIABLES[0], VARIABLES[2], VARIABLES[3]]
    filters = []
    if rng.random() < 0.6:
        filters.append((rng.choice(bound).name, rng.choice(["<", "<=", "=", ">=", ">"]),
                        Decimal(rng.randrange(0, 200, 25))))
    select = rng.sample(bound, rng.randint(1, len(bound)))
    return patterns, filters, [v.name for v in select]


# --- HL7v2 trees -------------------------------------------------------------

_LEAF_ALPHABET = "aZ09 .-_/X" + "\r\n\\|^~&"
_leaf = st.text(_LEAF_ALPHABET, max_size=5)
_component = st.lists(_leaf, min_size=1, max_size=2)
_repetition = st.lists(_component, min_size=1, max_size=3)
_field = st.one_of(
    _leaf.map(lambda s: [[[s]]]),
    st.lists(_repetition, min_size=1, max_size=2),
)
_segment_ids = st.sampled_from(["PID", "OBR", "OBX", "PV1", "NTE", "ZX1", "Z99"])


@st.composite
def hl7_messages(draw):
    msh_fields = [[[["|"]]], [[["^~\\&"]]]] + draw(st.lists(_field, min_size=7, max_size=9))
    segments = [Segment("MSH", msh_fields)]
    for _ in range(draw(st.integers(0, 4))):
        segments.append(Segment(draw(_segment_ids), draw(st.lists(_field, min_size=1, max_size=6))))
    return Hl7Message(segments)


# --- domain records ----------------------------------------------------------

_ids = st.from_regex(r"[A-Za-z0-9][A-Za-z0-9.-]{0,11}", fullmatch=True)
_aware = st.datetimes(min_value=datetime(1990, 1, 1), max_value=datetime(2090, 1, 1),
                      timezones=st.just(timezone.utc)).map(lambda t: t.replace(microsecond=t.microsecond // 1000 * 1000))


@st.composite
def encounter_records(draw):
    start = draw(_aware)
    end = draw(st.one_of(st.none(), st.timedeltas(timedelta(0), timedelta(days=30)).map(
        lambda d: start + timedelta(milliseconds=d // timedelta(milliseconds=1)))))
    return EncounterRecord(
        id=draw(_ids), patient_id=draw(_ids), encounter_class=draw(st.sampled_from(list(EncounterClass))),
        start=start, status=draw(st.sampled_from(list(EncounterStatus))), end=end,
    )


_name = st.text("ABCDEFGHIJKLMNOPQRSTUVWXYZ '", min_size=1, max_size=10)
_opt_name = st.one_of(st.none(), _name)

patient_records = st.builds(
    PatientRecord,
    id=_ids, family=_name, dob=_dates, sex=st.sampled_from(list(Sex)), given=_name,
    middle=_opt_name, street=_opt_name, city=_opt_name, state=_opt_name, zip=_opt_name, phone=_opt_name,
)

observation_records = st.builds(
    ObservationRecord,
    id=_ids, patient_id=_ids,
    code=st.builds(Coding, st.sampled_from(["8480-6", "8462-4", "8867-4", "8310-5", "1554-5"]), _opt_name.map(lambda s: s or "")),
    value=_decimals.map(Decimal), units=st.sampled_from(["mm[Hg]", "/min", "Cel", "mg/dl"]),
    effective_at=_aware,
    encounter_id=st.one_of(st.none(), _ids), reference_range=st.one_of(st.none(), st.just("70_105")),
    abnormal_flag=st.one_of(st.none(), st.sampled_from(list(AbnormalFlag))), performer=_opt_name,
)

ingest_times = st.integers(1, 100).map(lambda s: DEFAULT_EPOCH + timedelta(seconds=s))

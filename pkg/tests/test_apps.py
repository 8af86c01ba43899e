import csv
import io
from datetime import timedelta
from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from semstream import hl7v2, simgen
from semstream.apps import (
    ConditionEvent,
    ConditionKind,
    DestinationUnwritable,
    DetectorBinding,
    DetectorStage,
    Evidence,
    TextSink,
    detect_hypertension,
    detect_hypothermia,
    evidence_satisfies,
    export_omop,
)
from semstream.apps.omop import COLUMNS, load_concept_map
from semstream.bus import ContentType, MessageBus, Role, RoleViolation
from semstream.clock import DEFAULT_EPOCH
from semstream.encoder import encode_record
from semstream.query import ResultSet
from semstream.rdf import Iri, Literal
from semstream.rdf.terms import Datatype
from semstream.records import Coding, ObservationRecord
from semstream.store import TripleStore

T0 = DEFAULT_EPOCH


def patient(pid):
    return Iri(f"urn:fhir:Patient/{pid}")


def num(v):
    return Literal(str(v), Datatype.DECIMAL)


def bp_results(rows):
    return ResultSet("hypertension", (T0, T0 + timedelta(seconds=1)), ("patient", "value"),
                     tuple((patient(p), num(v)) for p, v in rows))


def vitals_results(rows):
    return ResultSet("hypothermia", (T0, T0 + timedelta(seconds=1)), ("patient", "temperature", "systolic", "pulse"),
                     tuple((patient(p), num(t), num(s), num(h)) for p, t, s, h in rows))


# --- detectors ---------------------------------------------------------------

def test_hypertension_groups_by_patient():
    events = detect_hypertension(bp_results([("p1", 190), ("p1", 185), ("p2", 118)]), 140)
    assert len(events) == 1
    (event,) = events
    assert event.patient_id == "p1" and event.condition is ConditionKind.HYPERTENSION
    assert [e.value for e in event.evidence] == [190, 185]
    assert event.detected_at == T0 + timedelta(seconds=1)


def test_hypertension_boundary_is_strict():
    assert detect_hypertension(bp_results([("p1", 120)]), 120) == []
    assert len(detect_hypertension(bp_results([("p1", "120.1")]), 120)) == 1


def test_empty_results_no_events():
    assert detect_hypertension(bp_results([])) == []
    assert detect_hypothermia(vitals_results([])) == []


def test_hypothermia_all_three_conjuncts():
    (event,) = detect_hypothermia(vitals_results([("p1", "34.0", 85, 120)]))
    assert len(event.evidence) == 3
    assert {e.code: e.value for e in event.evidence} == {"8310-5": Decimal("34.0"), "8480-6": 85, "8867-4": 120}
    assert detect_hypothermia(vitals_results([("p1", "34.0", 110, 120)])) == []


_values = st.integers(0, 250)


@given(st.lists(st.tuples(st.sampled_from(["a", "b", "c"]), _values), max_size=12), st.integers(100, 200))
def test_hypertension_matches_predicate_oracle(rows, threshold):
    events = detect_hypertension(bp_results(rows), threshold)
    expected = {}
    for p, v in rows:
        if v > threshold:
            expected.setdefault(p, []).append(v)
    assert {e.patient_id: sorted(x.value for x in e.evidence) for e in events} == \
        {p: sorted(vs) for p, vs in expected.items()}
    assert all(x.value > threshold for e in events for x in e.evidence)


@given(st.lists(st.tuples(st.sampled_from(["a", "b"]), st.integers(300, 380).map(lambda t: Decimal(t).scaleb(-1)),
                          st.integers(60, 120), st.integers(60, 140)), max_size=8))
def test_hypothermia_soundness(rows):
    events = detect_hypothermia(vitals_results(rows))
    flagged = {p for p, t, s, h in rows if t < 35 and s < 90 and h > 100}
    assert {e.patient_id for e in events} == flagged
    assert all(evidence_satisfies(e) for e in events)


def test_normal_samples_never_trigger():
    patients = [simgen.generate_patient(11, i) for i in range(10)]
    samples = [simgen.generate_vitals(11, p.id, simgen.Condition.NORMAL, k) for k in range(100) for p in patients]
    bp = bp_results([(f"p{i}", s.systolic_bp) for i, s in enumerate(samples)])
    vit = vitals_results([(f"p{i}", s.body_temp, s.systolic_bp, s.heart_rate) for i, s in enumerate(samples)])
    assert detect_hypertension(bp) == [] and detect_hypothermia(vit) == []


def test_event_json_round_trip():
    event = ConditionEvent(ConditionKind.HYPERTENSION, "p1", (Evidence("8480-6", Decimal("150"), "mm[Hg]"),), T0)
    assert ConditionEvent.from_json(event.to_json()) == event
    with pytest.raises(ValueError):
        ConditionEvent(ConditionKind.HYPERTENSION, "p1", (), T0)


def test_detector_stage_writes_jsonl(tmp_path):
    log = tmp_path / "events.jsonl"
    with MessageBus() as bus:
        stage = DetectorStage(bus, [DetectorBinding(ConditionKind.HYPERTENSION, "hypertension")], log)
        stage.start({"hypertension": "STAGE.RESULTS.HYPERTENSION"})
        ep = bus.endpoint(Role.QUERY)
        ep.publish("STAGE.RESULTS.HYPERTENSION", bp_results([("p1", 190)]).to_json(), ContentType.RESULT_SET)
        ep.publish("STAGE.RESULTS.HYPERTENSION", b"{broken", ContentType.RESULT_SET)
        bus.drain()
        with pytest.raises(RoleViolation):
            bus.publish("STAGE.EVENTS", b"x", ContentType.DOMAIN, role=Role.APPLICATION)
    lines = log.read_text().splitlines()
    assert [ConditionEvent.from_json(l).patient_id for l in lines] == ["p1"]
    assert stage.counters() == {"consumed": 2, "handled": 1, "dead_letters": 1, "retained": 0, "events": 1}


def test_detector_stage_unknown_query():
    with MessageBus() as bus:
        stage = DetectorStage(bus, [DetectorBinding(ConditionKind.HYPOTHERMIA, "nope")])
        with pytest.raises(ValueError):
            stage.start({})


# --- OMOP --------------------------------------------------------------------

def oru_records(text):
    return hl7v2.extract_observations(hl7v2.parse_message(text))


def small_store(oru_text):
    """2 patients, 2 encounters, 6 observations; the sample ORU patient also arrives twice."""
    fig_patient, (glucose,) = oru_records(oru_text)
    other = simgen.generate_patient(1, 0)
    sample = simgen.generate_vitals(1, other.id, simgen.Condition.NORMAL, 1, T0)
    _, vitals = hl7v2.extract_observations(hl7v2.parse_message(
        simgen.render_observation_hl7(sample, other, "C1")))
    extra = ObservationRecord("F-2", fig_patient.id, Coding("8480-6"), Decimal(128), "mm[Hg]", T0)
    records = [fig_patient, other,
               simgen.generate_encounter(1, fig_patient, T0), simgen.generate_encounter(1, other, T0),
               glucose, extra, *vitals, fig_patient]
    store = TripleStore()
    for i, rec in enumerate(records):
        store.insert_graph(encode_record(rec, T0 + timedelta(seconds=i)))
    return store


def read_csv(export, table):
    return list(csv.DictReader(io.StringIO(export.to_csv(table))))


def test_omop_counts(oru_text):
    export = export_omop(small_store(oru_text))
    assert export.counts() == {"PERSON": 2, "VISIT_OCCURRENCE": 2, "MEASUREMENT": 6}
    assert export.orphans == 0


def test_oru_sample_glucose_measurement(oru_text):
    export = export_omop(small_store(oru_text))
    rows = [r for r in read_csv(export, "MEASUREMENT") if r["measurement_source_value"] == "1554-5"]
    assert len(rows) == 1
    assert Decimal(rows[0]["value_as_number"]) == 182
    assert rows[0]["unit_source_value"] == "mg/dl"
    person = next(r for r in read_csv(export, "PERSON") if r["person_id"] == rows[0]["person_id"])
    assert person["person_source_value"] == "555-44-4444"
    assert (person["year_of_birth"], person["month_of_birth"], person["day_of_birth"]) == ("1962", "3", "20")


def test_referential_integrity_and_unique_keys(oru_text):
    export = export_omop(small_store(oru_text))
    persons = {r["person_id"] for r in read_csv(export, "PERSON")}
    for table, key in (("PERSON", "person_id"), ("VISIT_OCCURRENCE", "visit_occurrence_id"),
                       ("MEASUREMENT", "measurement_id")):
        rows = read_csv(export, table)
        assert len({r[key] for r in rows}) == len(rows)
        if table != "PERSON":
            assert {r["person_id"] for r in rows} <= persons


def test_vital_concepts_mapped(oru_text):
    export = export_omop(small_store(oru_text))
    concepts = load_concept_map()
    for r in read_csv(export, "MEASUREMENT"):
        assert int(r["measurement_concept_id"]) == concepts[r["measurement_source_value"]]


def test_unmapped_code_gets_concept_zero():
    rec = simgen.generate_patient(2, 0)
    obs = ObservationRecord("X-1", rec.id, Coding("9999-9"), Decimal(1), "x", T0)
    export = export_omop([encode_record(rec, T0), encode_record(obs, T0)])
    (row,) = read_csv(export, "MEASUREMENT")
    assert row["measurement_concept_id"] == "0" and export.unmapped == 1


def test_orphans_skipped():
    obs = ObservationRecord("X-1", "nobody", Coding("8480-6"), Decimal(1), "mm[Hg]", T0)
    export = export_omop([encode_record(obs, T0)])
    assert export.counts()["MEASUREMENT"] == 0 and export.orphans == 1


def test_empty_export_headers_only(tmp_path):
    paths = export_omop(TripleStore()).write(tmp_path)
    assert sorted(p.name for p in paths) == ["measurement.csv", "person.csv", "visit_occurrence.csv"]
    for p in paths:
        text = p.read_bytes().decode("utf-8")
        assert text.count("\r\n") == 1 and text.endswith("\r\n")
        assert text.strip().split(",") == list(COLUMNS[p.stem.upper()])


def test_export_is_deterministic(oru_text):
    a = export_omop(small_store(oru_text))
    b = export_omop(small_store(oru_text))
    assert all(a.to_csv(t) == b.to_csv(t) for t in COLUMNS)


# --- sinks -------------------------------------------------------------------

def publish_five(bus, topics=("INPUT.PATIENT.PIPE",)):
    ep = bus.endpoint(Role.INPUT)
    sent = []
    for i in range(5):
        topic = topics[i % len(topics)]
        sent.append(ep.publish(topic, f"msg {i}\nline two", ContentType.PIPE))
    return sent


def test_five_messages_five_lines(tmp_path):
    path = tmp_path / "out.txt"
    with MessageBus() as bus:
        sink = TextSink(bus, "INPUT.PATIENT.PIPE", path)
        publish_five(bus)
        bus.drain()
        sink.close()
    lines = path.read_text().splitlines()
    assert len(lines) == 5
    assert [l.split("\t")[2] for l in lines] == [f"msg {i} line two" for i in range(5)]


def test_console_matches_file(tmp_path, capsys):
    path = tmp_path / "out.txt"
    with MessageBus() as bus:
        file_sink = TextSink(bus, "INPUT.PATIENT.PIPE", path)
        console_sink = TextSink(bus, "INPUT.PATIENT.PIPE", "-")
        publish_five(bus)
        bus.drain()
        file_sink.close()
        console_sink.close()
    assert capsys.readouterr().out == path.read_text()


def test_interleaved_topics_keep_arrival_order():
    out = io.StringIO()
    topics = ("INPUT.PATIENT.PIPE", "INPUT.ENCOUNTER.PIPE")
    with MessageBus() as bus:
        sink = TextSink(bus, "INPUT.*.PIPE", stream=out)
        sent = publish_five(bus, topics)
        bus.drain()
        sink.close()
    tagged = [line.split("\t")[1] for line in out.getvalue().splitlines()]
    assert tagged == [m.topic for m in sorted(sent, key=lambda m: m.sequence)]


def test_unwritable_destination(tmp_path):
    with MessageBus() as bus:
        with pytest.raises(DestinationUnwritable):
            TextSink(bus, "STAGE.RDF", tmp_path / "missing" / "out.txt")

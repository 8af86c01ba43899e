import json
from datetime import date, datetime, timedelta, timezone
from decimal import Decimal

import pytest
from hypothesis import given, settings

from semstream import fhir, pipe
from semstream.fhir import MessageEnvelope, parse_bundle_json, serialize_bundle_json, serialize_encounter_json
from semstream.records import EncounterRecord, ObservationRecord, Coding, PatientRecord

from strategies import encounter_records, observation_records, patient_records

ENV = MessageEnvelope("C-1", "encounter-start", "SRC", "urn:src", datetime(2024, 1, 1, tzinfo=timezone.utc))


def test_bundle_sample_envelope(bundle_text):
    parsed = parse_bundle_json(bundle_text)
    env = parsed.envelope
    assert env.control_id == "CNTRL-3456"
    assert env.event_code == "observation-provide"
    assert (env.source_name, env.source_endpoint) == ("GHH LAB", "urn:GHH-LAB")
    assert (env.destination_name, env.destination_endpoint) == ("GHH OE", "urn:GHH-OE")
    assert env.sent_at.isoformat() == "2002-02-15T09:30:00-04:00"
    assert env.data_reference == "DiagnosticReport/1045813"
    assert parsed.records == []


def test_encounter_round_trip_two_hour_imp():
    start = datetime(2024, 3, 1, 8, 0, tzinfo=timezone.utc)
    rec = EncounterRecord("E1", "P1", "IMP", start, "finished", start + timedelta(hours=2))
    env, records = parse_bundle_json(serialize_encounter_json(rec, ENV))
    assert records == [rec]
    assert env == ENV


def test_open_encounter_omits_end():
    rec = EncounterRecord("E1", "P1", "AMB", datetime(2024, 3, 1, tzinfo=timezone.utc), "in-progress")
    doc = json.loads(serialize_encounter_json(rec, ENV))
    period = doc["entry"][1]["resource"]["period"]
    assert "end" not in period
    assert "null" not in serialize_encounter_json(rec, ENV)


@given(encounter_records())
@settings(max_examples=200)
def test_encounter_round_trip_property(rec):
    _, records = parse_bundle_json(serialize_encounter_json(rec, ENV))
    assert records == [rec]


@given(patient_records)
@settings(max_examples=100)
def test_patient_round_trip(rec):
    _, records = parse_bundle_json(serialize_bundle_json(ENV, [rec]))
    assert records == [rec]


@given(observation_records)
@settings(max_examples=100)
def test_observation_round_trip(rec):
    _, records = parse_bundle_json(serialize_bundle_json(ENV, [rec]))
    assert records == [rec]


def test_decimal_values_are_json_numbers():
    rec = ObservationRecord("O1", "P1", Coding("8310-5"), Decimal("36.15"), "Cel",
                            datetime(2024, 1, 1, tzinfo=timezone.utc))
    text = serialize_bundle_json(ENV, [rec])
    assert '"value": 36.15' in text
    assert parse_bundle_json(text).records[0].value == Decimal("36.15")


def test_unknown_entries_skipped():
    doc = json.loads(serialize_bundle_json(ENV, []))
    doc["entry"].append({"resource": {"resourceType": "Medication", "id": "m"}})
    parsed = parse_bundle_json(json.dumps(doc))
    assert parsed.records == [] and parsed.skipped == 1


@pytest.mark.parametrize("text, err", [
    ('{"resourceType": "Patient"}', fhir.NotABundle),
    ("[1, 2]", fhir.NotABundle),
    ("not json", fhir.FhirError),
    ('{"resourceType": "Bundle", "type": "message", "entry": []}', fhir.MissingMessageHeader),
])
def test_bundle_errors(text, err):
    with pytest.raises(err):
        parse_bundle_json(text)


def test_malformed_resource_names_type():
    doc = json.loads(serialize_bundle_json(ENV, []))
    doc["entry"].append({"resource": {"resourceType": "Encounter", "id": "e"}})
    with pytest.raises(fhir.MalformedResource) as exc:
        parse_bundle_json(json.dumps(doc))
    assert exc.value.resource_type == "Encounter"


# pipe-delimited patients share the PID-derived layout

FIG1_LINE = "555-44-4444|EVERYWOMAN|EVE|E|19620320|F|153 FERNWOOD DR.|STATESVILLE|OH|35292|(206)3345232"


def test_pipe_oru_sample_line():
    rec = pipe.parse_patient_line(FIG1_LINE)
    assert rec.id == "555-44-4444" and rec.dob == date(1962, 3, 20)
    assert pipe.format_patient_line(rec) == FIG1_LINE


def test_pipe_empty_middle():
    rec = PatientRecord("1", "DOE", date(1980, 1, 1), "M", given="JOHN")
    line = pipe.format_patient_line(rec)
    assert "JOHN||19800101" in line
    assert len(line.split("|")) == 11
    assert pipe.parse_patient_line(line) == rec


@pytest.mark.parametrize("line", ["a|b", FIG1_LINE + "|extra", FIG1_LINE.replace("19620320", "1962XX20")])
def test_pipe_errors(line):
    with pytest.raises(pipe.PipeFormatError):
        pipe.parse_patient_line(line)

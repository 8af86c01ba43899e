from datetime import date, datetime, timezone
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semstream import hl7v2
from semstream.hl7v2 import DelimiterSet, MissingSegment, parse_message, serialize_message
from semstream.records import AbnormalFlag, Sex

from strategies import hl7_messages


def tree(msg):
    return [(s.id, s.fields) for s in msg.segments]


def test_oru_sample_structure(oru_text):
    msg = parse_message(oru_text)
    assert [s.id for s in msg.segments] == ["MSH", "PID", "OBR", "OBX"]
    pid = msg.segment("PID")
    assert pid.value(3) == "555-44-4444"
    assert pid.components(5) == ["EVERYWOMAN", "EVE", "E", "", "", "", "L"]
    assert pid.value(7) == "19620320"


def test_oru_sample_obx(oru_text):
    obx = parse_message(oru_text).segment("OBX")
    assert obx.component(3, 1) == "1554-5"
    assert obx.component(3, 2) == "GLUCOSE"
    assert obx.component(5, 2) == "182"
    assert obx.value(6) == "mg/dl"
    assert obx.value(7) == "70_105"
    assert obx.value(8) == "H"


def test_msh_indexing(oru_text):
    msh = parse_message(oru_text).msh
    assert msh.value(1) == "|"
    assert msh.value(2) == "^~\\&"
    assert msh.value(3) == "GHH LAB"
    assert msh.components(9) == ["ORU", "R01"]
    assert msh.value(10) == "CNTRL-3456"


def test_minimal_message():
    msg = parse_message("MSH|^~\\&|A|B|C|D|20230101||ADT^A01|X|P|2.4")
    assert len(msg.segments) == 1
    assert msg.message_type == ["ADT", "A01"]


def test_oru_sample_round_trip(oru_text):
    msg = parse_message(oru_text)
    again = parse_message(serialize_message(msg))
    assert tree(again) == tree(msg)


def test_segment_terminators_are_lenient(oru_text):
    lines = [l for l in oru_text.replace("\r", "\n").split("\n") if l]
    trees = {tuple(map(str, tree(parse_message(sep.join(lines))))) for sep in ("\r", "\n", "\r\n")}
    assert len(trees) == 1
    assert "\n" not in serialize_message(parse_message("\n".join(lines)))


def test_pipe_in_value_is_escaped():
    msg = parse_message("MSH|^~\\&|A|B|C|D|20230101||ADT^A01|X|P|2.4\rZZZ|x")
    msg.segment("ZZZ").set_field(1, hl7v2.build_field("a|b"))
    wire = serialize_message(msg)
    assert "ZZZ|a\\F\\b" in wire
    assert parse_message(wire).segment("ZZZ").value(1) == "a|b"


def test_custom_delimiters():
    msg = parse_message("MSH#$*!@#A#B#C#D#20230101##ORU$R01#X#P#2.4\rPID###123$456")
    assert msg.delimiters == DelimiterSet("#", "$", "*", "!", "@")
    assert msg.segment("PID").components(3) == ["123", "456"]


def test_unknown_segments_preserved():
    text = "MSH|^~\\&|A|B|C|D|20230101||ORU^R01|X|P|2.4\rZXY|1|two^parts\r"
    assert serialize_message(parse_message(text)) == text


@pytest.mark.parametrize("bad, err", [
    ("", hl7v2.EmptyInput),
    ("   ", hl7v2.EmptyInput),
    ("PID|1", hl7v2.NotHl7),
    ("MSH|^~", hl7v2.MalformedMsh),
    ("MSH|^~\\&|A|B", hl7v2.MalformedMsh),
])
def test_parse_errors(bad, err):
    with pytest.raises(err):
        parse_message(bad)


@given(hl7_messages())
@settings(max_examples=500)
def test_fuzz_round_trip(msg):
    wire = serialize_message(msg)
    parsed = parse_message(wire)
    assert tree(parsed) == tree(msg)
    assert serialize_message(parsed) == wire


@given(st.text(max_size=40))
def test_escape_totality(value):
    d = DelimiterSet()
    assert d.unescape_text(d.escape_text(value)) == value


def test_hex_escapes_decode():
    assert DelimiterSet().unescape_text("a\\X0D\\b\\X0A\\c") == "a\rb\nc"


def test_unknown_escape_passes_through():
    assert DelimiterSet().unescape_text("\\Q\\") == "\\Q\\"


@given(hl7_messages())
@settings(max_examples=100)
def test_index_stability(msg):
    parsed = parse_message(serialize_message(msg))
    for before, after in zip(msg.segments, parsed.segments):
        for i in range(1, len(before.fields) + 1):
            if before.is_populated(i):
                assert after.field(i) == before.field(i)


def test_extract_oru_sample(oru_text):
    patient, observations = hl7v2.extract_observations(parse_message(oru_text))
    assert patient.id == "555-44-4444"
    assert (patient.family, patient.given, patient.middle) == ("EVERYWOMAN", "EVE", "E")
    assert patient.dob == date(1962, 3, 20)
    assert patient.sex is Sex.F
    assert (patient.city, patient.state, patient.zip) == ("STATESVILLE", "OH", "35292")
    assert len(observations) == 1
    obs = observations[0]
    assert obs.code.code == "1554-5"
    assert obs.code.display == "GLUCOSE"
    assert obs.value == Decimal("182")
    assert obs.units == "mg/dl"
    assert obs.reference_range == "70_105"
    assert obs.abnormal_flag is AbnormalFlag.H
    assert obs.patient_id == patient.id
    # no OBX-14, so the OBR-7 collection time applies
    assert obs.effective_at == datetime(2002, 2, 15, 7, 30, tzinfo=timezone.utc)


def test_missing_obx():
    text = "MSH|^~\\&|A|B|C|D|20230101||ORU^R01|X|P|2.4\rPID|||1||DOE^J||19800101|M"
    with pytest.raises(MissingSegment) as exc:
        hl7v2.extract_observations(parse_message(text))
    assert exc.value.segment_id == "OBX"


def test_non_numeric_nm_value_rejected():
    text = ("MSH|^~\\&|A|B|C|D|20230101||ORU^R01|X|P|2.4\rPID|||1||DOE^J||19800101|M\r"
            "OBX|1|NM|8480-6^SBP||high|mm[Hg]")
    with pytest.raises(hl7v2.NonNumericValue):
        hl7v2.extract_observations(parse_message(text))


def test_text_obx_skipped():
    text = ("MSH|^~\\&|A|B|C|D|20230101||ORU^R01|X|P|2.4\rPID|||1||DOE^J||19800101|M\r"
            "OBX|1|TX|NOTE^Note||free text\rOBX|2|NM|8480-6^SBP||120|mm[Hg]")
    _, obs = hl7v2.extract_observations(parse_message(text))
    assert [o.id for o in obs] == ["X-2"]


def test_timestamp_formats():
    assert hl7v2.parse_hl7_timestamp("200202150930") == datetime(2002, 2, 15, 9, 30, tzinfo=timezone.utc)
    ts = hl7v2.parse_hl7_timestamp("20020215093000-0400")
    assert ts.utcoffset().total_seconds() == -4 * 3600
    assert hl7v2.format_hl7_timestamp(datetime(2024, 1, 1, 0, 0, 1, tzinfo=timezone.utc)) == "20240101000001"

"""HL7 version 2 wire format: parse, serialize, and extract domain records.

The parse tree is lossless. A message is a list of segments; each segment
holds fields, each field holds repetitions, each repetition holds
components, each component holds subcomponent strings. Every level is a
non-empty list, so an empty field is ``[[[""]]]``.

Field indexing is 1-based, as in the standard. For MSH, field 1 is the
field separator and field 2 the raw encoding characters.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from decimal import Decimal, InvalidOperation
from typing import List, Optional, Tuple

from .records import (
    AbnormalFlag,
    Coding,
    LOINC_SYSTEM,
    ObservationRecord,
    PatientRecord,
    Sex,
)

Component = List[str]
Repetition = List[Component]
Field = List[Repetition]

SEGMENT_ID = re.compile(r"[A-Z0-9]{3}\Z")


class Hl7Error(ValueError):
    pass


class EmptyInput(Hl7Error):
    pass


class NotHl7(Hl7Error):
    pass


class MalformedMsh(Hl7Error):
    pass


class MissingSegment(Hl7Error):
    def __init__(self, segment_id: str):
        super().__init__(f"message has no {segment_id} segment")
        self.segment_id = segment_id


class NonNumericValue(Hl7Error):
    pass


@dataclass(frozen=True)
class DelimiterSet:
    field: str = "|"
    component: str = "^"
    repetition: str = "~"
    escape: str = "\\"
    subcomponent: str = "&"

    def __post_init__(self):
        chars = (self.field, self.component, self.repetition, self.escape, self.subcomponent)
        if any(len(c) != 1 for c in chars) or len(set(chars)) != 5:
            raise MalformedMsh(f"delimiters must be five distinct characters, got {chars!r}")
        if any(c in "\r\n" for c in chars):
            raise MalformedMsh("segment terminators cannot be delimiters")

    @property
    def encoding_characters(self) -> str:
        return self.component + self.repetition + self.escape + self.subcomponent

    def escape_text(self, value: str) -> str:
        e = self.escape
        table = {
            self.escape: f"{e}E{e}",
            self.field: f"{e}F{e}",
            self.component: f"{e}S{e}",
            self.subcomponent: f"{e}T{e}",
            self.repetition: f"{e}R{e}",
            "\r": f"{e}X0D{e}",
            "\n": f"{e}X0A{e}",
        }
        return "".join(table.get(ch, ch) for ch in value)

    def unescape_text(self, value: str) -> str:
        e = self.escape
        if e not in value:
            return value
        simple = {
            "E": self.escape,
            "F": self.field,
            "S": self.component,
            "T": self.subcomponent,
            "R": self.repetition,
        }
        out = []
        i = 0
        while i < len(value):
            ch = value[i]
            if ch == e:
                end = value.find(e, i + 1)
                if end != -1:
                    code = value[i + 1:end]
                    if code in simple:
                        out.append(simple[code])
                        i = end + 1
                        continue
                    decoded = _decode_hex(code)
                    if decoded is not None:
                        out.append(decoded)
                        i = end + 1
                        continue
            # Unknown or unterminated sequences pass through literally.
            out.append(ch)
            i += 1
        return "".join(out)


def _decode_hex(code: str) -> Optional[str]:
    if len(code) < 3 or code[0] != "X" or (len(code) - 1) % 2:
        return None
    try:
        raw = bytes.fromhex(code[1:])
    except ValueError:
        return None
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        return None


def _empty_field() -> Field:
    return [[[""]]]


@dataclass
class Segment:
    id: str
    fields: List[Field] = field(default_factory=list)

    def __post_init__(self):
        if not SEGMENT_ID.match(self.id):
            raise Hl7Error(f"bad segment id {self.id!r}")

    def field(self, index: int) -> Field:
        """Field ``index`` (1-based); absent fields read as empty."""
        if index < 1:
            raise IndexError("HL7 field indexes start at 1")
        if index > len(self.fields):
            return _empty_field()
        return self.fields[index - 1]

    def component(self, index: int, comp: int = 1, rep: int = 1, sub: int = 1) -> str:
        fld = self.field(index)
        try:
            return fld[rep - 1][comp - 1][sub - 1]
        except IndexError:
            return ""

    def components(self, index: int, rep: int = 1) -> List[str]:
        """First subcomponent of every component of one repetition."""
        fld = self.field(index)
        if rep > len(fld):
            return []
        return [c[0] for c in fld[rep - 1]]

    def value(self, index: int) -> str:
        return self.component(index, 1)

    def is_populated(self, index: int) -> bool:
        return any(s for rep in self.field(index) for comp in rep for s in comp)

    def set_field(self, index: int, value: Field) -> None:
        while len(self.fields) < index:
            self.fields.append(_empty_field())
        self.fields[index - 1] = value


@dataclass
class Hl7Message:
    segments: List[Segment]
    delimiters: DelimiterSet = field(default_factory=DelimiterSet)

    def __post_init__(self):
        if not self.segments:
            raise Hl7Error("message has no segments")
        if self.segments[0].id != "MSH":
            raise NotHl7("first segment must be MSH")

    @property
    def msh(self) -> Segment:
        return self.segments[0]

    def segment(self, segment_id: str) -> Optional[Segment]:
        for seg in self.segments:
            if seg.id == segment_id:
                return seg
        return None

    def all(self, segment_id: str) -> List[Segment]:
        return [s for s in self.segments if s.id == segment_id]

    @property
    def message_type(self) -> List[str]:
        return self.msh.components(9)

    @property
    def control_id(self) -> str:
        return self.msh.value(10)


def _split_field(raw: str, d: DelimiterSet) -> Field:
    return [
        [[d.unescape_text(sub) for sub in comp.split(d.subcomponent)] for comp in rep.split(d.component)]
        for rep in raw.split(d.repetition)
    ]


def _join_field(fld: Field, d: DelimiterSet) -> str:
    return d.repetition.join(
        d.component.join(d.subcomponent.join(d.escape_text(s) for s in comp) for comp in rep)
        for rep in fld
    )


def _split_segments(text: str) -> List[str]:
    lines = re.split(r"\r\n|\r|\n", text)
    return [line for line in lines if line.strip()]


def parse_message(text: str) -> Hl7Message:
    if not text or not text.strip():
        raise EmptyInput("empty HL7 payload")
    lines = _split_segments(text.lstrip())
    head = lines[0]
    if not head.startswith("MSH"):
        raise NotHl7("message does not begin with MSH")
    if len(head) < 8:
        raise MalformedMsh("MSH too short to carry delimiters")
    fs = head[3]
    encoding = head[4:8]
    delims = DelimiterSet(fs, *encoding)
    if len(head) > 8 and head[8] != fs:
        raise MalformedMsh("MSH-2 must be exactly four encoding characters")

    msh_parts = head.split(fs)
    # msh_parts[0] == "MSH", msh_parts[1] == encoding chars; MSH-1 is fs itself
    msh_fields: List[Field] = [[[[fs]]], [[[encoding]]]]
    msh_fields.extend(_split_field(raw, delims) for raw in msh_parts[2:])
    if len(msh_fields) < 9:
        raise MalformedMsh(f"MSH has {len(msh_fields)} fields, need at least 9")
    segments = [Segment("MSH", msh_fields)]

    for line in lines[1:]:
        parts = line.split(fs)
        seg_id = parts[0]
        if not SEGMENT_ID.match(seg_id):
            raise Hl7Error(f"bad segment id {seg_id!r}")
        segments.append(Segment(seg_id, [_split_field(raw, delims) for raw in parts[1:]]))
    return Hl7Message(segments, delims)


def serialize_message(msg: Hl7Message) -> str:
    d = msg.delimiters
    out = []
    for seg in msg.segments:
        if seg.id == "MSH":
            rest = [_join_field(f, d) for f in seg.fields[2:]]
            out.append(d.field.join(["MSH" + d.field + d.encoding_characters] + rest))
        else:
            out.append(d.field.join([seg.id] + [_join_field(f, d) for f in seg.fields]))
    return "\r".join(out) + "\r"


def build_field(*components: str) -> Field:
    """One repetition with plain (no subcomponent) components."""
    return [[[c] for c in components]] if components else _empty_field()


# --- extraction into domain records -----------------------------------------

_SEX_CODES = {"F": Sex.F, "M": Sex.M, "O": Sex.O, "U": Sex.U, "A": Sex.O, "N": Sex.U}


def parse_hl7_date(text: str) -> date:
    if len(text) < 8 or not text[:8].isdigit():
        raise Hl7Error(f"bad HL7 date {text!r}")
    return date(int(text[:4]), int(text[4:6]), int(text[6:8]))


def parse_hl7_timestamp(text: str) -> datetime:
    """``YYYYMMDD[HH[MM[SS[.S+]]]][+/-ZZZZ]``; no offset means UTC."""
    m = re.fullmatch(r"(\d{8})(\d{2})?(\d{2})?(\d{2})?(?:\.(\d{1,4}))?([+-]\d{4})?", text)
    if not m:
        raise Hl7Error(f"bad HL7 timestamp {text!r}")
    day = parse_hl7_date(m.group(1))
    hh, mm, ss = (int(g) if g else 0 for g in m.group(2, 3, 4))
    micro = int((m.group(5) or "0").ljust(6, "0")[:6])
    micro -= micro % 1000
    tz = timezone.utc
    if m.group(6):
        sign = -1 if m.group(6)[0] == "-" else 1
        off = m.group(6)[1:]
        tz = timezone(sign * timedelta(hours=int(off[:2]), minutes=int(off[2:])))
    return datetime(day.year, day.month, day.day, hh, mm, ss, micro, tzinfo=tz)


def format_hl7_timestamp(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    text = ts.strftime("%Y%m%d%H%M%S")
    if ts.microsecond:
        text += "." + f"{ts.microsecond // 1000:03d}"
    return text


def _opt(text: str) -> Optional[str]:
    return text or None


def extract_patient(msg: Hl7Message) -> PatientRecord:
    pid = msg.segment("PID")
    if pid is None:
        raise MissingSegment("PID")
    patient_id = pid.value(3) or pid.value(2)
    return PatientRecord(
        id=patient_id,
        family=pid.component(5, 1),
        given=pid.component(5, 2),
        middle=_opt(pid.component(5, 3)),
        dob=parse_hl7_date(pid.value(7)),
        sex=_SEX_CODES.get(pid.value(8), Sex.U),
        street=_opt(pid.component(11, 1)),
        city=_opt(pid.component(11, 3)),
        state=_opt(pid.component(11, 4)),
        zip=_opt(pid.component(11, 5)),
        phone=_opt(pid.component(13, 1)),
    )


def _numeric(text: str) -> Optional[Decimal]:
    try:
        value = Decimal(text.strip())
    except InvalidOperation:
        return None
    return value if value.is_finite() else None


def observation_value(obx: Segment) -> Optional[Decimal]:
    """OBX-5 as a number; ``^182`` (empty comparator) reads component 2."""
    first = obx.component(5, 1)
    second = obx.component(5, 2)
    if first == "" and second:
        return _numeric(second)
    if obx.value(2) == "SN" and first in ("<", ">", "<=", ">=", "=", "<>"):
        return _numeric(second)
    return _numeric(first)


def _provider_name(seg: Segment, index: int) -> Optional[str]:
    ident, family, given = (seg.component(index, c) for c in (1, 2, 3))
    if not family:
        return None
    if not ident and not given:
        return None
    return f"{family}, {given}" if given else family


def _performer(obr: Optional[Segment]) -> Optional[str]:
    """Performing provider: the last XCN-shaped OBR field after OBR-16, else OBR-16."""
    if obr is None:
        return None
    for index in range(len(obr.fields), 16, -1):
        name = _provider_name(obr, index)
        if name:
            return name
    return _provider_name(obr, 16)


def extract_observations(msg: Hl7Message) -> Tuple[PatientRecord, List[ObservationRecord]]:
    patient = extract_patient(msg)
    obxs = msg.all("OBX")
    if not obxs:
        raise MissingSegment("OBX")
    obr = msg.segment("OBR")
    performer = _performer(obr)
    fallback_time = None
    if obr is not None and obr.value(7):
        fallback_time = obr.value(7)
    elif msg.msh.value(7):
        fallback_time = msg.msh.value(7)

    records = []
    for position, obx in enumerate(obxs, start=1):
        value = observation_value(obx)
        if value is None:
            if obx.value(2) in ("SN", "NM"):
                raise NonNumericValue(f"OBX-5 {obx.field(5)!r} is not numeric")
            # Non-numeric result types have no place in a quantity record.
            continue
        set_id = obx.value(1) or str(position)
        when = obx.value(14) or fallback_time
        if not when:
            raise Hl7Error("observation has no timestamp (OBX-14, OBR-7, MSH-7)")
        flag = obx.value(8)
        records.append(
            ObservationRecord(
                id=f"{msg.control_id}-{set_id}",
                patient_id=patient.id,
                code=Coding(code=obx.component(3, 1), display=obx.component(3, 2), system=LOINC_SYSTEM),
                value=value,
                units=obx.component(6, 1),
                effective_at=parse_hl7_timestamp(when),
                reference_range=_opt(obx.value(7)),
                abnormal_flag=AbnormalFlag(flag) if flag in ("H", "L", "N") else None,
                performer=performer,
            )
        )
    return patient, records

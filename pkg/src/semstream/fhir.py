"""FHIR JSON message bundles for Patient, Encounter and Observation.

Only the attributes the engine carries are read or written. A message
bundle is ``{"resourceType": "Bundle", "type": "message", "entry": [...]}``
whose first entry is a MessageHeader.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import date, datetime
from decimal import Decimal
from typing import Any, Iterable, List, Optional, Tuple

from .clock import format_timestamp, parse_timestamp
from .records import (
    AbnormalFlag,
    Coding,
    DomainRecord,
    EncounterClass,
    EncounterRecord,
    EncounterStatus,
    LOINC_SYSTEM,
    ObservationRecord,
    PatientRecord,
    RecordError,
    Sex,
)

log = logging.getLogger(__name__)

ACT_CODE_SYSTEM = "http://terminology.hl7.org/CodeSystem/v3-ActCode"
MESSAGE_EVENT_SYSTEM = "http://hl7.org/fhir/message-type"
INTERPRETATION_SYSTEM = "http://terminology.hl7.org/CodeSystem/v3-ObservationInterpretation"

_GENDER = {Sex.F: "female", Sex.M: "male", Sex.O: "other", Sex.U: "unknown"}
_SEX = {v: k for k, v in _GENDER.items()}


class FhirError(ValueError):
    pass


class NotABundle(FhirError):
    pass


class MissingMessageHeader(FhirError):
    pass


class MalformedResource(FhirError):
    def __init__(self, resource_type: str, reason: str):
        super().__init__(f"{resource_type}: {reason}")
        self.resource_type = resource_type
        self.reason = reason


@dataclass(frozen=True)
class MessageEnvelope:
    control_id: str
    event_code: str
    source_name: str
    source_endpoint: str
    sent_at: datetime
    destination_name: str = ""
    destination_endpoint: str = ""
    data_reference: str = ""

    def __post_init__(self):
        if not self.control_id:
            raise FhirError("envelope control_id must be non-empty")


@dataclass
class ParsedBundle:
    envelope: MessageEnvelope
    records: List[DomainRecord] = field(default_factory=list)
    skipped: int = 0

    def __iter__(self):
        # allows ``envelope, records = parse_bundle_json(text)``
        return iter((self.envelope, self.records))


# --- JSON number handling ----------------------------------------------------

def _json_number(value: Decimal):
    if value == value.to_integral_value():
        return int(value)
    return float(value)


def _loads(text: str | bytes) -> Any:
    return json.loads(text, parse_float=Decimal, parse_int=Decimal)


# --- resources -> records ----------------------------------------------------

def _reference_id(ref: Optional[dict], resource_type: str) -> Optional[str]:
    if not ref:
        return None
    value = ref.get("reference", "")
    prefix = resource_type + "/"
    if not value.startswith(prefix):
        raise MalformedResource(resource_type, f"unexpected reference {value!r}")
    return value[len(prefix):]


def _patient_from_json(res: dict) -> PatientRecord:
    names = res.get("name") or [{}]
    name = names[0]
    given = list(name.get("given") or [])
    address = (res.get("address") or [{}])[0]
    lines = address.get("line") or [None]
    phone = None
    for telecom in res.get("telecom") or []:
        if telecom.get("system", "phone") == "phone":
            phone = telecom.get("value")
            break
    try:
        return PatientRecord(
            id=res["id"],
            family=name.get("family", ""),
            given=given[0] if given else "",
            middle=given[1] if len(given) > 1 else None,
            dob=date.fromisoformat(res["birthDate"]),
            sex=_SEX.get(res.get("gender", "unknown"), Sex.U),
            street=lines[0],
            city=address.get("city"),
            state=address.get("state"),
            zip=address.get("postalCode"),
            phone=phone,
        )
    except (KeyError, ValueError, RecordError) as exc:
        raise MalformedResource("Patient", str(exc)) from exc


def _encounter_from_json(res: dict) -> EncounterRecord:
    try:
        period = res.get("period") or {}
        cls = res.get("class") or {}
        end = period.get("end")
        return EncounterRecord(
            id=res["id"],
            patient_id=_reference_id(res.get("subject"), "Patient") or "",
            encounter_class=EncounterClass(cls.get("code")),
            start=parse_timestamp(period["start"]),
            end=parse_timestamp(end) if end else None,
            status=EncounterStatus(res["status"]),
        )
    except (KeyError, ValueError, RecordError) as exc:
        if isinstance(exc, MalformedResource):
            raise
        raise MalformedResource("Encounter", str(exc)) from exc


def _observation_from_json(res: dict) -> ObservationRecord:
    try:
        coding = res["code"]["coding"][0]
        quantity = res["valueQuantity"]
        ranges = res.get("referenceRange") or []
        interp = res.get("interpretation") or []
        flag = interp[0]["coding"][0]["code"] if interp else None
        performers = res.get("performer") or []
        return ObservationRecord(
            id=res["id"],
            patient_id=_reference_id(res.get("subject"), "Patient") or "",
            encounter_id=_reference_id(res.get("encounter"), "Encounter"),
            code=Coding(
                code=coding["code"],
                display=coding.get("display", ""),
                system=coding.get("system", LOINC_SYSTEM),
            ),
            value=Decimal(quantity["value"]),
            units=quantity.get("unit", ""),
            reference_range=ranges[0].get("text") if ranges else None,
            abnormal_flag=AbnormalFlag(flag) if flag else None,
            effective_at=parse_timestamp(res["effectiveDateTime"]),
            performer=performers[0].get("display") if performers else None,
        )
    except (KeyError, IndexError, TypeError, ValueError, RecordError) as exc:
        if isinstance(exc, MalformedResource):
            raise
        raise MalformedResource("Observation", str(exc)) from exc


_READERS = {
    "Patient": _patient_from_json,
    "Encounter": _encounter_from_json,
    "Observation": _observation_from_json,
}


def _envelope_from_json(res: dict) -> MessageEnvelope:
    try:
        event = res.get("eventCoding") or res.get("event") or {}
        source = res.get("source") or {}
        destinations = res.get("destination") or [{}]
        if isinstance(destinations, dict):
            destinations = [destinations]
        data = res.get("focus") or res.get("data") or [{}]
        if isinstance(data, dict):
            data = [data]
        return MessageEnvelope(
            control_id=res.get("id") or res.get("identifier", ""),
            event_code=event.get("code", ""),
            source_name=source.get("name", ""),
            source_endpoint=source.get("endpoint", ""),
            destination_name=destinations[0].get("name", ""),
            destination_endpoint=destinations[0].get("endpoint", ""),
            sent_at=parse_timestamp(res["timestamp"]),
            data_reference=data[0].get("reference", ""),
        )
    except (KeyError, ValueError) as exc:
        raise MalformedResource("MessageHeader", str(exc)) from exc


def parse_bundle_json(text: str | bytes) -> ParsedBundle:
    """Parse a FHIR message bundle into its envelope and domain records.

    Entries of resource types other than Patient, Encounter and Observation
    are skipped; ``ParsedBundle.skipped`` counts them.
    """
    try:
        doc = _loads(text)
    except json.JSONDecodeError as exc:
        raise NotABundle(f"not JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("resourceType") != "Bundle":
        raise NotABundle("document is not a FHIR Bundle")
    if doc.get("type") != "message":
        raise NotABundle(f"bundle type is {doc.get('type')!r}, expected 'message'")
    entries = doc.get("entry") or []
    resources = [e.get("resource") or {} for e in entries]
    if not resources or resources[0].get("resourceType") != "MessageHeader":
        raise MissingMessageHeader("first bundle entry must be a MessageHeader")

    parsed = ParsedBundle(_envelope_from_json(resources[0]))
    for res in resources[1:]:
        reader = _READERS.get(res.get("resourceType"))
        if reader is None:
            parsed.skipped += 1
            continue
        parsed.records.append(reader(res))
    if parsed.skipped:
        log.warning("skipped %d unsupported bundle entries", parsed.skipped)
    return parsed


# --- records -> resources ----------------------------------------------------

def _drop_empty(d: dict) -> dict:
    return {k: v for k, v in d.items() if v not in (None, "", [], {})}


def patient_to_json(rec: PatientRecord) -> dict:
    given = [rec.given] + ([rec.middle] if rec.middle else []) if rec.given or rec.middle else []
    address = _drop_empty({
        "line": [rec.street] if rec.street else None,
        "city": rec.city,
        "state": rec.state,
        "postalCode": rec.zip,
    })
    return _drop_empty({
        "resourceType": "Patient",
        "id": rec.id,
        "name": [_drop_empty({"family": rec.family, "given": given})],
        "gender": _GENDER[rec.sex],
        "birthDate": rec.dob.isoformat(),
        "address": [address] if address else None,
        "telecom": [{"system": "phone", "value": rec.phone}] if rec.phone else None,
    })


def encounter_to_json(rec: EncounterRecord) -> dict:
    period = {"start": format_timestamp(rec.start)}
    if rec.end is not None:
        period["end"] = format_timestamp(rec.end)
    return {
        "resourceType": "Encounter",
        "id": rec.id,
        "status": rec.status.value,
        "class": {"system": ACT_CODE_SYSTEM, "code": rec.encounter_class.value},
        "subject": {"reference": f"Patient/{rec.patient_id}"},
        "period": period,
    }


def observation_to_json(rec: ObservationRecord) -> dict:
    return _drop_empty({
        "resourceType": "Observation",
        "id": rec.id,
        "status": "final",
        "code": {"coding": [_drop_empty({
            "system": rec.code.system, "code": rec.code.code, "display": rec.code.display,
        })]},
        "subject": {"reference": f"Patient/{rec.patient_id}"},
        "encounter": {"reference": f"Encounter/{rec.encounter_id}"} if rec.encounter_id else None,
        "effectiveDateTime": format_timestamp(rec.effective_at),
        "valueQuantity": _drop_empty({"value": _json_number(rec.value), "unit": rec.units}),
        "referenceRange": [{"text": rec.reference_range}] if rec.reference_range else None,
        "interpretation": [{"coding": [{"system": INTERPRETATION_SYSTEM, "code": rec.abnormal_flag.value}]}]
        if rec.abnormal_flag else None,
        "performer": [{"display": rec.performer}] if rec.performer else None,
    })


_WRITERS = {
    PatientRecord: patient_to_json,
    EncounterRecord: encounter_to_json,
    ObservationRecord: observation_to_json,
}


def envelope_to_json(env: MessageEnvelope) -> dict:
    header = {
        "resourceType": "MessageHeader",
        "id": env.control_id,
        "timestamp": env.sent_at.isoformat(),
        "event": {"system": MESSAGE_EVENT_SYSTEM, "code": env.event_code},
        "source": _drop_empty({"name": env.source_name, "endpoint": env.source_endpoint}),
    }
    dest = _drop_empty({"name": env.destination_name, "endpoint": env.destination_endpoint})
    if dest:
        header["destination"] = [dest]
    if env.data_reference:
        header["data"] = [{"reference": env.data_reference}]
    return header


def serialize_bundle_json(envelope: MessageEnvelope, records: Iterable[DomainRecord],
                          bundle_id: Optional[str] = None) -> str:
    entries = [{"resource": envelope_to_json(envelope)}]
    for rec in records:
        entries.append({"resource": _WRITERS[type(rec)](rec)})
    doc = {"resourceType": "Bundle"}
    if bundle_id:
        doc["id"] = bundle_id
    doc.update({"type": "message", "entry": entries})
    return json.dumps(doc, indent=2, ensure_ascii=False)


def serialize_encounter_json(rec: EncounterRecord, envelope: MessageEnvelope) -> str:
    return serialize_bundle_json(envelope, [rec])


def parse_bundle_records(text: str | bytes) -> Tuple[MessageEnvelope, List[DomainRecord]]:
    parsed = parse_bundle_json(text)
    return parsed.envelope, parsed.records

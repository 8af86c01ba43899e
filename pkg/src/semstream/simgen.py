"""Seeded simulators for the three input feeds.

Every value is drawn from ``random.Random`` seeded with a string built from
the scenario seed and the thing being generated (patient index, vital-sign
sequence number), so any single line can be regenerated in isolation and the
whole feed is a pure function of :class:`ScenarioConfig`.
"""

from __future__ import annotations

import enum
import random
import time
from collections import Counter
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from decimal import Decimal
from fractions import Fraction
from itertools import groupby
from typing import Callable, Dict, Iterator, List, Optional, Tuple

from . import fhir, hl7v2, pipe
from .bus import ContentType, MessageBus, Role
from .clock import DEFAULT_EPOCH, WallClock, seconds
from .records import EncounterClass, EncounterRecord, EncounterStatus, PatientRecord, Sex

PATIENT_TOPIC = "INPUT.PATIENT.PIPE"
ENCOUNTER_TOPIC = "INPUT.ENCOUNTER.FHIRJSON"
OBSERVATION_TOPIC = "INPUT.OBSERVATION.HL7V2"

SOURCE_NAME = "SEMSTREAM SIM"
SOURCE_ENDPOINT = "urn:semstream:simulator"


class Condition(str, enum.Enum):
    NORMAL = "NORMAL"
    HYPERTENSION = "HYPERTENSION"
    HYPOTHERMIA = "HYPOTHERMIA"


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    patient_count: int = 2
    rate_per_entity: Fraction = Fraction(1)
    condition: Condition = Condition.NORMAL
    duration: Fraction = Fraction(10)
    start: datetime = DEFAULT_EPOCH

    def __post_init__(self):
        object.__setattr__(self, "rate_per_entity", Fraction(self.rate_per_entity))
        object.__setattr__(self, "duration", Fraction(self.duration))
        object.__setattr__(self, "condition", Condition(self.condition))
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        if self.patient_count < 1:
            raise ValueError("patient_count must be positive")
        if self.rate_per_entity <= 0:
            raise ValueError("rate_per_entity must be positive")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")

    @property
    def samples_per_patient(self) -> int:
        return int(self.rate_per_entity * self.duration)


def _rng(seed: int, *key) -> random.Random:
    return random.Random(":".join(str(k) for k in (seed, *key)))


# --- patients and encounters -------------------------------------------------

_FAMILY = ("EVERYWOMAN", "EVERYMAN", "JONES", "NGUYEN", "GARCIA", "OKAFOR", "SMITH", "KOWALSKI", "TANAKA", "SILVA")
_GIVEN = {
    Sex.F: ("EVE", "MARIA", "AMINA", "HANNAH", "YUKI", "CLARA"),
    Sex.M: ("ADAM", "JOHN", "KWAME", "LUIS", "TOMASZ", "HIRO"),
}
_STREETS = ("FERNWOOD DR.", "MAPLE AVE", "OAK ST", "RIVER RD", "HILLCREST LN", "MAIN ST")
_PLACES = (("STATESVILLE", "OH"), ("SPRINGFIELD", "IL"), ("MADISON", "WI"), ("SALEM", "OR"), ("DOVER", "DE"))


def generate_patient(seed: int, index: int) -> PatientRecord:
    if index < 0:
        raise ValueError("patient index must be non-negative")
    rng = _rng(seed, "patient", index)
    sex = rng.choice((Sex.F, Sex.M))
    dob = date(1930, 1, 1) + timedelta(days=rng.randrange(365 * 75))
    city, state = rng.choice(_PLACES)
    middle = rng.choice(("", "A", "E", "J", "M", "R"))
    return PatientRecord(
        # the index keeps ids unique within a run
        id=f"{rng.randrange(100, 900):03d}-{rng.randrange(10, 100):02d}-{index:04d}",
        family=rng.choice(_FAMILY),
        given=rng.choice(_GIVEN[sex]),
        middle=middle or None,
        dob=dob,
        sex=sex,
        street=f"{rng.randrange(1, 9999)} {rng.choice(_STREETS)}",
        city=city,
        state=state,
        zip=f"{rng.randrange(10000, 99999):05d}",
        phone=f"({rng.randrange(200, 999)}){rng.randrange(2000000, 9999999)}",
    )


def generate_patient_line(seed: int, index: int) -> str:
    return pipe.format_patient_line(generate_patient(seed, index))


def generate_encounter(seed: int, patient: PatientRecord, start: datetime) -> EncounterRecord:
    rng = _rng(seed, "encounter", patient.id)
    return EncounterRecord(
        id=f"E-{patient.id}",
        patient_id=patient.id,
        encounter_class=rng.choice(list(EncounterClass)),
        start=start,
        status=EncounterStatus.IN_PROGRESS,
    )


# --- vital signs -------------------------------------------------------------

@dataclass(frozen=True)
class VitalsSample:
    systolic_bp: int
    diastolic_bp: int
    heart_rate: int
    body_temp: Decimal
    sampled_at: datetime = DEFAULT_EPOCH

    def __post_init__(self):
        for name, (lo, hi) in CLAMPS.items():
            value = getattr(self, name)
            if not lo <= value <= hi:
                raise ValueError(f"{name}={value} outside [{lo}, {hi}]")


CLAMPS = {
    "systolic_bp": (60, 260),
    "diastolic_bp": (30, 160),
    "heart_rate": (20, 220),
    "body_temp": (Decimal("25.0"), Decimal("43.0")),
}

# Integer ranges per condition; temperature is in tenths of a degree.
_RANGES: Dict[Condition, Dict[str, Tuple[int, int]]] = {
    Condition.NORMAL: {
        "systolic_bp": (100, 130), "diastolic_bp": (60, 85), "heart_rate": (60, 100), "body_temp": (361, 372),
    },
}
_RANGES[Condition.HYPERTENSION] = {**_RANGES[Condition.NORMAL], "systolic_bp": (150, 200), "diastolic_bp": (95, 120)}
_RANGES[Condition.HYPOTHERMIA] = {
    **_RANGES[Condition.NORMAL], "body_temp": (300, 349), "systolic_bp": (70, 89), "heart_rate": (101, 140),
}


def _clamp(name: str, value):
    lo, hi = CLAMPS[name]
    return max(lo, min(hi, value))


def generate_vitals(seed: int, patient_id: str, condition: Condition, sequence: int = 0,
                    sampled_at: datetime = DEFAULT_EPOCH) -> VitalsSample:
    """Uniform draw from the condition's ranges, deterministic in (seed, patient, sequence)."""
    ranges = _RANGES[Condition(condition)]
    rng = _rng(seed, "vitals", patient_id, sequence)
    draw = {name: rng.randint(lo, hi) for name, (lo, hi) in ranges.items()}
    draw["body_temp"] = Decimal(draw["body_temp"]).scaleb(-1)
    return VitalsSample(**{name: _clamp(name, v) for name, v in draw.items()}, sampled_at=sampled_at)


@dataclass(frozen=True)
class VitalSign:
    attribute: str
    code: str
    display: str
    units: str
    low: Decimal
    high: Decimal

    @property
    def reference_range(self) -> str:
        return f"{self.low}_{self.high}"

    def flag(self, value: Decimal) -> str:
        if value > self.high:
            return "H"
        if value < self.low:
            return "L"
        return "N"


VITAL_SIGNS = (
    VitalSign("systolic_bp", "8480-6", "SYSTOLIC BLOOD PRESSURE", "mm[Hg]", Decimal(90), Decimal(130)),
    VitalSign("diastolic_bp", "8462-4", "DIASTOLIC BLOOD PRESSURE", "mm[Hg]", Decimal(60), Decimal(85)),
    VitalSign("heart_rate", "8867-4", "HEART RATE", "/min", Decimal(60), Decimal(100)),
    VitalSign("body_temp", "8310-5", "BODY TEMPERATURE", "Cel", Decimal("36.1"), Decimal("37.2")),
)
VITALS_BY_CODE = {v.code: v for v in VITAL_SIGNS}


def _seg(seg_id: str, fields: Dict[int, hl7v2.Field]) -> hl7v2.Segment:
    seg = hl7v2.Segment(seg_id)
    for index, value in sorted(fields.items()):
        seg.set_field(index, value)
    return seg


def render_observation_hl7(sample: VitalsSample, patient: PatientRecord, control_id: str) -> str:
    """ORU^R01 with MSH, PID, OBR and one OBX per vital sign."""
    f = hl7v2.build_field
    ts = hl7v2.format_hl7_timestamp(sample.sampled_at)
    msh = _seg("MSH", {
        1: f("|"), 2: f("^~\\&"), 3: f(SOURCE_NAME), 4: f("SIMFAC"), 5: f("SEMSTREAM"), 6: f("ENGINE"),
        7: f(ts), 9: f("ORU", "R01"), 10: f(control_id), 11: f("P"), 12: f("2.4"),
    })
    pid = _seg("PID", {
        3: f(patient.id),
        5: f(patient.family, patient.given, patient.middle or "", "", "", "", "L"),
        7: f(patient.dob.strftime("%Y%m%d")),
        8: f(patient.sex.value),
        11: f(patient.street or "", "", patient.city or "", patient.state or "", patient.zip or ""),
        13: f(patient.phone or ""),
    })
    obr = _seg("OBR", {1: f("1"), 3: f(control_id, SOURCE_NAME), 4: f("8716-3", "VITAL SIGNS"), 7: f(ts)})
    segments = [msh, pid, obr]
    for set_id, vital in enumerate(VITAL_SIGNS, start=1):
        value = Decimal(getattr(sample, vital.attribute))
        segments.append(obx_segment(set_id, vital.code, vital.display, value, vital.units,
                                    vital.reference_range, vital.flag(value), observed_at=sample.sampled_at))
    return hl7v2.serialize_message(hl7v2.Hl7Message(segments))


def obx_segment(set_id: int, code: str, display: str, value: Decimal, units: str, reference_range: str,
                flag: str, value_type: str = "NM", observed_at: Optional[datetime] = None) -> hl7v2.Segment:
    """One numeric OBX. ``SN`` puts the number in the second component, as in ``^182``."""
    f = hl7v2.build_field
    fields = {
        1: f(str(set_id)), 2: f(value_type), 3: f(code, display),
        5: f("", str(value)) if value_type == "SN" else f(str(value)),
        6: f(units), 7: f(reference_range), 8: f(flag), 11: f("F"),
    }
    if observed_at is not None:
        fields[14] = f(hl7v2.format_hl7_timestamp(observed_at))
    return _seg("OBX", fields)


# --- feed --------------------------------------------------------------------

@dataclass(frozen=True)
class FeedEvent:
    at: datetime
    topic: str
    payload: str
    content_type: ContentType


def encounter_envelope(encounter: EncounterRecord) -> fhir.MessageEnvelope:
    return fhir.MessageEnvelope(
        control_id=f"ENC-{encounter.id}",
        event_code="encounter-start",
        source_name=SOURCE_NAME,
        source_endpoint=SOURCE_ENDPOINT,
        sent_at=encounter.start,
        data_reference=f"Encounter/{encounter.id}",
    )


def observation_time(config: ScenarioConfig, k: int, start: Optional[datetime] = None) -> datetime:
    """Time of the k-th sample (k >= 1); computed from k, so no rounding drift accumulates."""
    return (start or config.start) + seconds(Fraction(k) / config.rate_per_entity)


def feed_events(config: ScenarioConfig, start: Optional[datetime] = None) -> Iterator[FeedEvent]:
    """The whole feed in publication order: patients and encounters at start, then samples."""
    t0 = start or config.start
    patients = [generate_patient(config.seed, i) for i in range(config.patient_count)]
    for p in patients:
        yield FeedEvent(t0, PATIENT_TOPIC, pipe.format_patient_line(p) + "\n", ContentType.PIPE)
    for p in patients:
        enc = generate_encounter(config.seed, p, t0)
        yield FeedEvent(t0, ENCOUNTER_TOPIC, fhir.serialize_encounter_json(enc, encounter_envelope(enc)),
                        ContentType.FHIR_JSON)
    for k in range(1, config.samples_per_patient + 1):
        at = observation_time(config, k, t0)
        for index, p in enumerate(patients):
            sample = generate_vitals(config.seed, p.id, config.condition, k, at)
            control_id = f"SIM{config.seed}-{index:04d}-{k:06d}"
            yield FeedEvent(at, OBSERVATION_TOPIC, render_observation_hl7(sample, p, control_id),
                            ContentType.HL7V2)


def run_feed(config: ScenarioConfig, bus: MessageBus, clock=None,
             after_tick: Optional[Callable[[datetime], None]] = None) -> Dict[str, int]:
    """Publish the feed, moving ``clock`` to each event time; returns messages sent per topic.

    With a virtual clock the clock is set to each timestamp in turn; with a
    wall clock the feed starts now and sleeps until each event is due.
    ``after_tick`` runs once after each batch of same-time events.
    """
    clock = clock or WallClock()
    virtual = hasattr(clock, "set")
    start = config.start if virtual else clock.now()
    endpoint = bus.endpoint(Role.INPUT, "simgen")
    sent: Counter = Counter()
    for at, batch in groupby(feed_events(config, start), key=lambda e: e.at):
        if virtual:
            clock.set(at)
        else:
            delay = (at - clock.now()).total_seconds()
            if delay > 0:
                time.sleep(delay)
        for event in batch:
            endpoint.publish(event.topic, event.payload, event.content_type)
            sent[event.topic] += 1
        if after_tick is not None:
            after_tick(at)
    return {topic: sent.get(topic, 0) for topic in (PATIENT_TOPIC, ENCOUNTER_TOPIC, OBSERVATION_TOPIC)}


def sample_stream(config: ScenarioConfig) -> List[VitalsSample]:
    """Every vitals sample the feed would carry, in feed order."""
    patients = [generate_patient(config.seed, i) for i in range(config.patient_count)]
    return [
        generate_vitals(config.seed, p.id, config.condition, k, observation_time(config, k))
        for k in range(1, config.samples_per_patient + 1)
        for p in patients
    ]

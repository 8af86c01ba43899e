"""Condition detectors over query result sets.

Detectors are pure: they look at one ResultSet (one poll window) and return
events. Thresholds live in :class:`HypertensionThresholds` and
:class:`HypothermiaThresholds` so configs can override them.
"""

from __future__ import annotations

import enum
import json
import logging
import threading
from dataclasses import dataclass, field
from datetime import datetime
from decimal import Decimal
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, TextIO, Tuple

from ..bus import BusMessage, MessageBus, Role
from ..clock import format_timestamp, parse_timestamp
from ..query import ResultSet
from ..rdf.terms import Iri, Literal, Term

log = logging.getLogger(__name__)

SYSTOLIC = ("8480-6", "mm[Hg]")
BODY_TEMPERATURE = ("8310-5", "Cel")
HEART_RATE = ("8867-4", "/min")


class ConditionKind(str, enum.Enum):
    HYPERTENSION = "HYPERTENSION"
    HYPOTHERMIA = "HYPOTHERMIA"


@dataclass(frozen=True)
class Evidence:
    code: str
    value: Decimal
    units: str


@dataclass(frozen=True)
class ConditionEvent:
    condition: ConditionKind
    patient_id: str
    evidence: Tuple[Evidence, ...]
    detected_at: datetime

    def __post_init__(self):
        if not self.evidence:
            raise ValueError("a condition event needs at least one piece of evidence")

    def to_json(self) -> str:
        return json.dumps({
            "condition": self.condition.value,
            "patient_id": self.patient_id,
            "evidence": [{"code": e.code, "value": str(e.value), "units": e.units} for e in self.evidence],
            "detected_at": format_timestamp(self.detected_at),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ConditionEvent":
        doc = json.loads(line)
        return cls(
            ConditionKind(doc["condition"]),
            doc["patient_id"],
            tuple(Evidence(e["code"], Decimal(e["value"]), e["units"]) for e in doc["evidence"]),
            parse_timestamp(doc["detected_at"]),
        )


@dataclass(frozen=True)
class HypertensionThresholds:
    systolic: Decimal = Decimal(140)

    def holds(self, systolic: Decimal) -> bool:
        return systolic > self.systolic


@dataclass(frozen=True)
class HypothermiaThresholds:
    temperature: Decimal = Decimal("35.0")
    systolic: Decimal = Decimal(90)
    pulse: Decimal = Decimal(100)

    def holds(self, temperature: Decimal, systolic: Decimal, pulse: Decimal) -> bool:
        return temperature < self.temperature and systolic < self.systolic and pulse > self.pulse


def patient_id_of(term: Term) -> str:
    """``urn:fhir:Patient/123`` -> ``123``; literals are taken verbatim."""
    if isinstance(term, Iri):
        return term.value.rsplit("/", 1)[-1]
    if isinstance(term, Literal):
        return term.lexical
    raise ValueError(f"cannot read a patient id from {term}")


def _number(term: Term) -> Optional[Decimal]:
    if isinstance(term, Literal) and term.is_numeric:
        return term.numeric()
    return None


Rows = Iterable[Mapping[str, Term]]


def _rows(results: ResultSet | Rows) -> List[Mapping[str, Term]]:
    return results.bindings() if isinstance(results, ResultSet) else list(results)


def _detected_at(results, detected_at: Optional[datetime]) -> datetime:
    if detected_at is not None:
        return detected_at
    window = getattr(results, "window", None)
    if window is None:
        raise ValueError("detected_at is required when the results carry no window")
    return window[1]


def detect_hypertension(results: ResultSet | Rows, threshold: Decimal | int = 140,
                        detected_at: Optional[datetime] = None) -> List[ConditionEvent]:
    """One event per patient with at least one systolic value strictly above ``threshold``.

    Rows must bind ``patient`` and ``value``; a ``units`` binding is used when present.
    """
    rule = HypertensionThresholds(Decimal(threshold))
    rows = _rows(results)
    by_patient: Dict[str, List[Evidence]] = {}
    for row in rows:
        value = _number(row["value"])
        if value is None or not rule.holds(value):
            continue
        units = row["units"].lexical if isinstance(row.get("units"), Literal) else SYSTOLIC[1]
        by_patient.setdefault(patient_id_of(row["patient"]), []).append(Evidence(SYSTOLIC[0], value, units))
    if not by_patient:
        return []
    at = _detected_at(results, detected_at)
    return [
        ConditionEvent(ConditionKind.HYPERTENSION, pid, tuple(sorted(ev, key=lambda e: -e.value)), at)
        for pid, ev in sorted(by_patient.items())
    ]


def detect_hypothermia(results: ResultSet | Rows, thresholds: HypothermiaThresholds = HypothermiaThresholds(),
                       detected_at: Optional[datetime] = None) -> List[ConditionEvent]:
    """Event when one patient's temperature, systolic and pulse readings in the window all qualify.

    Rows bind ``patient``, ``temperature``, ``systolic`` and ``pulse``; the
    first qualifying row per patient (rows are sorted) supplies the evidence.
    """
    chosen: Dict[str, Tuple[Decimal, Decimal, Decimal]] = {}
    for row in _rows(results):
        pid = patient_id_of(row["patient"])
        values = tuple(_number(row[k]) for k in ("temperature", "systolic", "pulse"))
        if pid in chosen or any(v is None for v in values):
            continue
        if thresholds.holds(*values):
            chosen[pid] = values
    if not chosen:
        return []
    at = _detected_at(results, detected_at)
    events = []
    for pid, (temp, sys_bp, pulse) in sorted(chosen.items()):
        evidence = (
            Evidence(BODY_TEMPERATURE[0], temp, BODY_TEMPERATURE[1]),
            Evidence(SYSTOLIC[0], sys_bp, SYSTOLIC[1]),
            Evidence(HEART_RATE[0], pulse, HEART_RATE[1]),
        )
        events.append(ConditionEvent(ConditionKind.HYPOTHERMIA, pid, evidence, at))
    return events


def evidence_satisfies(event: ConditionEvent, hypertension: HypertensionThresholds = HypertensionThresholds(),
                       hypothermia: HypothermiaThresholds = HypothermiaThresholds()) -> bool:
    """Re-check an event against its predicate; used by tests and run reports."""
    by_code = {e.code: e.value for e in event.evidence}
    if event.condition is ConditionKind.HYPERTENSION:
        return all(e.code == SYSTOLIC[0] and hypertension.holds(e.value) for e in event.evidence)
    try:
        return hypothermia.holds(by_code[BODY_TEMPERATURE[0]], by_code[SYSTOLIC[0]], by_code[HEART_RATE[0]])
    except KeyError:
        return False


# --- running detectors on the bus --------------------------------------------

@dataclass(frozen=True)
class DetectorBinding:
    """Which detector consumes which query's results."""

    condition: ConditionKind
    query: str
    hypertension: HypertensionThresholds = HypertensionThresholds()
    hypothermia: HypothermiaThresholds = HypothermiaThresholds()

    def run(self, results: ResultSet) -> List[ConditionEvent]:
        if self.condition is ConditionKind.HYPERTENSION:
            return detect_hypertension(results, self.hypertension.systolic)
        return detect_hypothermia(results, self.hypothermia)


@dataclass
class DetectorStage:
    """Subscribes to result topics and appends events as JSON lines to ``event_log``."""

    bus: MessageBus
    bindings: Sequence[DetectorBinding]
    event_log: Optional[Path | str | TextIO] = None
    events: List[ConditionEvent] = field(default_factory=list)
    consumed: int = 0
    failures: int = 0

    def __post_init__(self):
        self._endpoint = self.bus.endpoint(Role.APPLICATION, "detectors")
        self._lock = threading.Lock()
        self._subs = []
        self._by_query = {}
        for b in self.bindings:
            self._by_query.setdefault(b.query, []).append(b)

    def start(self, topics: Mapping[str, str]) -> "DetectorStage":
        """``topics`` maps query name to its result topic."""
        for name in self._by_query:
            if name not in topics:
                raise ValueError(f"detector bound to unknown query {name!r}")
            self._subs.append(self._endpoint.subscribe(topics[name], self.handle))
        return self

    def stop(self) -> None:
        for sub in self._subs:
            sub.unsubscribe()
        self._subs.clear()

    def handle(self, msg: BusMessage) -> None:
        with self._lock:
            self.consumed += 1
        try:
            results = ResultSet.from_json(msg.payload)
            new = [e for b in self._by_query.get(results.query, []) for e in b.run(results)]
        except (ValueError, KeyError) as exc:
            log.warning("detector could not process %s: %s", msg.message_id, exc)
            with self._lock:
                self.failures += 1
            return
        with self._lock:
            self.events.extend(new)
            self._write(new)

    def _write(self, events: List[ConditionEvent]) -> None:
        if not events or self.event_log is None:
            return
        lines = "".join(e.to_json() + "\n" for e in events)
        if hasattr(self.event_log, "write"):
            self.event_log.write(lines)
        else:
            with open(self.event_log, "a", encoding="utf-8") as fh:
                fh.write(lines)

    def counters(self) -> dict:
        return {"consumed": self.consumed, "handled": self.consumed - self.failures,
                "dead_letters": self.failures, "retained": 0, "events": len(self.events)}

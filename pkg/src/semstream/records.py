"""Format-neutral domain records shared by every decoder and encoder.

These are the only values that cross from the parsing stage into the RDF
generating stage, so nothing here may know about wire formats.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from datetime import date, datetime
from decimal import Decimal
from typing import Optional, Union

LOINC_SYSTEM = "http://loinc.org"


class RecordError(ValueError):
    """A record violates its own invariants."""


class Sex(str, enum.Enum):
    F = "F"
    M = "M"
    O = "O"  # noqa: E741
    U = "U"


class EncounterClass(str, enum.Enum):
    AMB = "AMB"
    EMER = "EMER"
    IMP = "IMP"


class EncounterStatus(str, enum.Enum):
    PLANNED = "planned"
    IN_PROGRESS = "in-progress"
    FINISHED = "finished"


class AbnormalFlag(str, enum.Enum):
    H = "H"
    L = "L"
    N = "N"


def _require_aware(ts: datetime, name: str) -> None:
    if ts.tzinfo is None:
        raise RecordError(f"{name} must be timezone-aware")


@dataclass(frozen=True)
class PatientRecord:
    id: str
    family: str
    dob: date
    sex: Sex
    given: str = ""
    middle: Optional[str] = None
    street: Optional[str] = None
    city: Optional[str] = None
    state: Optional[str] = None
    zip: Optional[str] = None
    phone: Optional[str] = None

    def __post_init__(self):
        if not self.id:
            raise RecordError("patient id must be non-empty")
        if not isinstance(self.dob, date) or isinstance(self.dob, datetime):
            raise RecordError("dob must be a calendar date")
        object.__setattr__(self, "sex", Sex(self.sex))


@dataclass(frozen=True)
class EncounterRecord:
    id: str
    patient_id: str
    encounter_class: EncounterClass
    start: datetime
    status: EncounterStatus
    end: Optional[datetime] = None

    def __post_init__(self):
        if not self.id or not self.patient_id:
            raise RecordError("encounter id and patient_id must be non-empty")
        object.__setattr__(self, "encounter_class", EncounterClass(self.encounter_class))
        object.__setattr__(self, "status", EncounterStatus(self.status))
        _require_aware(self.start, "start")
        if self.end is not None:
            _require_aware(self.end, "end")
            if self.end < self.start:
                raise RecordError("encounter end precedes start")


@dataclass(frozen=True)
class Coding:
    code: str
    display: str = ""
    system: str = LOINC_SYSTEM


@dataclass(frozen=True)
class ObservationRecord:
    id: str
    patient_id: str
    code: Coding
    value: Decimal
    units: str
    effective_at: datetime
    encounter_id: Optional[str] = None
    reference_range: Optional[str] = None
    abnormal_flag: Optional[AbnormalFlag] = None
    performer: Optional[str] = None

    def __post_init__(self):
        if not self.id or not self.patient_id:
            raise RecordError("observation id and patient_id must be non-empty")
        if not self.code.code:
            raise RecordError("observation code must be non-empty")
        value = self.value
        if not isinstance(value, Decimal):
            value = Decimal(str(value))
            object.__setattr__(self, "value", value)
        if not value.is_finite():
            raise RecordError("observation value must be finite")
        if self.abnormal_flag is not None:
            object.__setattr__(self, "abnormal_flag", AbnormalFlag(self.abnormal_flag))
        _require_aware(self.effective_at, "effective_at")


DomainRecord = Union[PatientRecord, EncounterRecord, ObservationRecord]

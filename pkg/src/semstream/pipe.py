"""Pipe-delimited patient lines.

Layout (11 fields)::

    id|family|given|middle|dob|sex|street|city|state|zip|phone

``dob`` is ``YYYYMMDD``. Empty fields mean "not recorded".
"""

from __future__ import annotations

from datetime import date

from .records import PatientRecord, RecordError

FIELDS = ("id", "family", "given", "middle", "dob", "sex", "street", "city", "state", "zip", "phone")


class PipeFormatError(ValueError):
    pass


def format_patient_line(rec: PatientRecord) -> str:
    values = [
        rec.id, rec.family, rec.given, rec.middle or "", rec.dob.strftime("%Y%m%d"), rec.sex.value,
        rec.street or "", rec.city or "", rec.state or "", rec.zip or "", rec.phone or "",
    ]
    for v in values:
        if "|" in v or "\n" in v or "\r" in v:
            raise PipeFormatError(f"value {v!r} cannot be written in a pipe-delimited line")
    return "|".join(values)


def parse_patient_line(line: str) -> PatientRecord:
    parts = line.rstrip("\r\n").split("|")
    if len(parts) != len(FIELDS):
        raise PipeFormatError(f"expected {len(FIELDS)} fields, got {len(parts)}")
    row = dict(zip(FIELDS, parts))
    dob = row["dob"]
    try:
        return PatientRecord(
            id=row["id"],
            family=row["family"],
            given=row["given"],
            middle=row["middle"] or None,
            dob=date(int(dob[:4]), int(dob[4:6]), int(dob[6:8])),
            sex=row["sex"] or "U",
            street=row["street"] or None,
            city=row["city"] or None,
            state=row["state"] or None,
            zip=row["zip"] or None,
            phone=row["phone"] or None,
        )
    except (ValueError, RecordError) as exc:
        raise PipeFormatError(str(exc)) from exc

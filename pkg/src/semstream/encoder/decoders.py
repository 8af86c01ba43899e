"""Stage 1: wire formats to domain records (the N in N + M)."""

from __future__ import annotations

from typing import Callable, Dict, List

from .. import fhir, hl7v2, pipe
from ..records import DomainRecord


class UnknownFormat(ValueError):
    pass


def decode_pipe(text: str) -> List[DomainRecord]:
    lines = [line for line in text.splitlines() if line.strip()]
    if len(lines) != 1:
        raise pipe.PipeFormatError(f"expected one patient line, got {len(lines)}")
    return [pipe.parse_patient_line(lines[0])]


def decode_fhir_json(text: str) -> List[DomainRecord]:
    return list(fhir.parse_bundle_json(text).records)


def decode_hl7v2(text: str) -> List[DomainRecord]:
    """One ORU message yields its patient plus one record per OBX."""
    msg = hl7v2.parse_message(text)
    patient, observations = hl7v2.extract_observations(msg)
    return [patient, *observations]


# Keyed by the FORMAT segment of the ingest topic.
DECODERS: Dict[str, Callable[[str], List[DomainRecord]]] = {
    "PIPE": decode_pipe,
    "FHIRJSON": decode_fhir_json,
    "HL7V2": decode_hl7v2,
}

# Which bus content type each FORMAT segment must carry.
FORMAT_CONTENT_TYPES = {
    "PIPE": "PIPE",
    "FHIRJSON": "FHIR_JSON",
    "HL7V2": "HL7V2",
}

DECODE_ERRORS = (
    UnknownFormat,
    UnicodeDecodeError,
    hl7v2.Hl7Error,
    fhir.FhirError,
    pipe.PipeFormatError,
    ValueError,
)


def decode_payload(fmt: str, text: str) -> List[DomainRecord]:
    try:
        decoder = DECODERS[fmt]
    except KeyError:
        raise UnknownFormat(f"no decoder for format {fmt!r}") from None
    return decoder(text)

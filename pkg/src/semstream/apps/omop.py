"""OMOP-CDM CSV export (PERSON, VISIT_OCCURRENCE, MEASUREMENT) from stored graphs."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

from ..clock import format_timestamp
from ..encoder.graphs import decode_graph
from ..rdf.terms import ResourceGraph
from ..records import EncounterClass, EncounterRecord, ObservationRecord, PatientRecord, Sex
from ..store import StoreSnapshot, TripleStore

log = logging.getLogger(__name__)

COLUMNS: Dict[str, Sequence[str]] = {
    "PERSON": ("person_id", "gender_concept_id", "year_of_birth", "month_of_birth", "day_of_birth",
               "person_source_value"),
    "VISIT_OCCURRENCE": ("visit_occurrence_id", "person_id", "visit_concept_id", "visit_start_datetime",
                         "visit_end_datetime"),
    "MEASUREMENT": ("measurement_id", "person_id", "measurement_concept_id", "measurement_datetime",
                    "value_as_number", "unit_source_value", "measurement_source_value"),
}

GENDER_CONCEPTS = {Sex.F: 8532, Sex.M: 8507}
VISIT_CONCEPTS = {EncounterClass.IMP: 9201, EncounterClass.AMB: 9202, EncounterClass.EMER: 9203}
NO_MATCHING_CONCEPT = 0


def load_concept_map(path: Optional[Path | str] = None) -> Dict[str, int]:
    """LOINC code -> OMOP concept id, from ``data/loinc_omop.csv`` unless ``path`` is given."""
    if path is None:
        text = resources.files("semstream").joinpath("data/loinc_omop.csv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return {row["loinc_code"]: int(row["concept_id"]) for row in csv.DictReader(io.StringIO(text))}


@dataclass
class OmopExport:
    tables: Dict[str, List[List[str]]] = field(default_factory=lambda: {t: [] for t in COLUMNS})
    unmapped: int = 0
    orphans: int = 0

    def counts(self) -> Dict[str, int]:
        return {t: len(rows) for t, rows in self.tables.items()}

    def to_csv(self, table: str) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(COLUMNS[table])
        writer.writerows(self.tables[table])
        return buf.getvalue()

    def write(self, directory: Path | str) -> List[Path]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for table in COLUMNS:
            path = out / f"{table.lower()}.csv"
            path.write_text(self.to_csv(table), encoding="utf-8", newline="")
            paths.append(path)
        return paths


def _records(source) -> List:
    if isinstance(source, TripleStore):
        source = source.snapshot()
    graphs: Iterable[ResourceGraph] = source.graphs() if isinstance(source, StoreSnapshot) else source
    return [decode_graph(g) for g in graphs]


def export_omop(source: TripleStore | StoreSnapshot | Iterable[ResourceGraph],
                concept_map: Optional[Mapping[str, int]] = None) -> OmopExport:
    """Build the three tables; ids are assigned in source-id order so output is deterministic.

    Visits and measurements whose patient is not in the store are skipped and
    counted in ``orphans`` so every ``person_id`` resolves.
    """
    concepts = load_concept_map() if concept_map is None else concept_map
    records = _records(source)
    patients = sorted((r for r in records if isinstance(r, PatientRecord)), key=lambda r: r.id)
    encounters = sorted((r for r in records if isinstance(r, EncounterRecord)), key=lambda r: r.id)
    observations = sorted((r for r in records if isinstance(r, ObservationRecord)), key=lambda r: r.id)

    export = OmopExport()
    person_ids: Dict[str, int] = {}
    for n, p in enumerate(patients, start=1):
        person_ids[p.id] = n
        export.tables["PERSON"].append([
            str(n), str(GENDER_CONCEPTS.get(p.sex, NO_MATCHING_CONCEPT)),
            str(p.dob.year), str(p.dob.month), str(p.dob.day), p.id,
        ])

    for e in encounters:
        person = person_ids.get(e.patient_id)
        if person is None:
            export.orphans += 1
            continue
        n = len(export.tables["VISIT_OCCURRENCE"]) + 1
        export.tables["VISIT_OCCURRENCE"].append([
            str(n), str(person), str(VISIT_CONCEPTS.get(e.encounter_class, NO_MATCHING_CONCEPT)),
            format_timestamp(e.start), format_timestamp(e.end) if e.end else "",
        ])

    for o in observations:
        person = person_ids.get(o.patient_id)
        if person is None:
            export.orphans += 1
            continue
        concept = concepts.get(o.code.code, NO_MATCHING_CONCEPT)
        if concept == NO_MATCHING_CONCEPT:
            export.unmapped += 1
        n = len(export.tables["MEASUREMENT"]) + 1
        export.tables["MEASUREMENT"].append([
            str(n), str(person), str(concept), format_timestamp(o.effective_at),
            format(o.value, "f"), o.units, o.code.code,
        ])
    if export.unmapped:
        log.warning("%d measurements have no OMOP concept", export.unmapped)
    if export.orphans:
        log.warning("%d rows skipped: patient not in store", export.orphans)
    return export

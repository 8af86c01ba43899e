"""Consumers of the store and the query stage."""

from .detectors import (
    ConditionEvent,
    ConditionKind,
    DetectorBinding,
    DetectorStage,
    Evidence,
    HypertensionThresholds,
    HypothermiaThresholds,
    detect_hypertension,
    detect_hypothermia,
    evidence_satisfies,
)
from .omop import COLUMNS, OmopExport, export_omop, load_concept_map
from .sinks import DestinationUnwritable, TextSink, sink_to_text

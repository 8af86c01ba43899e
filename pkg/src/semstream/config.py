"""Pipeline configuration: one TOML file, validated in full before anything starts.

Grammar (all keys optional unless noted)::

    clock = "virtual"              # or "wall"
    journal = "run.ttl"            # append-only Turtle journal of stored graphs
    event_log = "events.jsonl"     # condition events, one JSON object per line

    [scenario]
    seed = 42
    patient_count = 2
    rate_per_entity = 1            # messages/second per patient; "1/3" also accepted
    condition = "hypertension"     # normal | hypertension | hypothermia
    duration = 10                  # seconds of simulated feed

    [[query]]                      # see semstream.query.query_from_config
    name = "hypertension"
    poll_interval = 1
    patterns = ["?obs fhir:Observation.valueQuantity.value ?value", ...]
    filters = ["?value > 140"]
    select = ["?patient", "?value"]

    [detectors.hypertension]       # and/or [detectors.hypothermia]
    query = "hypertension"
    systolic = 140                 # hypothermia: temperature, systolic, pulse

    [[sink]]
    topic = "STAGE.RESULTS.*"
    destination = "-"              # "-" is the console
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, List, Mapping, Optional, Tuple

from ._toml import TOMLDecodeError, load_toml, loads_toml
from .apps.detectors import ConditionKind, DetectorBinding, HypertensionThresholds, HypothermiaThresholds
from .bus import InvalidTopicName, validate_topic
from .query import DuplicateQueryName, QueryError, StreamingQuery, check_unique, query_from_config
from .rdf.terms import PREFIXES
from .simgen import Condition, ScenarioConfig

EXAMPLES = ("hypertension.example", "normal.example", "hypothermia.example", "queries.example")


class ConfigInvalid(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class ClockMode(str, enum.Enum):
    VIRTUAL = "virtual"
    WALL = "wall"


@dataclass(frozen=True)
class SinkConfig:
    topic: str
    destination: str = "-"


@dataclass(frozen=True)
class PipelineConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    queries: Tuple[StreamingQuery, ...] = ()
    detectors: Tuple[DetectorBinding, ...] = ()
    sinks: Tuple[SinkConfig, ...] = ()
    journal: Optional[Path] = None
    event_log: Optional[Path] = None
    clock: ClockMode = ClockMode.VIRTUAL

    def with_overrides(self, *, seed=None, condition=None, duration=None, clock=None, journal=None) -> "PipelineConfig":
        """Apply command-line overrides, re-validating the touched values."""
        scenario = self.scenario
        try:
            if seed is not None:
                scenario = replace(scenario, seed=int(seed))
            if condition is not None:
                scenario = replace(scenario, condition=Condition(str(condition).upper()))
            if duration is not None:
                scenario = replace(scenario, duration=_fraction(duration, "duration"))
        except ValueError as exc:
            raise ConfigInvalid("scenario", str(exc)) from exc
        out = replace(self, scenario=scenario)
        if clock is not None:
            out = replace(out, clock=_enum(ClockMode, clock, "clock"))
        if journal is not None:
            out = replace(out, journal=Path(journal))
        return out


def _fraction(value: Any, path: str) -> Fraction:
    if isinstance(value, bool):
        raise ConfigInvalid(path, "expected a number")
    try:
        return Fraction(str(value)) if not isinstance(value, (int, Fraction)) else Fraction(value)
    except (ValueError, ZeroDivisionError):
        raise ConfigInvalid(path, f"{value!r} is not a number") from None


def _decimal(value: Any, path: str) -> Decimal:
    if isinstance(value, bool):
        raise ConfigInvalid(path, "expected a number")
    try:
        return Decimal(str(value))
    except InvalidOperation:
        raise ConfigInvalid(path, f"{value!r} is not a number") from None


def _enum(cls, value: Any, path: str):
    try:
        return cls(str(value).lower() if cls is ClockMode else str(value).upper())
    except ValueError:
        allowed = ", ".join(m.value.lower() for m in cls)
        raise ConfigInvalid(path, f"{value!r} is not one of {allowed}") from None


def _table(doc: Mapping, key: str, path: str) -> Mapping:
    value = doc.get(key, {})
    if not isinstance(value, Mapping):
        raise ConfigInvalid(path, "expected a table")
    return value


_TOP_KEYS = {"clock", "journal", "event_log", "scenario", "query", "detectors", "sink", "prefixes"}
_SCENARIO_KEYS = {"seed", "patient_count", "rate_per_entity", "condition", "duration"}


def _check_keys(table: Mapping, allowed: set, path: str) -> None:
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigInvalid(f"{path}.{unknown[0]}" if path else unknown[0], "unknown key")


def _scenario(doc: Mapping) -> ScenarioConfig:
    table = _table(doc, "scenario", "scenario")
    _check_keys(table, _SCENARIO_KEYS, "scenario")
    kwargs = {}
    if "seed" in table:
        seed = table["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigInvalid("scenario.seed", "expected a non-negative integer")
        kwargs["seed"] = seed
    if "patient_count" in table:
        count = table["patient_count"]
        if isinstance(count, bool) or not isinstance(count, int) or count < 1:
            raise ConfigInvalid("scenario.patient_count", "expected a positive integer")
        kwargs["patient_count"] = count
    if "rate_per_entity" in table:
        rate = _fraction(table["rate_per_entity"], "scenario.rate_per_entity")
        if rate <= 0:
            raise ConfigInvalid("scenario.rate_per_entity", "must be positive")
        kwargs["rate_per_entity"] = rate
    if "duration" in table:
        duration = _fraction(table["duration"], "scenario.duration")
        if duration < 0:
            raise ConfigInvalid("scenario.duration", "must be non-negative")
        kwargs["duration"] = duration
    if "condition" in table:
        kwargs["condition"] = _enum(Condition, table["condition"], "scenario.condition")
    return ScenarioConfig(**kwargs)


def _queries(doc: Mapping) -> Tuple[StreamingQuery, ...]:
    entries = doc.get("query", [])
    if not isinstance(entries, list):
        raise ConfigInvalid("query", "expected an array of tables ([[query]])")
    prefixes = {**PREFIXES, **_table(doc, "prefixes", "prefixes")}
    queries = []
    for i, entry in enumerate(entries):
        path = f"query[{i}]"
        if not isinstance(entry, Mapping):
            raise ConfigInvalid(path, "expected a table")
        _check_keys(entry, {"name", "patterns", "filters", "select", "poll_interval"}, path)
        if "poll_interval" in entry:
            _fraction(entry["poll_interval"], f"{path}.poll_interval")
        try:
            queries.append(query_from_config(entry, prefixes))
        except (QueryError, ValueError) as exc:
            raise ConfigInvalid(path, str(exc)) from exc
    try:
        check_unique(queries)
    except DuplicateQueryName as exc:
        raise ConfigInvalid("query", str(exc)) from exc
    return tuple(queries)


_DETECTOR_KEYS = {
    ConditionKind.HYPERTENSION: {"query", "systolic"},
    ConditionKind.HYPOTHERMIA: {"query", "temperature", "systolic", "pulse"},
}


def _detectors(doc: Mapping, queries: Tuple[StreamingQuery, ...]) -> Tuple[DetectorBinding, ...]:
    table = _table(doc, "detectors", "detectors")
    names = {q.name for q in queries}
    bindings = []
    for key, entry in table.items():
        path = f"detectors.{key}"
        kind = _enum(ConditionKind, key, path)
        if not isinstance(entry, Mapping):
            raise ConfigInvalid(path, "expected a table")
        _check_keys(entry, _DETECTOR_KEYS[kind], path)
        query = entry.get("query")
        if query not in names:
            raise ConfigInvalid(f"{path}.query", f"no query named {query!r}")
        numbers = {k: _decimal(v, f"{path}.{k}") for k, v in entry.items() if k != "query"}
        if kind is ConditionKind.HYPERTENSION:
            bindings.append(DetectorBinding(kind, query, hypertension=HypertensionThresholds(**numbers)))
        else:
            bindings.append(DetectorBinding(kind, query, hypothermia=HypothermiaThresholds(**numbers)))
    return tuple(bindings)


def _sinks(doc: Mapping) -> Tuple[SinkConfig, ...]:
    entries = doc.get("sink", [])
    if not isinstance(entries, list):
        raise ConfigInvalid("sink", "expected an array of tables ([[sink]])")
    sinks = []
    for i, entry in enumerate(entries):
        path = f"sink[{i}]"
        if not isinstance(entry, Mapping) or "topic" not in entry:
            raise ConfigInvalid(path, "a sink needs a topic")
        _check_keys(entry, {"topic", "destination"}, path)
        try:
            validate_topic(entry["topic"], pattern=True)
        except InvalidTopicName as exc:
            raise ConfigInvalid(f"{path}.topic", str(exc)) from exc
        sinks.append(SinkConfig(entry["topic"], str(entry.get("destination", "-"))))
    return tuple(sinks)


def _optional_path(doc: Mapping, key: str) -> Optional[Path]:
    value = doc.get(key)
    if value is None:
        return None
    if not isinstance(value, str) or not value:
        raise ConfigInvalid(key, "expected a file path")
    return Path(value)


def config_from_dict(doc: Mapping) -> PipelineConfig:
    _check_keys(doc, _TOP_KEYS, "")
    queries = _queries(doc)
    return PipelineConfig(
        scenario=_scenario(doc),
        queries=queries,
        detectors=_detectors(doc, queries),
        sinks=_sinks(doc),
        journal=_optional_path(doc, "journal"),
        event_log=_optional_path(doc, "event_log"),
        clock=_enum(ClockMode, doc.get("clock", "virtual"), "clock"),
    )


def example_text(name: str) -> str:
    """Text of a shipped example config, e.g. ``"hypertension.example"``."""
    stem = name[:-5] if name.endswith(".toml") else name
    if stem not in EXAMPLES:
        raise FileNotFoundError(name)
    return resources.files("semstream").joinpath(f"data/{stem}.toml").read_text(encoding="utf-8")


def loads_config(text: str) -> PipelineConfig:
    try:
        doc = loads_toml(text)
    except TOMLDecodeError as exc:
        raise ConfigInvalid("<toml>", str(exc)) from exc
    return config_from_dict(doc)


def load_config(path: Optional[str | Path] = None) -> PipelineConfig:
    """Load ``path``; bare names of shipped examples resolve to the packaged files."""
    if path is None:
        return PipelineConfig()
    p = Path(path)
    if not p.exists():
        try:
            return loads_config(example_text(str(path)))
        except FileNotFoundError:
            raise ConfigInvalid(str(path), "no such file") from None
    try:
        doc = load_toml(p)
    except TOMLDecodeError as exc:
        raise ConfigInvalid(str(path), str(exc)) from exc
    return config_from_dict(doc)


def example_configs() -> List[str]:
    return list(EXAMPLES)

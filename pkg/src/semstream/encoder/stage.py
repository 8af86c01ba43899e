"""Encoder stage wiring: ingest topics -> decoders -> graph encoders -> STAGE.RDF."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List

from ..bus import (
    DLQ_TOPIC,
    RDF_TOPIC,
    BusMessage,
    ContentType,
    MessageBus,
    Role,
    is_ingest_topic,
)
from ..clock import MonotonicStamp, WallClock
from ..rdf.turtle import graph_from_payload, graph_to_payload
from ..records import DomainRecord, EncounterRecord, ObservationRecord, PatientRecord
from .decoders import DECODE_ERRORS, DECODERS, FORMAT_CONTENT_TYPES, UnknownFormat, decode_payload
from .graphs import GRAPH_ENCODERS, MAPPING_TABLE

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ComponentRegistry:
    decoders: Dict[str, Callable]
    encoders: Dict[str, Callable]

    @property
    def n_sources(self) -> int:
        return len(self.decoders)

    @property
    def n_resource_types(self) -> int:
        return len(self.encoders)

    @property
    def routine_count(self) -> int:
        return self.n_sources + self.n_resource_types

    def verify(self) -> None:
        """Every resource type has exactly one graph encoder and every decoder is callable."""
        expected = {m.resource_type for m in MAPPING_TABLE.values()}
        if set(self.encoders) != expected:
            raise RuntimeError(f"graph encoders {sorted(self.encoders)} != resource types {sorted(expected)}")
        for name, fn in {**self.decoders, **self.encoders}.items():
            if not callable(fn):
                raise RuntimeError(f"registered routine {name!r} is not callable")


def default_registry() -> ComponentRegistry:
    return ComponentRegistry(dict(DECODERS), dict(GRAPH_ENCODERS))


_RESOURCE_TYPE = {PatientRecord: "Patient", EncounterRecord: "Encounter", ObservationRecord: "Observation"}


def decode_input(msg: BusMessage) -> List[DomainRecord]:
    """Decode one ingest message into domain records, dispatching on the topic's FORMAT."""
    if not is_ingest_topic(msg.topic):
        raise UnknownFormat(f"{msg.topic} is not an ingest topic")
    fmt = msg.topic.split(".")[2]
    expected = FORMAT_CONTENT_TYPES.get(fmt)
    if expected is None:
        raise UnknownFormat(f"no decoder for format {fmt!r}")
    if msg.content_type.value != expected:
        raise UnknownFormat(f"{msg.topic} carries {msg.content_type.value}, expected {expected}")
    return decode_payload(fmt, msg.payload.decode("utf-8"))


@dataclass
class StageCounters:
    consumed: int = 0
    handled: int = 0
    dead_letters: int = 0
    produced: int = 0
    retained: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)

    @property
    def conserved(self) -> bool:
        return self.consumed == self.handled + self.dead_letters + self.retained


@dataclass
class EncoderStage:
    bus: MessageBus
    clock: object = field(default_factory=WallClock)
    registry: ComponentRegistry = field(default_factory=default_registry)
    counters: StageCounters = field(default_factory=StageCounters)

    def __post_init__(self):
        self.registry.verify()
        self._stamp = MonotonicStamp(self.clock)
        self._endpoint = self.bus.endpoint(Role.ENCODER, "encoder")
        self._lock = threading.Lock()
        self._subs = []

    def start(self) -> "EncoderStage":
        self._subs.append(self._endpoint.subscribe("INPUT.*.*", self.handle))
        return self

    def stop(self) -> None:
        for sub in self._subs:
            sub.unsubscribe()
        self._subs.clear()

    def _count(self, **deltas) -> None:
        with self._lock:
            for k, v in deltas.items():
                setattr(self.counters, k, getattr(self.counters, k) + v)

    def handle(self, msg: BusMessage) -> None:
        self._count(consumed=1)
        try:
            records = decode_input(msg)
        except DECODE_ERRORS as exc:
            log.warning("dead-lettering %s from %s: %s", msg.message_id, msg.topic, exc)
            self._endpoint.publish(DLQ_TOPIC, msg.payload, msg.content_type)
            self._count(dead_letters=1)
            return
        for rec in records:
            encode = self.registry.encoders[_RESOURCE_TYPE[type(rec)]]
            graph = encode(rec, self._stamp.now())
            self._endpoint.publish(RDF_TOPIC, graph_to_payload(graph), ContentType.RDF_GRAPH)
            self._count(produced=1)
        self._count(handled=1)


def run_encoder(bus: MessageBus, clock=None, registry: ComponentRegistry | None = None) -> EncoderStage:
    stage = EncoderStage(bus, clock or WallClock(), registry or default_registry())
    return stage.start()

"""Wire every stage together and run one scenario to completion."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .apps.detectors import ConditionEvent, DetectorStage, evidence_satisfies
from .apps.sinks import TextSink
from .bus import DLQ_TOPIC, MessageBus
from .clock import VirtualClock, WallClock, format_timestamp, seconds
from .config import ClockMode, PipelineConfig
from .encoder.stage import EncoderStage
from .query import QueryStage
from .simgen import run_feed
from .store import StoreStage, TripleStore

log = logging.getLogger(__name__)

DRAIN_TIMEOUT = 60.0


class StageStartupFailure(RuntimeError):
    pass


class RunError(RuntimeError):
    pass


@dataclass
class RunReport:
    feed: Dict[str, int] = field(default_factory=dict)
    stages: Dict[str, Dict[str, int]] = field(default_factory=dict)
    events: List[ConditionEvent] = field(default_factory=list)
    dead_letters: int = 0
    errors: List[str] = field(default_factory=list)
    store_graphs: int = 0
    store_triples: int = 0
    started_at: str = ""
    finished_at: str = ""

    @property
    def conserved(self) -> bool:
        """Every stage accounts for each message it consumed."""
        return all(
            s["consumed"] == s["handled"] + s["dead_letters"] + s["retained"]
            for s in self.stages.values() if "consumed" in s
        )

    def event_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for e in self.events:
            counts[e.condition.value] = counts.get(e.condition.value, 0) + 1
        return counts

    def to_dict(self) -> dict:
        return {
            "feed": self.feed,
            "stages": self.stages,
            "events": self.event_counts(),
            "events_total": len(self.events),
            "evidence_valid": all(evidence_satisfies(e) for e in self.events),
            "dead_letters": self.dead_letters,
            "errors": self.errors,
            "store": {"graphs": self.store_graphs, "triples": self.store_triples},
            "conserved": self.conserved,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass
class Pipeline:
    """Owns stage lifecycles: start in dependency order, stop in reverse."""

    config: PipelineConfig
    store: Optional[TripleStore] = None

    def __post_init__(self):
        virtual = self.config.clock is ClockMode.VIRTUAL
        self.clock = VirtualClock(self.config.scenario.start) if virtual else WallClock()
        self.bus = MessageBus(self.clock)
        if self.store is None:
            self.store = TripleStore(self.config.journal)
        self.dead_letters = 0
        self._started: List = []

    def _count_dead_letter(self, _msg) -> None:
        self.dead_letters += 1

    def start(self) -> "Pipeline":
        cfg = self.config
        try:
            self.encoder = EncoderStage(self.bus, self.clock).start()
            self._started.append(self.encoder)
            self.store_stage = StoreStage(self.bus, self.store).start()
            self._started.append(self.store_stage)
            self._dlq = self.bus.subscribe(DLQ_TOPIC, self._count_dead_letter, name="dlq-monitor")
            topics = {q.name: q.topic for q in cfg.queries}
            self.detectors = DetectorStage(self.bus, cfg.detectors, cfg.event_log).start(topics)
            self._started.append(self.detectors)
            self.sinks = [TextSink(self.bus, s.topic, s.destination) for s in cfg.sinks]
            self._started.extend(self.sinks)
            threaded = cfg.clock is ClockMode.WALL
            start_at = None if threaded else self.clock.now() - seconds(1)
            self.query = QueryStage(list(cfg.queries), self.bus, self.store, self.clock,
                                    **({"start_at": start_at} if start_at else {}))
            if threaded:
                self.query.start_thread()
            self._started.append(self.query)
        except Exception as exc:
            self.stop()
            raise StageStartupFailure(f"{type(exc).__name__}: {exc}") from exc
        return self

    def _after_tick(self, at) -> None:
        self._drain()
        if self.config.clock is ClockMode.VIRTUAL:
            self.query.tick(at)
            self._drain()

    def _drain(self) -> None:
        if not self.bus.drain(DRAIN_TIMEOUT):
            raise RunError(f"bus did not drain within {DRAIN_TIMEOUT} s")

    def run(self) -> RunReport:
        report = RunReport(started_at=format_timestamp(self.clock.now()))
        try:
            report.feed = run_feed(self.config.scenario, self.bus, self.clock, self._after_tick)
            self._drain()
            # pick up anything not yet covered by a scheduled poll
            self.query.tick(self.clock.now(), force=True)
            self._drain()
        except Exception as exc:
            report.errors.append(f"{type(exc).__name__}: {exc}")
            raise
        finally:
            report.finished_at = format_timestamp(self.clock.now())
            self.stop()
            self._fill(report)
        return report

    def stop(self) -> None:
        for stage in reversed(self._started):
            closer = getattr(stage, "stop", None) or getattr(stage, "close")
            closer()
        self._started.clear()
        self.bus.close()

    def _fill(self, report: RunReport) -> None:
        if hasattr(self, "encoder"):
            report.stages["encoder"] = self.encoder.counters.as_dict()
        if hasattr(self, "store_stage"):
            report.stages["store"] = self.store_stage.counters()
        if hasattr(self, "query"):
            report.stages["query"] = self.query.counters()
        if hasattr(self, "detectors"):
            report.stages["detectors"] = self.detectors.counters()
            report.events = list(self.detectors.events)
        report.stages["bus"] = {
            "published": sum(self.bus.published.values()),
            "unrouted": sum(self.bus.dropped.values()),
            "handler_failures": self.bus.handler_failures,
        }
        if self.bus.handler_failures:
            report.errors.append(f"{self.bus.handler_failures} handler failures")
        report.dead_letters = self.dead_letters
        snapshot = self.store.snapshot()
        report.store_graphs = len(snapshot.root_index)
        report.store_triples = len(snapshot)


def run_pipeline(config: PipelineConfig, store: Optional[TripleStore] = None) -> RunReport:
    """Start all stages, run the scenario, drain, stop in reverse order and report."""
    return Pipeline(config, store).start().run()

"""Timestamp-indexed in-memory triplestore.

Graphs are stored whole and keyed by root IRI; re-inserting a root replaces
the previous graph. A sorted time index maps ``ingested_at`` to roots so
that window queries ``(low, high]`` only touch graphs that arrived inside
the window.
"""

from __future__ import annotations

import bisect
import logging
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from .bus import RDF_TOPIC, BusMessage, MessageBus, Role
from .rdf.terms import Iri, ResourceGraph, Term, Triple, TriplePattern, Variable, term_key
from .rdf.turtle import graph_from_payload, parse_turtle, prefix_header, serialize_turtle

log = logging.getLogger(__name__)

Window = Tuple[datetime, datetime]
Binding = Dict[str, Term]


class JournalUnwritable(OSError):
    pass


class InvalidWindow(ValueError):
    pass


def check_window(window: Optional[Window]) -> None:
    if window is not None:
        low, high = window
        if not low < high:
            raise InvalidWindow(f"window low {low} must precede high {high}")


def in_window(ts: datetime, window: Optional[Window]) -> bool:
    return window is None or window[0] < ts <= window[1]


def match_triple(pattern: TriplePattern, triple: Triple, binding: Optional[Binding] = None) -> Optional[Binding]:
    """Unify one pattern with one triple, extending ``binding``; None if they clash."""
    out = dict(binding) if binding else {}
    for pat, val in zip(pattern, (triple.subject, triple.predicate, triple.object)):
        if isinstance(pat, Variable):
            bound = out.get(pat.name)
            if bound is None:
                out[pat.name] = val
            elif bound != val:
                return None
        elif pat != val:
            return None
    return out


@dataclass(frozen=True)
class InsertReport:
    replaced: bool


class StoreSnapshot:
    """Immutable view of the store at one instant."""

    def __init__(self, graphs: Dict[Iri, ResourceGraph], time_index: List[Tuple[datetime, str, Iri]]):
        self.root_index = graphs
        self.time_index = time_index
        self._keys = [entry[0] for entry in time_index]

    def __len__(self) -> int:
        return sum(len(g) for g in self.root_index.values())

    @property
    def triples(self) -> frozenset:
        return frozenset().union(*(g.triples for g in self.root_index.values()))

    def graphs(self, window: Optional[Window] = None) -> List[ResourceGraph]:
        """Graphs whose ingest time lies in ``(low, high]``, oldest first."""
        check_window(window)
        if window is None:
            entries = self.time_index
        else:
            lo = bisect.bisect_right(self._keys, window[0])
            hi = bisect.bisect_right(self._keys, window[1])
            entries = self.time_index[lo:hi]
        return [self.root_index[root] for _, _, root in entries]

    def triples_in(self, window: Optional[Window] = None) -> List[Triple]:
        return [t for g in self.graphs(window) for t in g.triples]

    def match(self, pattern: TriplePattern, window: Optional[Window] = None) -> List[Binding]:
        matched = [t for t in self.triples_in(window) if match_triple(pattern, t) is not None]
        matched.sort(key=Triple.sort_key)
        return [match_triple(pattern, t) for t in matched]


class TripleStore:
    def __init__(self, journal: Optional[os.PathLike | str] = None):
        self._graphs: Dict[Iri, ResourceGraph] = {}
        self._time_index: List[Tuple[datetime, str, Iri]] = []
        self._lock = threading.Lock()
        self._snapshot: Optional[StoreSnapshot] = None
        self.journal_path = Path(journal) if journal else None
        if self.journal_path is not None and self.journal_path.is_dir():
            raise JournalUnwritable(f"journal {self.journal_path} is a directory")
        if self.journal_path is not None and not self.journal_path.exists():
            self.journal_path.parent.mkdir(parents=True, exist_ok=True)
            self.journal_path.write_text(prefix_header(), encoding="utf-8")

    def insert_graph(self, graph: ResourceGraph, *, journal: bool = True) -> InsertReport:
        entry = (graph.ingested_at, graph.root.value, graph.root)
        with self._lock:
            old = self._graphs.get(graph.root)
            if old is not None:
                old_entry = (old.ingested_at, old.root.value, old.root)
                i = bisect.bisect_left(self._time_index, old_entry)
                del self._time_index[i]
            self._graphs[graph.root] = graph
            bisect.insort(self._time_index, entry)
            self._snapshot = None
            if journal and self.journal_path is not None:
                self._append_journal(graph)
        return InsertReport(replaced=old is not None)

    def _append_journal(self, graph: ResourceGraph) -> None:
        block = f"\n# graph {graph.root}\n" + serialize_turtle(graph.triples, header=False)
        with open(self.journal_path, "a", encoding="utf-8") as fh:
            fh.write(block)

    def snapshot(self) -> StoreSnapshot:
        with self._lock:
            if self._snapshot is None:
                self._snapshot = StoreSnapshot(dict(self._graphs), list(self._time_index))
            return self._snapshot

    def match(self, pattern: TriplePattern, window: Optional[Window] = None) -> List[Binding]:
        return self.snapshot().match(pattern, window)

    def graph(self, root: Iri) -> Optional[ResourceGraph]:
        with self._lock:
            return self._graphs.get(root)

    @property
    def roots(self) -> List[Iri]:
        with self._lock:
            return sorted(self._graphs, key=term_key)

    def __len__(self) -> int:
        return len(self.snapshot())

    def dump(self) -> str:
        return serialize_turtle(self.snapshot().triples)

    @classmethod
    def from_graphs(cls, graphs: Iterable[ResourceGraph]) -> "TripleStore":
        store = cls()
        for g in graphs:
            store.insert_graph(g)
        return store


def read_journal(path: os.PathLike | str) -> List[ResourceGraph]:
    """Graphs from a journal file, in append order (later blocks supersede earlier ones)."""
    text = Path(path).read_text(encoding="utf-8")
    marker = "\n# graph "
    head, *blocks = text.split(marker)
    graphs = []
    for block in blocks:
        triples = parse_turtle(head + marker + block)
        graphs.append(ResourceGraph.from_triples(triples))
    return graphs


def load_journal(path: os.PathLike | str) -> TripleStore:
    store = TripleStore()
    for graph in read_journal(path):
        store.insert_graph(graph)
    return store


@dataclass
class StoreStage:
    bus: MessageBus
    store: TripleStore = field(default_factory=TripleStore)
    consumed: int = 0
    inserted: int = 0
    replaced: int = 0
    dead_letters: int = 0

    def __post_init__(self):
        self._endpoint = self.bus.endpoint(Role.STORE, "store")
        self._sub = None

    def start(self) -> "StoreStage":
        self._sub = self._endpoint.subscribe(RDF_TOPIC, self.handle)
        return self

    def stop(self) -> None:
        if self._sub is not None:
            self._sub.unsubscribe()
            self._sub = None

    def handle(self, msg: BusMessage) -> None:
        self.consumed += 1
        try:
            graph = graph_from_payload(msg.payload)
        except (ValueError, SyntaxError) as exc:
            log.warning("store rejected %s: %s", msg.message_id, exc)
            self.dead_letters += 1
            return
        report = self.store.insert_graph(graph)
        self.inserted += 1
        self.replaced += int(report.replaced)

    def counters(self) -> dict:
        return {
            "consumed": self.consumed,
            "handled": self.inserted,
            "dead_letters": self.dead_letters,
            "retained": 0,
            "replaced": self.replaced,
        }


def run_store(bus: MessageBus, store: Optional[TripleStore] = None) -> StoreStage:
    return StoreStage(bus, store or TripleStore()).start()

"""Windowed basic-graph-pattern queries with numeric filters and poll cursors.

A query is an ordered list of triple patterns joined left to right, a set of
numeric comparisons on bound variables, and a projection. ``poll`` evaluates
over ``(watermark, now]`` so each arriving graph contributes rows once.
"""

from __future__ import annotations

import json
import logging
import operator
import re
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from decimal import Decimal
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .bus import RESULTS_PREFIX, ContentType, MessageBus, Role, topic_segment
from .clock import BEGINNING_OF_TIME, format_timestamp, parse_timestamp, seconds
from .rdf.terms import PREFIXES, Literal, Term, Triple, TriplePattern, Variable, term_key
from .rdf.turtle import format_term, parse_pattern, parse_term
from .store import Binding, StoreSnapshot, TripleStore, Window, check_window, match_triple

log = logging.getLogger(__name__)


class QueryError(ValueError):
    pass


class DuplicateQueryName(QueryError):
    pass


class ClockRegression(RuntimeError):
    pass


COMPARATORS: Dict[str, Callable[[Decimal, Decimal], bool]] = {
    "<": operator.lt,
    "<=": operator.le,
    "=": operator.eq,
    ">=": operator.ge,
    ">": operator.gt,
}
_ALIASES = {"≤": "<=", "≥": ">=", "==": "="}


@dataclass(frozen=True)
class Filter:
    variable: Variable
    comparator: str
    constant: Decimal

    def __post_init__(self):
        comparator = _ALIASES.get(self.comparator, self.comparator)
        if comparator not in COMPARATORS:
            raise QueryError(f"unknown comparator {self.comparator!r}")
        object.__setattr__(self, "comparator", comparator)
        object.__setattr__(self, "constant", Decimal(self.constant))

    def test(self, value: Decimal) -> bool:
        return COMPARATORS[self.comparator](value, self.constant)

    def __str__(self) -> str:
        return f"?{self.variable.name} {self.comparator} {self.constant}"


_FILTER = re.compile(r"\s*\?([A-Za-z_][A-Za-z0-9_]*)\s*(<=|>=|==|<|>|=|≤|≥)\s*([+-]?(?:\d+(?:\.\d*)?|\.\d+))\s*\Z")


def parse_filter(text: str) -> Filter:
    m = _FILTER.match(text)
    if m is None:
        raise QueryError(f"cannot parse filter {text!r}; expected e.g. '?value > 140'")
    return Filter(Variable(m.group(1)), m.group(2), Decimal(m.group(3)))


@dataclass(frozen=True)
class StreamingQuery:
    name: str
    patterns: Tuple[TriplePattern, ...]
    filters: Tuple[Filter, ...] = ()
    select: Tuple[Variable, ...] = ()
    poll_interval: timedelta = timedelta(seconds=1)

    def __post_init__(self):
        if not self.name:
            raise QueryError("query name must be non-empty")
        object.__setattr__(self, "patterns", tuple(self.patterns))
        object.__setattr__(self, "filters", tuple(self.filters))
        if not self.patterns:
            raise QueryError(f"query {self.name!r} has no patterns")
        bound = self.pattern_variables
        select = tuple(self.select) or bound
        object.__setattr__(self, "select", select)
        for var in [f.variable for f in self.filters] + list(select):
            if var not in bound:
                raise QueryError(f"query {self.name!r}: ?{var.name} does not appear in any pattern")
        if len(set(select)) != len(select):
            raise QueryError(f"query {self.name!r} selects a variable twice")
        if self.poll_interval <= timedelta(0):
            raise QueryError(f"query {self.name!r}: poll_interval must be positive")

    @property
    def pattern_variables(self) -> Tuple[Variable, ...]:
        """Variables in order of first appearance."""
        seen: List[Variable] = []
        for pat in self.patterns:
            for term in pat:
                if isinstance(term, Variable) and term not in seen:
                    seen.append(term)
        return tuple(seen)

    @property
    def columns(self) -> Tuple[str, ...]:
        return tuple(v.name for v in self.select)

    @property
    def topic(self) -> str:
        return f"{RESULTS_PREFIX}.{topic_segment(self.name)}"


def query_from_config(entry: Mapping, prefixes: Mapping[str, str] = PREFIXES) -> StreamingQuery:
    """Build a query from one ``[[query]]`` table (see ``data/queries.example.toml``)."""
    try:
        name = entry["name"]
        patterns = [parse_pattern(p, prefixes) for p in entry["patterns"]]
    except KeyError as exc:
        raise QueryError(f"query definition is missing {exc.args[0]!r}") from None
    except SyntaxError as exc:
        raise QueryError(f"query {entry.get('name')!r}: {exc}") from exc
    filters = [parse_filter(f) for f in entry.get("filters", [])]
    select = [Variable(s.lstrip("?")) for s in entry.get("select", [])]
    interval = seconds(entry.get("poll_interval", 1))
    return StreamingQuery(name, tuple(patterns), tuple(filters), tuple(select), interval)


def queries_from_config(doc: Mapping) -> List[StreamingQuery]:
    prefixes = {**PREFIXES, **doc.get("prefixes", {})}
    queries = [query_from_config(q, prefixes) for q in doc.get("query", [])]
    check_unique(queries)
    return queries


def check_unique(queries: Iterable[StreamingQuery]) -> None:
    seen = set()
    for q in queries:
        for key in (q.name, q.topic):
            if key in seen:
                raise DuplicateQueryName(f"duplicate query name {q.name!r}")
            seen.add(key)


# --- results -----------------------------------------------------------------

Row = Tuple[Term, ...]


@dataclass(frozen=True)
class ResultSet:
    query: str
    window: Optional[Window]
    columns: Tuple[str, ...]
    rows: Tuple[Row, ...]
    type_mismatches: int = 0

    def __len__(self) -> int:
        return len(self.rows)

    def __bool__(self) -> bool:
        return bool(self.rows)

    def bindings(self) -> List[Dict[str, Term]]:
        return [dict(zip(self.columns, row)) for row in self.rows]

    def to_json(self) -> str:
        window = None
        if self.window is not None:
            window = [format_timestamp(self.window[0]), format_timestamp(self.window[1])]
        return json.dumps({
            "query": self.query,
            "window": window,
            "columns": list(self.columns),
            "rows": [[format_term(t, {}) for t in row] for row in self.rows],
            "diagnostics": {"type_mismatch": self.type_mismatches},
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str | bytes) -> "ResultSet":
        doc = json.loads(text)
        window = doc["window"]
        if window is not None:
            window = (parse_timestamp(window[0]), parse_timestamp(window[1]))
        rows = tuple(tuple(parse_term(t, {}, allow_variables=False) for t in row) for row in doc["rows"])
        return cls(doc["query"], window, tuple(doc["columns"]), rows,
                   doc.get("diagnostics", {}).get("type_mismatch", 0))


# --- evaluation --------------------------------------------------------------

class _Index:
    """Lookup tables over one window's triples."""

    def __init__(self, triples: Iterable[Triple]):
        self.all: List[Triple] = []
        self.by_s: Dict[Term, List[Triple]] = {}
        self.by_p: Dict[Term, List[Triple]] = {}
        self.by_po: Dict[Tuple[Term, Term], List[Triple]] = {}
        for t in set(triples):
            self.all.append(t)
            self.by_s.setdefault(t.subject, []).append(t)
            self.by_p.setdefault(t.predicate, []).append(t)
            self.by_po.setdefault((t.predicate, t.object), []).append(t)

    def candidates(self, s, p, o) -> List[Triple]:
        if s is not None:
            return self.by_s.get(s, [])
        if p is not None and o is not None:
            return self.by_po.get((p, o), [])
        if p is not None:
            return self.by_p.get(p, [])
        return self.all


def _resolve(term, binding: Binding):
    if isinstance(term, Variable):
        return binding.get(term.name)
    return term


def join(patterns: Sequence[TriplePattern], triples: Iterable[Triple]) -> List[Binding]:
    """All consistent bindings for the conjunction of ``patterns``."""
    index = _Index(triples)
    solutions: List[Binding] = [{}]
    for pat in patterns:
        extended: List[Binding] = []
        for binding in solutions:
            s, p, o = (_resolve(t, binding) for t in pat)
            for triple in index.candidates(s, p, o):
                b = match_triple(pat, triple, binding)
                if b is not None:
                    extended.append(b)
        solutions = extended
        if not solutions:
            break
    return solutions


def _passes(filters: Sequence[Filter], binding: Binding) -> Optional[bool]:
    """True/False for numeric bindings; None when a filter sees a non-number."""
    for f in filters:
        term = binding[f.variable.name]
        if not (isinstance(term, Literal) and term.is_numeric):
            return None
        if not f.test(term.numeric()):
            return False
    return True


def evaluate(query: StreamingQuery, snapshot: StoreSnapshot, window: Optional[Window] = None) -> ResultSet:
    """Evaluate over triples of graphs ingested in ``window`` (everything when None)."""
    check_window(window)
    mismatches = 0
    rows = set()
    for binding in join(query.patterns, snapshot.triples_in(window)):
        verdict = _passes(query.filters, binding)
        if verdict is None:
            mismatches += 1
        elif verdict:
            rows.add(tuple(binding[v.name] for v in query.select))
    ordered = tuple(sorted(rows, key=lambda r: tuple(term_key(t) for t in r)))
    return ResultSet(query.name, window, query.columns, ordered, mismatches)


@dataclass(frozen=True)
class PollCursor:
    query: str
    watermark: datetime = BEGINNING_OF_TIME


def poll(query: StreamingQuery, cursor: PollCursor, store: TripleStore | StoreSnapshot,
         now: datetime) -> Tuple[ResultSet, PollCursor]:
    """Evaluate over ``(cursor.watermark, now]`` and advance the watermark to ``now``."""
    if cursor.query != query.name:
        raise QueryError(f"cursor for {cursor.query!r} used with query {query.name!r}")
    if now < cursor.watermark:
        raise ClockRegression(f"poll at {now} precedes watermark {cursor.watermark}")
    if now == cursor.watermark:
        return ResultSet(query.name, None, query.columns, ()), cursor
    snapshot = store.snapshot() if isinstance(store, TripleStore) else store
    result = evaluate(query, snapshot, (cursor.watermark, now))
    return result, replace(cursor, watermark=now)


# --- stage -------------------------------------------------------------------

@dataclass
class _Poller:
    query: StreamingQuery
    cursor: PollCursor
    next_due: Optional[datetime] = None


@dataclass
class QueryStage:
    """Polls each registered query on its interval and publishes non-empty results.

    In virtual-clock runs the orchestrator drives :meth:`tick`; ``start_thread``
    polls against a wall clock instead.
    """

    queries: Sequence[StreamingQuery]
    bus: MessageBus
    store: TripleStore
    clock: object
    start_at: datetime = BEGINNING_OF_TIME
    polls: int = 0
    results_published: int = 0
    rows_published: int = 0
    type_mismatches: int = 0
    history: List[ResultSet] = field(default_factory=list)

    def __post_init__(self):
        check_unique(self.queries)
        self._pollers = [_Poller(q, PollCursor(q.name, self.start_at)) for q in self.queries]
        self._endpoint = self.bus.endpoint(Role.QUERY, "query")
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def tick(self, now: Optional[datetime] = None, *, force: bool = False) -> List[ResultSet]:
        """Poll every query that is due at ``now`` (all of them when ``force``)."""
        now = now or self.clock.now()
        published = []
        with self._lock:
            for poller in self._pollers:
                if poller.next_due is None:
                    poller.next_due = poller.cursor.watermark + poller.query.poll_interval
                if not force and now < poller.next_due:
                    continue
                try:
                    result, poller.cursor = poll(poller.query, poller.cursor, self.store, now)
                except ClockRegression as exc:
                    log.warning("skipping poll of %s: %s", poller.query.name, exc)
                    continue
                self.polls += 1
                self.type_mismatches += result.type_mismatches
                poller.next_due = now + poller.query.poll_interval
                if result:
                    self._endpoint.publish(poller.query.topic, result.to_json(), ContentType.RESULT_SET)
                    self.results_published += 1
                    self.rows_published += len(result)
                    self.history.append(result)
                    published.append(result)
        return published

    def start_thread(self, tick_seconds: float = 0.1) -> "QueryStage":
        def loop():
            while not self._stop.wait(tick_seconds):
                self.tick(self.clock.now())
        self._thread = threading.Thread(target=loop, name="query-stage", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None

    def counters(self) -> dict:
        return {
            "polls": self.polls,
            "results_published": self.results_published,
            "rows_published": self.rows_published,
            "type_mismatches": self.type_mismatches,
        }


def run_query_stage(queries: Sequence[StreamingQuery], bus: MessageBus, store: TripleStore,
                    clock, *, start_at: Optional[datetime] = None, threaded: bool = False) -> QueryStage:
    stage = QueryStage(list(queries), bus, store, clock, start_at or BEGINNING_OF_TIME)
    if threaded:
        stage.start_thread()
    return stage

"""In-process publish/subscribe broker connecting the pipeline stages.

Topics are dotted uppercase names. Ingest topics follow
``INPUT.<ENTITY>.<FORMAT>`` and internal hops ``STAGE.<NAME>`` (optionally
with one more segment, e.g. ``STAGE.RESULTS.HYPERTENSION``). Subscriptions
may use ``*`` to match exactly one segment.

Every subscription owns a bounded FIFO and a worker thread, so handler
calls for one subscription are serialized while different subscriptions
run concurrently. A full queue blocks the publisher.
"""

from __future__ import annotations

import enum
import itertools
import logging
import queue
import re
import threading
from collections import defaultdict, deque
from dataclasses import dataclass
from datetime import datetime
from typing import Callable, Deque, Dict, List, Optional

from .clock import WallClock

log = logging.getLogger(__name__)

DEFAULT_QUEUE_SIZE = 10_000
DEFAULT_RETAIN_LIMIT = 1000

_SEGMENT = re.compile(r"[A-Z][A-Z0-9_]*\Z")
_ids = itertools.count(1)

DLQ_TOPIC = "STAGE.DLQ"
RDF_TOPIC = "STAGE.RDF"
RESULTS_PREFIX = "STAGE.RESULTS"


class BusError(RuntimeError):
    pass


class InvalidTopicName(BusError, ValueError):
    pass


class RoleViolation(BusError, PermissionError):
    pass


class BusUnavailable(BusError):
    pass


class Role(str, enum.Enum):
    INPUT = "INPUT"
    ENCODER = "ENCODER"
    STORE = "STORE"
    QUERY = "QUERY"
    OUTPUT = "OUTPUT"
    APPLICATION = "APPLICATION"


class ContentType(str, enum.Enum):
    PIPE = "PIPE"
    FHIR_JSON = "FHIR_JSON"
    HL7V2 = "HL7V2"
    DOMAIN = "DOMAIN"
    RDF_GRAPH = "RDF_GRAPH"
    RESULT_SET = "RESULT_SET"


def validate_topic(name: str, *, pattern: bool = False) -> str:
    parts = name.split(".") if name else []
    if not 2 <= len(parts) <= 3:
        raise InvalidTopicName(f"topic {name!r} must have 2 or 3 dot-separated segments")
    for part in parts:
        if pattern and part == "*":
            continue
        if not _SEGMENT.match(part):
            raise InvalidTopicName(f"topic {name!r}: segment {part!r} is not an uppercase name")
    if parts[0] == "INPUT" and len(parts) != 3:
        raise InvalidTopicName(f"ingest topic {name!r} must be INPUT.<ENTITY>.<FORMAT>")
    return name


def is_ingest_topic(name: str) -> bool:
    return name.startswith("INPUT.")


def is_stage_topic(name: str) -> bool:
    return name.startswith("STAGE.")


def topic_matches(pattern: str, topic: str) -> bool:
    p, t = pattern.split("."), topic.split(".")
    return len(p) == len(t) and all(a == "*" or a == b for a, b in zip(p, t))


def topic_segment(name: str) -> str:
    """Turn an arbitrary name (e.g. a query name) into a topic segment."""
    seg = re.sub(r"[^A-Z0-9_]", "_", name.upper())
    if not seg or not seg[0].isalpha():
        seg = "Q" + seg
    return seg


def can_publish(role: Role, topic: str) -> bool:
    if role in (Role.OUTPUT, Role.APPLICATION):
        return False
    if role is Role.STORE:
        return is_stage_topic(topic)
    return True


def can_subscribe(role: Role) -> bool:
    return role is not Role.INPUT


@dataclass(frozen=True)
class BusMessage:
    topic: str
    payload: bytes
    content_type: ContentType
    message_id: str
    enqueued_at: datetime
    producer: str = ""
    sequence: int = 0

    def text(self) -> str:
        return self.payload.decode("utf-8")


Handler = Callable[[BusMessage], None]
_STOP = object()


class Subscription:
    """Handle returned by :meth:`MessageBus.subscribe`."""

    def __init__(self, bus: "MessageBus", pattern: str, handler: Handler, name: str, maxsize: int):
        self.bus = bus
        self.pattern = pattern
        self.handler = handler
        self.name = name
        self.delivered = 0
        self.failures = 0
        self._queue: "queue.Queue" = queue.Queue(maxsize)
        self._cancelled = threading.Event()
        self._thread = threading.Thread(target=self._run, name=f"sub-{name or pattern}", daemon=True)
        self._thread.start()

    @property
    def active(self) -> bool:
        return not self._cancelled.is_set()

    def _enqueue(self, msg: BusMessage) -> None:
        if self._cancelled.is_set():
            return
        self.bus._pending_inc()
        self._queue.put(msg)

    def _run(self) -> None:
        # The worker lives until the bus closes; after unsubscribe it only
        # discards, so late deliveries still settle the pending count.
        while True:
            item = self._queue.get()
            if item is _STOP:
                return
            try:
                if not self._cancelled.is_set():
                    self.handler(item)
                    self.delivered += 1
            except Exception:
                self.failures += 1
                self.bus._handler_failed()
                log.exception("handler %s failed on %s", self.name or self.pattern, item.topic)
            finally:
                self.bus._pending_dec()

    def unsubscribe(self) -> None:
        if self._cancelled.is_set():
            return
        self._cancelled.set()
        self.bus._remove(self)

    def _stop(self) -> None:
        self._queue.put(_STOP)
        if threading.current_thread() is not self._thread:
            self._thread.join(timeout=5)


class MessageBus:
    def __init__(self, clock=None, queue_size: int = DEFAULT_QUEUE_SIZE,
                 retain_unsubscribed: bool = False, retain_limit: int = DEFAULT_RETAIN_LIMIT):
        self.clock = clock or WallClock()
        self.queue_size = queue_size
        self.retain_unsubscribed = retain_unsubscribed
        self.retain_limit = retain_limit
        self._subs: List[Subscription] = []
        self._workers: List[Subscription] = []
        self._retained: Dict[str, Deque[BusMessage]] = {}
        self._lock = threading.Lock()
        self._idle = threading.Condition()
        self._pending = 0
        self._closed = False
        self.published: Dict[str, int] = defaultdict(int)
        self.dropped: Dict[str, int] = defaultdict(int)
        self.handler_failures = 0
        self._producer_seq: Dict[str, itertools.count] = defaultdict(lambda: itertools.count(1))

    # bookkeeping used by subscriptions
    def _pending_inc(self) -> None:
        with self._idle:
            self._pending += 1

    def _pending_dec(self) -> None:
        with self._idle:
            self._pending -= 1
            if self._pending == 0:
                self._idle.notify_all()

    def _handler_failed(self) -> None:
        with self._lock:
            self.handler_failures += 1

    def _remove(self, sub: Subscription) -> None:
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)

    # public API
    def endpoint(self, role: Role, name: str = "") -> "Endpoint":
        return Endpoint(self, Role(role), name or role.value.lower())

    def publish(self, topic: str, payload: bytes, content_type: ContentType, *,
                role: Role = Role.ENCODER, producer: str = "") -> BusMessage:
        """Append a message to ``topic``; returns the stamped message as acknowledgement."""
        if self._closed:
            raise BusUnavailable("bus is closed")
        validate_topic(topic)
        role = Role(role)
        if not can_publish(role, topic):
            raise RoleViolation(f"{role.value} components may not publish to {topic}")
        if isinstance(payload, str):
            payload = payload.encode("utf-8")
        if not payload:
            raise ValueError("message payload must be non-empty")
        producer = producer or role.value.lower()
        with self._lock:
            seq = next(self._producer_seq[producer])
            msg = BusMessage(
                topic=topic,
                payload=bytes(payload),
                content_type=ContentType(content_type),
                message_id=f"m{next(_ids):09d}",
                enqueued_at=self.clock.now(),
                producer=producer,
                sequence=seq,
            )
            targets = [s for s in self._subs if topic_matches(s.pattern, topic)]
            self.published[topic] += 1
            if not targets:
                if self.retain_unsubscribed:
                    self._retained.setdefault(topic, deque(maxlen=self.retain_limit)).append(msg)
                else:
                    self.dropped[topic] += 1
        for sub in targets:
            sub._enqueue(msg)
        return msg

    def subscribe(self, pattern: str, handler: Handler, *, role: Role = Role.ENCODER,
                  name: str = "") -> Subscription:
        if self._closed:
            raise BusUnavailable("bus is closed")
        validate_topic(pattern, pattern=True)
        role = Role(role)
        if not can_subscribe(role):
            raise RoleViolation(f"{role.value} components may not subscribe")
        sub = Subscription(self, pattern, handler, name, self.queue_size)
        with self._lock:
            self._subs.append(sub)
            self._workers.append(sub)
            backlog = []
            for topic in list(self._retained):
                if topic_matches(pattern, topic):
                    backlog.extend(self._retained.pop(topic))
        backlog.sort(key=lambda m: m.message_id)
        for msg in backlog:
            sub._enqueue(msg)
        return sub

    def drain(self, timeout: Optional[float] = None) -> bool:
        """Block until every queued message has been handled; False on timeout."""
        with self._idle:
            return self._idle.wait_for(lambda: self._pending == 0, timeout)

    @property
    def subscriptions(self) -> List[Subscription]:
        with self._lock:
            return list(self._subs)

    def close(self) -> None:
        if self._closed:
            return
        self.drain(timeout=30)
        self._closed = True
        with self._lock:
            workers, self._workers = self._workers, []
            self._subs = []
        for sub in workers:
            sub._cancelled.set()
            sub._stop()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class Endpoint:
    """A component's view of the bus, carrying its role."""

    def __init__(self, bus: MessageBus, role: Role, name: str):
        self.bus = bus
        self.role = role
        self.name = name

    def publish(self, topic: str, payload: bytes | str, content_type: ContentType) -> BusMessage:
        return self.bus.publish(topic, payload, content_type, role=self.role, producer=self.name)

    def subscribe(self, pattern: str, handler: Handler) -> Subscription:
        return self.bus.subscribe(pattern, handler, role=self.role, name=self.name)

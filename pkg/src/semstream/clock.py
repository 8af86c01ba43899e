"""Clocks and timestamp helpers.

All timestamps inside the engine are timezone-aware UTC ``datetime`` values
truncated to millisecond precision. Tests and simulated runs use
:class:`VirtualClock`; live runs use :class:`WallClock`.
"""

from __future__ import annotations

import threading
from datetime import datetime, timedelta, timezone
from fractions import Fraction

UTC = timezone.utc

DEFAULT_EPOCH = datetime(2024, 1, 1, tzinfo=UTC)
# Lower bound used for cursors that have never polled.
BEGINNING_OF_TIME = datetime(1970, 1, 1, tzinfo=UTC)


def truncate_ms(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        raise ValueError("naive datetime; engine timestamps must be timezone-aware")
    return ts.replace(microsecond=ts.microsecond - ts.microsecond % 1000)


def utc_ms(ts: datetime) -> datetime:
    return truncate_ms(ts.astimezone(UTC))


def seconds(value: float | Fraction | int) -> timedelta:
    """Convert a (possibly rational) number of seconds to a ms-quantized timedelta."""
    millis = round(Fraction(value) * 1000)
    return timedelta(milliseconds=millis)


def format_timestamp(ts: datetime) -> str:
    """ISO-8601 with millisecond precision; UTC rendered as ``Z``."""
    text = ts.isoformat(timespec="milliseconds")
    if text.endswith("+00:00"):
        text = text[:-6] + "Z"
    return text


def parse_timestamp(text: str) -> datetime:
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        raise ValueError(f"timestamp without offset: {text!r}")
    return ts


class WallClock:
    def now(self) -> datetime:
        return utc_ms(datetime.now(UTC))


class VirtualClock:
    """Manually advanced clock; never moves unless told to."""

    def __init__(self, start: datetime = DEFAULT_EPOCH):
        self.start = utc_ms(start)
        self._now = self.start
        self._lock = threading.Lock()

    def now(self) -> datetime:
        with self._lock:
            return self._now

    def advance(self, delta: timedelta) -> datetime:
        if delta < timedelta(0):
            raise ValueError("virtual clock cannot move backwards")
        with self._lock:
            self._now = self._now + delta
            return self._now

    def set(self, ts: datetime) -> datetime:
        ts = utc_ms(ts)
        with self._lock:
            if ts < self._now:
                raise ValueError("virtual clock cannot move backwards")
            self._now = ts
            return ts


class MonotonicStamp:
    """Serialized ingest-time source: never returns a value smaller than the last."""

    def __init__(self, clock):
        self._clock = clock
        self._last: datetime | None = None
        self._lock = threading.Lock()

    def now(self) -> datetime:
        with self._lock:
            ts = self._clock.now()
            if self._last is not None and ts < self._last:
                ts = self._last
            self._last = ts
            return ts

"""Debugging sinks: one text line per bus message."""

from __future__ import annotations

import sys
import threading
from pathlib import Path
from typing import Optional, TextIO

from ..bus import BusMessage, MessageBus, Role
from ..clock import format_timestamp

SUMMARY_WIDTH = 120
CONSOLE = "-"


class DestinationUnwritable(OSError):
    pass


def summarize(msg: BusMessage, width: int = SUMMARY_WIDTH) -> str:
    text = " ".join(msg.payload.decode("utf-8", errors="replace").split())
    if len(text) > width:
        text = text[: width - 3] + "..."
    return text


def format_line(msg: BusMessage) -> str:
    return f"{format_timestamp(msg.enqueued_at)}\t{msg.topic}\t{summarize(msg)}\n"


class TextSink:
    """Appends messages matching ``pattern`` to a file, or to the console for ``"-"``.

    A sink holds one subscription, so lines keep the bus's publish order
    even when the pattern spans several topics.
    """

    def __init__(self, bus: MessageBus, pattern: str, destination: str | Path = CONSOLE,
                 stream: Optional[TextIO] = None):
        self.pattern = pattern
        self.lines = 0
        self._lock = threading.Lock()
        self._owned = False
        if stream is not None:
            self._out = stream
        elif str(destination) == CONSOLE:
            self._out = sys.stdout
        else:
            try:
                self._out = open(destination, "a", encoding="utf-8")
            except OSError as exc:
                raise DestinationUnwritable(f"cannot write to {destination}: {exc}") from exc
            self._owned = True
        self._sub = bus.endpoint(Role.OUTPUT, "sink").subscribe(pattern, self.handle)

    def handle(self, msg: BusMessage) -> None:
        with self._lock:
            self._out.write(format_line(msg))
            self._out.flush()
            self.lines += 1

    def close(self) -> None:
        self._sub.unsubscribe()
        if self._owned:
            self._out.close()


def sink_to_text(bus: MessageBus, pattern: str, destination: str | Path = CONSOLE) -> TextSink:
    return TextSink(bus, pattern, destination)

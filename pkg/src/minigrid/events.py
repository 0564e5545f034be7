"""Deterministic simulation core: virtual time, timers, message transport.

Virtual time is integer milliseconds from a fixed base instant, so event
ordering is exact.  Due events fire in the total order (timestamp, sender
name, sequence number).  Each node reads time through its own clock, which
applies that node's configured skew; cross-node reads therefore differ by
exactly the skew difference.

The in-process transport encodes every message through the real wire codec
on each hop, delivers after a per-link latency, and exposes drop/corrupt
hooks for fault injection.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Callable, Optional

from .wire import Message

BASE_EPOCH = datetime(2013, 2, 5, 9, 0, 0, tzinfo=timezone.utc)

DEFAULT_LATENCY = 0.010  # seconds of virtual time per message hop


def _ms(seconds: float) -> int:
    return round(seconds * 1000)


@dataclass(frozen=True)
class EventRecord:
    time_ms: int
    sender: str
    seq: int
    label: str

    @property
    def time_s(self) -> float:
        return self.time_ms / 1000.0


@dataclass(order=True)
class _Event:
    time_ms: int
    sender: str
    seq: int
    callback: Callable[[], None] = field(compare=False)
    label: str = field(compare=False, default="")
    cancelled: bool = field(compare=False, default=False)


class EventLoop:
    """Single-threaded discrete-event loop over integer-millisecond time."""

    def __init__(self):
        self.now_ms = 0
        self._seq = 0
        self._heap: list[_Event] = []

    @property
    def now_s(self) -> float:
        return self.now_ms / 1000.0

    def schedule(self, delay_s: float, sender: str,
                 callback: Callable[[], None], label: str = "") -> _Event:
        return self.schedule_at_ms(self.now_ms + max(0, _ms(delay_s)),
                                   sender, callback, label)

    def schedule_at_ms(self, time_ms: int, sender: str,
                       callback: Callable[[], None], label: str = "") -> _Event:
        event = _Event(time_ms=max(time_ms, self.now_ms), sender=sender,
                       seq=self._seq, callback=callback, label=label)
        self._seq += 1
        heapq.heappush(self._heap, event)
        return event

    def cancel(self, event: _Event) -> None:
        event.cancelled = True

    def peek_time_ms(self) -> Optional[int]:
        while self._heap and self._heap[0].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0].time_ms if self._heap else None

    def advance(self, dt_s: float) -> list[EventRecord]:
        """Advance virtual time by ``dt_s``, firing everything that falls due
        (including events newly scheduled inside the window)."""
        return self.advance_to_ms(self.now_ms + max(0, _ms(dt_s)))

    def advance_to_ms(self, target_ms: int) -> list[EventRecord]:
        fired: list[EventRecord] = []
        while True:
            next_ms = self.peek_time_ms()
            if next_ms is None or next_ms > target_ms:
                break
            event = heapq.heappop(self._heap)
            self.now_ms = event.time_ms
            fired.append(EventRecord(event.time_ms, event.sender, event.seq,
                                     event.label))
            event.callback()
        self.now_ms = max(self.now_ms, target_ms)
        return fired

    def run_until(self, pred: Callable[[], bool], timeout_s: float) -> bool:
        """Pump events until ``pred`` holds or virtual ``timeout_s`` elapses."""
        deadline_ms = self.now_ms + _ms(timeout_s)
        while not pred():
            next_ms = self.peek_time_ms()
            if next_ms is None or next_ms > deadline_ms:
                self.advance_to_ms(deadline_ms)
                return pred()
            self.advance_to_ms(next_ms)
        return True


class VirtualClock:
    """Per-node time source: loop time plus this node's skew."""

    def __init__(self, loop: EventLoop, skew_s: float = 0.0):
        self.loop = loop
        self.skew_s = skew_s

    def read(self) -> datetime:
        return BASE_EPOCH + timedelta(seconds=self.loop.now_s + self.skew_s)

    def epoch(self) -> int:
        return int(self.read().timestamp())


Handler = Callable[[Message, str], Optional[Message]]


class Transport:
    """In-process message fabric with wire-codec fidelity on every hop."""

    def __init__(self, loop: EventLoop, latency_s: float = DEFAULT_LATENCY):
        self.loop = loop
        self.latency_s = latency_s
        self.link_latency: dict[tuple[str, str], float] = {}
        self.handlers: dict[str, Handler] = {}
        self.drop_hook: Callable[[str, str], bool] = lambda src, dst: False
        self.corrupt_hook: Callable[[str, Message], Message] = lambda dst, m: m

    def register(self, name: str, handler: Handler) -> None:
        self.handlers[name] = handler

    def _latency(self, src: str, dst: str) -> float:
        return self.link_latency.get((src, dst), self.latency_s)

    def send(self, src: str, dst: str, message: Message,
             on_reply: Callable[[Message], None] | None = None) -> None:
        """One request/reply exchange; either leg can be dropped by faults.

        The handler's return value (if any) travels back to ``on_reply``
        after another latency hop.  A handler returning None sends nothing,
        which is how a dead daemon looks to the caller.
        """
        data = message.encode()

        def deliver():
            if self.drop_hook(src, dst):
                return
            handler = self.handlers.get(dst)
            if handler is None:
                return
            request = self.corrupt_hook(dst, Message.decode(data))
            reply = handler(request, src)
            if reply is None or on_reply is None:
                return
            reply_data = reply.encode()

            def deliver_reply():
                if self.drop_hook(dst, src):
                    return
                on_reply(self.corrupt_hook(src, Message.decode(reply_data)))

            self.loop.schedule(self._latency(dst, src), dst, deliver_reply,
                               label=f"reply:{message.mtype}")

        self.loop.schedule(self._latency(src, dst), src, deliver,
                           label=f"send:{message.mtype}")

    def call(self, src: str, dst: str, message: Message,
             timeout_s: float) -> Message | None:
        """Blocking request/reply: pumps the loop until the reply arrives or
        ``timeout_s`` of virtual time passes (returns None on timeout)."""
        box: list[Message] = []
        self.send(src, dst, message, on_reply=box.append)
        self.loop.run_until(lambda: bool(box), timeout_s)
        return box[0] if box else None

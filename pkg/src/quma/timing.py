"""Timing control unit: timing queue, per-kind event queues and the timing
controller that owns the deterministic clock T_D.

The controller counts cycles since the last time point.  When the count
reaches the interval at the front of the timing queue, that entry's label is
broadcast, the counter restarts on the same cycle, and every event queue fires
the front entries carrying the label.
"""

from __future__ import annotations

from collections import deque
from typing import NamedTuple

__all__ = [
    "CYCLE_NS",
    "DEFAULT_QUEUE_CAPACITY",
    "EVENT_KINDS",
    "QueueFull",
    "SchedulingFault",
    "EventQueue",
    "QueueSet",
    "FiredEvent",
    "TimingController",
]

CYCLE_NS = 5
DEFAULT_QUEUE_CAPACITY = 4096
# firing order within one broadcast: pulses, then measurement pulse, then MD
EVENT_KINDS = ("pulse", "mpg", "md")


class QueueFull(Exception):
    """Producer must retry after the consumer drains an entry."""


class SchedulingFault(RuntimeError):
    """An event or time point missed its cycle."""


class EventQueue:
    __slots__ = ("kind", "capacity", "_q")

    def __init__(self, kind: str, capacity: int = DEFAULT_QUEUE_CAPACITY):
        if capacity < 1:
            raise ValueError("queue capacity must be >= 1")
        self.kind = kind
        self.capacity = capacity
        self._q = deque()

    def __len__(self) -> int:
        return len(self._q)

    def __bool__(self) -> bool:
        return bool(self._q)

    @property
    def full(self) -> bool:
        return len(self._q) >= self.capacity

    @property
    def front(self):
        return self._q[0]

    def push(self, entry) -> None:
        if len(self._q) >= self.capacity:
            raise QueueFull(self.kind)
        self._q.append(entry)

    def pop(self):
        return self._q.popleft()

    def snapshot(self) -> list:
        return list(self._q)


class QueueSet:
    def __init__(self, capacity: int = DEFAULT_QUEUE_CAPACITY):
        self.timing = EventQueue("timing", capacity)
        self.pulse = EventQueue("pulse", capacity)
        self.mpg = EventQueue("mpg", capacity)
        self.md = EventQueue("md", capacity)
        self.by_kind = {"timing": self.timing, "pulse": self.pulse, "mpg": self.mpg, "md": self.md}
        self.enqueued = 0

    def enqueue(self, kind: str, entry) -> None:
        self.by_kind[kind].push(entry)
        self.enqueued += 1

    def can_accept(self, kind: str) -> bool:
        return not self.by_kind[kind].full

    def snapshot(self) -> dict:
        """Queue contents front-first, keyed by kind."""
        return {kind: q.snapshot() for kind, q in self.by_kind.items()}

    def pending_events(self) -> int:
        return len(self.pulse) + len(self.mpg) + len(self.md)

    def empty(self) -> bool:
        return not (self.timing or self.pulse or self.mpg or self.md)


class FiredEvent(NamedTuple):
    cycle: int
    label: int
    kind: str
    entry: tuple


class TimingController:
    def __init__(self, cycle_ns: int = CYCLE_NS):
        self.cycle_ns = cycle_ns
        self.t_d = 0
        self.counter = 0
        self.started = False
        self.trigger = None
        self.last_label = 0

    def start(self, queues: QueueSet, trigger: str = "external") -> list:
        """Start T_D at 0; events carrying label 0 fire immediately."""
        if self.started:
            raise SchedulingFault("timing controller started twice")
        self.started = True
        self.trigger = trigger
        self.t_d = 0
        self.counter = 0
        return self._broadcast(queues, 0)

    def _broadcast(self, queues: QueueSet, label: int) -> list:
        self.last_label = label
        fired = []
        t_d = self.t_d
        for q in (queues.pulse, queues.mpg, queues.md):
            dq = q._q
            while dq:
                front_label = dq[0].label
                if front_label == label:
                    fired.append(FiredEvent(t_d, label, q.kind, dq.popleft()))
                elif front_label < label:
                    raise SchedulingFault(
                        f"{q.kind} event with label {front_label} missed its time point "
                        f"(label {label} broadcast at T_D={t_d})"
                    )
                else:
                    break
        return fired

    def _check_running(self, queues: QueueSet) -> None:
        if not self.started:
            raise SchedulingFault("timing controller not started")
        tq = queues.timing._q
        if tq and self.counter > tq[0].interval:
            raise SchedulingFault(
                f"time point label {tq[0].label} (interval {tq[0].interval}) arrived after "
                f"{self.counter} cycles had already elapsed (timing queue underflow)"
            )

    def tick(self, queues: QueueSet) -> list:
        """Advance T_D by one cycle and fire whatever that cycle broadcasts."""
        self._check_running(queues)
        self.t_d += 1
        self.counter += 1
        tq = queues.timing._q
        if tq:
            interval, label = tq[0]
            if self.counter == interval:
                tq.popleft()
                self.counter = 0
                return self._broadcast(queues, label)
        return []

    def cycles_to_next(self, queues: QueueSet) -> int | None:
        """Cycles until the next broadcast, or ``None`` if the timing queue is empty."""
        self._check_running(queues)
        tq = queues.timing._q
        if not tq:
            return None
        return tq[0].interval - self.counter

    def advance(self, queues: QueueSet, cycles: int) -> list:
        """Equivalent to ``cycles`` calls of :meth:`tick`, without a broadcast in between."""
        if cycles < 0:
            raise ValueError("cannot move T_D backwards")
        if cycles == 0:
            return []
        self._check_running(queues)
        tq = queues.timing._q
        if tq:
            interval, label = tq[0]
            remaining = interval - self.counter
            if cycles > remaining:
                raise SchedulingFault(f"advance({cycles}) would skip the broadcast due in {remaining} cycles")
            self.t_d += cycles
            if cycles == remaining:
                tq.popleft()
                self.counter = 0
                return self._broadcast(queues, label)
            self.counter += cycles
            return []
        self.t_d += cycles
        self.counter += cycles
        return []

    def drain(self, queues: QueueSet, until: int | None = None, watch=None, watch_len: int = 0) -> list:
        """Fire consecutive broadcasts, as :meth:`advance` would one at a time.

        Fires every broadcast up to cycle ``until`` and then moves T_D to
        ``until``.  Without ``until`` it runs until the timing queue is empty
        and leaves T_D on the last broadcast.  It also stops right after a
        broadcast that leaves the deque ``watch`` with at most ``watch_len``
        entries.
        """
        self._check_running(queues)
        tq = queues.timing._q
        kinds = ((queues.pulse._q, "pulse"), (queues.mpg._q, "mpg"), (queues.md._q, "md"))
        fired = []
        append = fired.append
        t_d = self.t_d
        counter = self.counter
        while tq:
            interval, label = tq[0]
            nxt = t_d + interval - counter
            if until is not None and nxt > until:
                break
            tq.popleft()
            t_d = nxt
            counter = 0
            for dq, kind in kinds:
                while dq:
                    front_label = dq[0].label
                    if front_label == label:
                        append(FiredEvent(t_d, label, kind, dq.popleft()))
                    elif front_label < label:
                        self.t_d, self.counter, self.last_label = t_d, 0, label
                        raise SchedulingFault(
                            f"{kind} event with label {front_label} missed its time point "
                            f"(label {label} broadcast at T_D={t_d})"
                        )
                    else:
                        break
            self.last_label = label
            if watch is not None and len(watch) <= watch_len:
                self.t_d = t_d
                self.counter = 0
                return fired
        if until is not None and until > t_d:
            counter += until - t_d
            t_d = until
        self.t_d = t_d
        self.counter = counter
        return fired

    @property
    def time_ns(self) -> int:
        return self.t_d * self.cycle_ns

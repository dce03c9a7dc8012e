"""Clocks driving replication delays: a discrete-event virtual clock and wall time.

Both count integer nanoseconds so that injected delays add up exactly.
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from typing import Callable

NS_PER_MS = 1_000_000


def ms_to_ns(ms: float) -> int:
    return int(round(ms * NS_PER_MS))


class VirtualClock:
    """Deterministic event clock. Time only moves when someone advances it.

    Scheduled callbacks run synchronously, in time order (ties in scheduling
    order), on the thread that advances the clock.
    """

    virtual = True

    def __init__(self, start_ns: int = 0):
        self._now = int(start_ns)
        self._queue: list[tuple[int, int, Callable[[], None]]] = []
        self._seq = itertools.count()
        self._lock = threading.RLock()

    def now_ns(self) -> int:
        return self._now

    def call_later(self, delay_ns: int, fn: Callable[[], None]) -> None:
        with self._lock:
            heapq.heappush(self._queue, (self._now + max(int(delay_ns), 0), next(self._seq), fn))

    def pending(self) -> int:
        return len(self._queue)

    def advance_to(self, t_ns: int) -> None:
        while True:
            with self._lock:
                if not self._queue or self._queue[0][0] > t_ns:
                    self._now = max(self._now, int(t_ns))
                    return
                when, _, fn = heapq.heappop(self._queue)
                self._now = max(self._now, when)
            # callbacks run unlocked so they may take other locks and reschedule
            fn()

    def sleep(self, delay_ns: int) -> None:
        self.advance_to(self._now + max(int(delay_ns), 0))

    def run_until(self, done: Callable[[], bool], timeout_ns: int | None = None) -> bool:
        """Fire events in order until ``done()`` holds or the queue drains."""
        limit = None if timeout_ns is None else self._now + timeout_ns
        while not done():
            with self._lock:
                if not self._queue:
                    return done()
                when = self._queue[0][0]
                if limit is not None and when > limit:
                    self._now = max(self._now, limit)
                    return done()
            self.advance_to(when)
        return True

    def run_until_idle(self) -> None:
        self.run_until(lambda: not self._queue)


class RealClock:
    """Wall-clock time; scheduled callbacks run on timer threads."""

    virtual = False

    def __init__(self):
        self._timers: set[threading.Timer] = set()
        self._cond = threading.Condition()

    def now_ns(self) -> int:
        return time.perf_counter_ns()

    def call_later(self, delay_ns: int, fn: Callable[[], None]) -> None:
        if delay_ns <= 0:
            fn()
            with self._cond:
                self._cond.notify_all()
            return

        def fire():
            try:
                fn()
            finally:
                with self._cond:
                    self._timers.discard(timer)
                    self._cond.notify_all()

        timer = threading.Timer(delay_ns / 1e9, fire)
        timer.daemon = True
        with self._cond:
            self._timers.add(timer)
        timer.start()

    def pending(self) -> int:
        return len(self._timers)

    def sleep(self, delay_ns: int) -> None:
        if delay_ns > 0:
            time.sleep(delay_ns / 1e9)

    def run_until(self, done: Callable[[], bool], timeout_ns: int | None = None) -> bool:
        deadline = None if timeout_ns is None else time.perf_counter_ns() + timeout_ns
        with self._cond:
            while not done():
                if not self._timers:
                    return done()
                wait = 0.05
                if deadline is not None:
                    remaining = (deadline - time.perf_counter_ns()) / 1e9
                    if remaining <= 0:
                        return done()
                    wait = min(wait, remaining)
                self._cond.wait(wait)
            return True

    def run_until_idle(self) -> None:
        self.run_until(lambda: not self._timers)

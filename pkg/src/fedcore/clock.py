"""Injectable microsecond clock; tests substitute a fake."""

from __future__ import annotations

import threading
import time


def now_us() -> int:
    return time.time_ns() // 1000


class FakeClock:
    """Manually-advanced clock for deterministic lease/backoff tests."""

    def __init__(self, start: int = 1_000_000):
        self._now = start
        self._lock = threading.Lock()

    def __call__(self) -> int:
        with self._lock:
            return self._now

    def advance(self, us: int) -> int:
        with self._lock:
            self._now += us
            return self._now

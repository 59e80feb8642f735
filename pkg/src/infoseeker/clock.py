"""Time sources: a wall clock and a deterministic virtual clock."""

from __future__ import annotations

import threading
import time


class WallClock:
    name = "wall"

    def __init__(self) -> None:
        self._origin = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._origin

    def advance_to(self, t: float) -> None:
        # wall time advances on its own
        pass


class VirtualClock:
    """Simulated seconds; only moves when the scheduler advances it."""

    name = "virtual"

    def __init__(self, start: float = 0.0) -> None:
        self._now = start
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._now

    def advance_to(self, t: float) -> None:
        with self._lock:
            if t < self._now:
                raise ValueError(f"virtual clock cannot move backwards ({t} < {self._now})")
            self._now = t


Clock = WallClock | VirtualClock

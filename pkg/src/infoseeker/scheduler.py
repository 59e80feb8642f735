"""Bounded-concurrency wave execution and the step timing model.

A wave runs one batch of subtasks with at most ``budget`` runners in
flight. Queued subtasks are admitted greedily in slot order whenever a
runner finishes. On the virtual clock the same policy is replayed as a
discrete-event simulation, so the reported makespan equals
``makespan_par`` for the same durations exactly.
"""

from __future__ import annotations

import concurrent.futures as cf
import heapq
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

from .clock import Clock, VirtualClock, WallClock
from .core import Status, Subtask, SubtaskResult


@dataclass(frozen=True)
class SchedulerConfig:
    budget: int = 8
    subtask_timeout: float = 300.0
    clock: str = "wall"

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.subtask_timeout <= 0:
            raise ValueError("subtask_timeout must be > 0")
        if self.clock not in ("wall", "virtual"):
            raise ValueError("clock must be 'wall' or 'virtual'")


def makespan_seq(durations: Sequence[float]) -> float:
    total = 0
    for d in durations:
        total = total + d
    return total


def makespan_par(durations: Sequence[float], budget: int) -> float:
    """Makespan of greedy list scheduling in slot order on ``budget`` runners.

    With ``budget >= len(durations)`` this is simply the longest duration.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if not durations:
        return 0
    if budget >= len(durations):
        return max(durations)
    free_at = list(durations[:budget])
    heapq.heapify(free_at)
    for d in durations[budget:]:
        t = heapq.heappop(free_at)
        heapq.heappush(free_at, t + d)
    return max(free_at)


class CancelToken:
    """Cooperative cancellation handle given to each runner.

    Runners may store their best partial answer in ``partial_text`` so a
    timeout can still report it.
    """

    def __init__(self) -> None:
        self._event = threading.Event()
        self.partial_text = ""

    @property
    def cancelled(self) -> bool:
        return self._event.is_set()

    def cancel(self) -> None:
        self._event.set()


Executor = Callable[[Subtask, CancelToken], SubtaskResult]


@dataclass
class Wave:
    results: list[SubtaskResult]
    # offsets relative to the wave start, indexed like results
    starts: list[float] = field(default_factory=list)
    ends: list[float] = field(default_factory=list)
    start_time: float = 0.0
    makespan: float = 0.0
    max_in_flight: int = 0


def _timeout_result(res: SubtaskResult | None, st: Subtask, timeout: float, partial: str) -> SubtaskResult:
    text = partial or ""
    tokens_in = res.tokens_in if res else 0
    tokens_out = res.tokens_out if res else 0
    calls = res.tool_call_count if res else 0
    return SubtaskResult(
        st, Status.TIMEOUT, text, tool_call_count=calls, duration=timeout,
        tokens_in=tokens_in, tokens_out=tokens_out, error=f"timed out after {timeout}s",
    )


class Scheduler:
    def __init__(self, config: SchedulerConfig | None = None, clock: Clock | None = None):
        self.config = config or SchedulerConfig()
        if clock is None:
            clock = VirtualClock() if self.config.clock == "virtual" else WallClock()
        self.clock = clock

    @property
    def virtual(self) -> bool:
        return isinstance(self.clock, VirtualClock)

    def execute_wave(self, subtasks: Sequence[Subtask], executor: Executor, budget: int | None = None) -> Wave:
        if not subtasks:
            raise ValueError("a wave needs at least one subtask")
        budget = budget or self.config.budget
        if budget < 1:
            raise ValueError("budget must be >= 1")
        if self.virtual:
            return self._virtual_wave(list(subtasks), executor, budget)
        return self._wall_wave(list(subtasks), executor, budget)

    def _virtual_wave(self, subtasks: list[Subtask], executor: Executor, budget: int) -> Wave:
        timeout = self.config.subtask_timeout
        origin = self.clock.now()
        n = len(subtasks)
        results: list[SubtaskResult | None] = [None] * n
        starts, ends = [0.0] * n, [0.0] * n
        pending = deque(range(n))
        running: list[tuple[float, int]] = []
        now, in_flight, peak = 0, 0, 0
        while pending or running:
            while pending and in_flight < budget:
                i = pending.popleft()
                self.clock.advance_to(origin + now)
                token = CancelToken()
                res = executor(subtasks[i], token)
                d = res.duration
                if d > timeout:
                    res = _timeout_result(res, subtasks[i], timeout, token.partial_text)
                    d = timeout
                results[i] = res
                starts[i], ends[i] = now, now + d
                heapq.heappush(running, (now + d, i))
                in_flight += 1
                peak = max(peak, in_flight)
            # events in (time, slot) order
            now, _ = heapq.heappop(running)
            in_flight -= 1
        makespan = max(ends)
        self.clock.advance_to(origin + makespan)
        return Wave([r for r in results if r is not None], starts, ends, origin, makespan, peak)

    def _wall_wave(self, subtasks: list[Subtask], executor: Executor, budget: int) -> Wave:
        timeout = self.config.subtask_timeout
        origin = self.clock.now()
        n = len(subtasks)
        results: list[SubtaskResult | None] = [None] * n
        starts, ends = [0.0] * n, [0.0] * n
        tokens = [CancelToken() for _ in range(n)]
        started_at: dict[int, float] = {}
        lock = threading.Lock()
        counter = {"now": 0, "peak": 0}

        def run(i: int) -> SubtaskResult:
            t0 = time.monotonic()
            with lock:
                started_at[i] = t0
                counter["now"] += 1
                counter["peak"] = max(counter["peak"], counter["now"])
            try:
                res = executor(subtasks[i], tokens[i])
            finally:
                with lock:
                    counter["now"] -= 1
            elapsed = time.monotonic() - t0
            return replace(res, duration=max(res.duration, elapsed)) if res.duration == 0 else res

        pool = cf.ThreadPoolExecutor(max_workers=budget, thread_name_prefix="wave")
        try:
            # the pool starts queued work in submission order, i.e. slot order
            futures = {pool.submit(run, i): i for i in range(n)}
            outstanding = set(futures)
            wall0 = time.monotonic()
            while outstanding:
                done, _ = cf.wait(outstanding, timeout=0.02, return_when=cf.FIRST_COMPLETED)
                now = time.monotonic()
                for fut in done:
                    i = futures[fut]
                    outstanding.discard(fut)
                    res = fut.result()
                    starts[i] = started_at[i] - wall0
                    ends[i] = now - wall0
                    if res.duration > timeout:
                        res = _timeout_result(res, subtasks[i], timeout, tokens[i].partial_text)
                    results[i] = res
                for fut in list(outstanding):
                    i = futures[fut]
                    with lock:
                        t0 = started_at.get(i)
                    if t0 is not None and now - t0 > timeout:
                        # the thread keeps its slot until it returns; its late result is dropped
                        tokens[i].cancel()
                        outstanding.discard(fut)
                        starts[i], ends[i] = t0 - wall0, now - wall0
                        results[i] = _timeout_result(None, subtasks[i], timeout, tokens[i].partial_text)
        finally:
            pool.shutdown(wait=False)
        makespan = max(ends) if ends else 0.0
        return Wave([r for r in results if r is not None], starts, ends, origin, makespan, counter["peak"])

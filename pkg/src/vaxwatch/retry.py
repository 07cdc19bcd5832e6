"""Backoff and request pacing shared by source adapters and providers."""

from __future__ import annotations

import random
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Protocol, TypeVar

T = TypeVar("T")


class Clock(Protocol):
    def monotonic(self) -> float: ...

    def sleep(self, seconds: float) -> None: ...


class SystemClock:
    def monotonic(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class VirtualClock:
    """Clock whose ``sleep`` advances time instantly. Records every sleep."""

    def __init__(self, start: float = 0.0):
        self.now = start
        self.sleeps: list[float] = []

    def monotonic(self) -> float:
        return self.now

    def sleep(self, seconds: float) -> None:
        self.sleeps.append(seconds)
        if seconds > 0:
            self.now += seconds


@dataclass(frozen=True)
class BackoffPolicy:
    base: float = 1.0
    factor: float = 2.0
    max_attempts: int = 5

    def delay(self, attempt: int, rng: random.Random) -> float:
        """Full-jitter delay after failed attempt number ``attempt`` (0-based)."""
        return rng.uniform(0.0, self.base * self.factor**attempt)


def with_retries(
    fn: Callable[[], T],
    retry_on: tuple[type[BaseException], ...],
    policy: BackoffPolicy,
    clock: Clock,
    rng: random.Random,
    before_attempt: Callable[[], None] | None = None,
) -> T:
    """Call ``fn`` up to ``policy.max_attempts`` times; re-raise the last error."""
    for attempt in range(policy.max_attempts):
        if before_attempt is not None:
            before_attempt()
        try:
            return fn()
        except retry_on:
            if attempt == policy.max_attempts - 1:
                raise
            clock.sleep(policy.delay(attempt, rng))
    raise AssertionError("unreachable")


class RateLimiter:
    """Sliding-window limiter: at most ``per_minute`` acquisitions in any 60 s."""

    def __init__(self, per_minute: int, clock: Clock | None = None):
        if per_minute < 1:
            raise ValueError("rate limit must be >= 1 request per minute")
        self.per_minute = per_minute
        self.clock = clock or SystemClock()
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            now = self.clock.monotonic()
            while self._stamps and now - self._stamps[0] >= 60.0:
                self._stamps.popleft()
            if len(self._stamps) >= self.per_minute:
                self.clock.sleep(self._stamps[0] + 60.0 - now)
                now = self.clock.monotonic()
                while self._stamps and now - self._stamps[0] >= 60.0:
                    self._stamps.popleft()
            self._stamps.append(now)

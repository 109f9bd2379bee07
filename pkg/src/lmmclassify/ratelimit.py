"""Thread-safe token bucket used as the live-call admission gate."""

from __future__ import annotations

import math
import threading
import time


class TokenBucket:
    """Token bucket refilling continuously at ``rate_per_second``.

    A burst of up to ``capacity`` acquisitions passes immediately; after
    that, acquire() blocks until a token accrues. Safe for use from many
    threads.
    """

    def __init__(self, rate_per_second: float, capacity: int | None = None):
        if rate_per_second <= 0:
            raise ValueError(f"rate must be positive, got {rate_per_second}")
        self.rate = float(rate_per_second)
        self.capacity = capacity if capacity is not None else max(1, math.ceil(rate_per_second))
        self._tokens = float(self.capacity)
        self._last_refill = time.monotonic()
        self._lock = threading.Lock()

    def _refill_locked(self) -> None:
        now = time.monotonic()
        self._tokens = min(
            float(self.capacity),
            self._tokens + (now - self._last_refill) * self.rate,
        )
        self._last_refill = now

    def try_acquire(self) -> bool:
        """Consume a token if one is available; never blocks."""
        with self._lock:
            self._refill_locked()
            if self._tokens >= 1.0:
                self._tokens -= 1.0
                return True
            return False

    def acquire(self) -> None:
        """Block until a token is available, then consume it."""
        while True:
            with self._lock:
                self._refill_locked()
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            # Sleep outside the lock so other threads can refill/acquire.
            time.sleep(wait)

"""Token-bucket admission gate behavior."""

import threading
import time

import pytest

from lmmclassify.ratelimit import TokenBucket


class TestCapacity:
    def test_default_capacity_is_ceil_of_rate(self):
        assert TokenBucket(5.0).capacity == 5
        assert TokenBucket(2.3).capacity == 3

    def test_default_capacity_floor_is_one(self):
        assert TokenBucket(0.25).capacity == 1

    def test_explicit_capacity_wins(self):
        assert TokenBucket(10.0, capacity=2).capacity == 2

    def test_nonpositive_rate_rejected(self):
        with pytest.raises(ValueError):
            TokenBucket(0.0)
        with pytest.raises(ValueError):
            TokenBucket(-1.0)


class TestTryAcquire:
    def test_burst_up_to_capacity_then_denied(self):
        bucket = TokenBucket(1.0, capacity=3)
        assert [bucket.try_acquire() for _ in range(4)] == [True, True, True, False]

    def test_refill_is_capped_at_capacity(self):
        bucket = TokenBucket(1000.0, capacity=2)
        assert bucket.try_acquire() and bucket.try_acquire()
        time.sleep(0.05)  # would accrue ~50 tokens uncapped
        grants = sum(bucket.try_acquire() for _ in range(10))
        assert grants == 2

    def test_token_accrues_over_time(self):
        bucket = TokenBucket(100.0, capacity=1)
        assert bucket.try_acquire()
        assert not bucket.try_acquire()
        time.sleep(0.02)
        assert bucket.try_acquire()


class TestAcquire:
    def test_blocks_until_token_available(self):
        bucket = TokenBucket(20.0, capacity=1)
        bucket.acquire()
        start = time.monotonic()
        bucket.acquire()
        assert time.monotonic() - start >= 0.04  # one token at 20 rps

    def test_many_threads_all_admitted(self):
        bucket = TokenBucket(200.0, capacity=2)
        done = []

        def worker():
            bucket.acquire()
            done.append(1)

        threads = [threading.Thread(target=worker) for _ in range(10)]
        start = time.monotonic()
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        elapsed = time.monotonic() - start
        assert len(done) == 10
        # 2 burst + 8 at 200 rps is at least 40 ms of accrual.
        assert elapsed >= 0.035

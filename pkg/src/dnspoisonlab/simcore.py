"""Deterministic discrete-event engine and counter-based random streams.

Simulated time is an integer count of nanoseconds since scenario start.
Events fire in ``(fire_at, insertion sequence)`` order, so two events at
the same instant are processed first-in first-out.

Randomness comes from :class:`SeededRng`, a SplitMix64 counter generator
keyed by ``(seed, stream)``.  Draw ``i`` of a stream is a pure function of
the key and ``i``, which makes traces reproducible on every platform and
easy to re-implement elsewhere (see ``tests/test_simcore.py`` for the
frozen test vectors).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable

NS_PER_SEC = 1_000_000_000
MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_STREAM_SALT = 0xD1B54A32D192ED03


class SchedulingError(ValueError):
    """Raised when an event is scheduled in the past."""


def seconds(value: float) -> int:
    return int(round(value * NS_PER_SEC))


def millis(value: float) -> int:
    return int(round(value * 1_000_000))


def to_seconds(t: int) -> float:
    return t / NS_PER_SEC


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def mix64(z: int) -> int:
    """SplitMix64 finaliser (Stafford variant 13)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_id(*parts: int) -> int:
    """Fold a tuple of non-negative integers into one 64-bit stream id."""
    h = _STREAM_SALT
    for p in parts:
        h = mix64(h ^ mix64(p + GOLDEN_GAMMA))
    return h


class SplitMix64:
    """Plain SplitMix64 with an explicit 64-bit state."""

    __slots__ = ("state",)

    def __init__(self, state: int):
        self.state = state & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)


class SeededRng:
    """Counter-based random stream identified by ``(seed, stream)``.

    The initial SplitMix64 state is ``mix64(seed ^ mix64(stream ^ salt))``;
    the i-th output is ``mix64(state0 + (i + 1) * GOLDEN_GAMMA)``.
    """

    __slots__ = ("seed", "stream", "_state", "draws")

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self.seed = seed & MASK64
        self.stream = stream & MASK64
        self._state = mix64(self.seed ^ mix64(self.stream ^ _STREAM_SALT))
        self.draws = 0

    def fork(self, *labels: int) -> "SeededRng":
        """Independent child stream; does not consume draws from ``self``."""
        return SeededRng(self.seed, stream_id(self.stream, *labels))

    def next_u64(self) -> int:
        self._state = (self._state + GOLDEN_GAMMA) & MASK64
        self.draws += 1
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform_int(self, lo: int, hi: int) -> int:
        """Unbiased integer in ``[lo, hi]`` by rejection sampling."""
        if lo > hi:
            raise ValueError(f"empty range [{lo}, {hi}]")
        span = hi - lo + 1
        if span == 1:
            return lo
        if span & (span - 1) == 0:
            return lo + (self.next_u64() & (span - 1))
        limit = (1 << 64) - ((1 << 64) % span)
        while True:
            x = self.next_u64()
            if x < limit:
                return lo + x % span

    def bernoulli(self, p: float) -> bool:
        if p <= 0.0:
            return False
        if p >= 1.0:
            return True
        return self.random() < p

    def bernoulli_indices(self, n: int, p: float) -> frozenset[int]:
        """Indices in ``range(n)`` that each succeed independently with probability ``p``.

        Skips ahead by geometric gaps, so the cost is about ``n * p`` draws.
        """
        if p <= 0.0 or n <= 0:
            return frozenset()
        if p >= 1.0:
            return frozenset(range(n))
        log_q = math.log1p(-p)
        out = []
        i = -1
        while True:
            u = 1.0 - self.random()  # (0, 1]
            i += 1 + int(math.log(u) / log_q)
            if i >= n:
                return frozenset(out)
            out.append(i)

    def choice(self, seq):
        return seq[self.uniform_int(0, len(seq) - 1)]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.uniform_int(0, i)
            items[i], items[j] = items[j], items[i]

    def sample_distinct(self, lo: int, hi: int, k: int) -> list[int]:
        """``k`` distinct integers from ``[lo, hi]`` in draw order."""
        if k > hi - lo + 1:
            raise ValueError("sample larger than range")
        seen: set[int] = set()
        out = []
        span = hi - lo + 1
        bits = span.bit_length() - 1
        if span & (span - 1) == 0 and 0 < bits <= 16:
            # several draws per 64-bit word, low bits first
            mask = span - 1
            per_word = 64 // bits
            while len(out) < k:
                x = self.next_u64()
                for _ in range(per_word):
                    v = lo + (x & mask)
                    x >>= bits
                    if v not in seen:
                        seen.add(v)
                        out.append(v)
                        if len(out) == k:
                            break
            return out
        while len(out) < k:
            v = self.uniform_int(lo, hi)
            if v not in seen:
                seen.add(v)
                out.append(v)
        return out

    def poisson(self, mu: float) -> int:
        """Poisson variate; inversion for small means, PTRS (Hormann 1993) above 10."""
        if mu < 0:
            raise ValueError("negative Poisson mean")
        if mu == 0:
            return 0
        if mu < 10.0:
            u = self.random()
            k = 0
            p = math.exp(-mu)
            cdf = p
            while u > cdf:
                k += 1
                p *= mu / k
                cdf += p
                if p == 0.0:
                    break
            return k
        slam = math.sqrt(mu)
        loglam = math.log(mu)
        b = 0.931 + 2.53 * slam
        a = -0.059 + 0.02483 * b
        invalpha = 1.1239 + 1.1328 / (b - 3.4)
        vr = 0.9277 - 3.6224 / (b - 2)
        while True:
            u = self.random() - 0.5
            v = self.random()
            us = 0.5 - abs(u)
            k = math.floor((2 * a / us + b) * u + mu + 0.43)
            if us >= 0.07 and v <= vr:
                return k
            if k < 0 or (us < 0.013 and v > us):
                continue
            if (math.log(v) + math.log(invalpha) - math.log(a / (us * us) + b)
                    <= -mu + k * loglam - math.lgamma(k + 1)):
                return k


def draw_uniform(rng: SeededRng, lo: int, hi: int) -> int:
    return rng.uniform_int(lo, hi)


# ---------------------------------------------------------------------------
# Event engine
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Event:
    fire_at: int
    seq: int
    target: Hashable
    payload: Any
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True


@dataclass
class Engine:
    """Single-threaded event loop.

    Targets are registered handlers ``handler(engine, event)``.  Set
    ``record_trace`` to keep ``(time, seq, target, payload type)`` tuples
    for determinism checks.
    """

    now: int = 0
    record_trace: bool = False
    trace: list = field(default_factory=list)
    _queue: list = field(default_factory=list, repr=False)
    _seq: int = 0
    _handlers: dict = field(default_factory=dict, repr=False)
    _stopped: bool = False
    processed: int = 0

    def register(self, target: Hashable, handler: Callable[["Engine", Event], None]) -> None:
        self._handlers[target] = handler

    def schedule(self, fire_at: int, target: Hashable, payload: Any = None) -> Event:
        if fire_at < self.now:
            raise SchedulingError(f"event at {fire_at} is before now={self.now}")
        ev = Event(fire_at, self._seq, target, payload)
        self._seq += 1
        heapq.heappush(self._queue, (fire_at, ev.seq, ev))
        return ev

    def schedule_in(self, delay: int, target: Hashable, payload: Any = None) -> Event:
        return self.schedule(self.now + delay, target, payload)

    def stop(self) -> None:
        """Stop the current ``run_until`` after the event being processed."""
        self._stopped = True

    @property
    def stopped(self) -> bool:
        return self._stopped

    def pending(self) -> int:
        return sum(1 for _, _, ev in self._queue if not ev.cancelled)

    def run_until(self, deadline: int) -> int:
        count = 0
        q = self._queue
        handlers = self._handlers
        self._stopped = False
        while q and q[0][0] <= deadline:
            fire_at, _, ev = heapq.heappop(q)
            if ev.cancelled:
                continue
            self.now = fire_at
            if self.record_trace:
                self.trace.append((fire_at, ev.seq, ev.target, type(ev.payload).__name__))
            handlers[ev.target](self, ev)
            count += 1
            if self._stopped:
                self.processed += count
                return count
        if deadline > self.now:
            self.now = deadline
        self.processed += count
        return count

    def run(self, max_time: int = 1 << 62) -> int:
        """Drain the queue (bounded by ``max_time``) without advancing to the bound."""
        count = 0
        q = self._queue
        handlers = self._handlers
        self._stopped = False
        while q and q[0][0] <= max_time:
            fire_at, _, ev = heapq.heappop(q)
            if ev.cancelled:
                continue
            self.now = fire_at
            if self.record_trace:
                self.trace.append((fire_at, ev.seq, ev.target, type(ev.payload).__name__))
            handlers[ev.target](self, ev)
            count += 1
            if self._stopped:
                break
        self.processed += count
        return count

"""Discrete-event engine and an idealised broadcast medium.

Events fire in ``(time, sequence)`` order, so equal-time events run in the
order they were scheduled.  The medium has no collisions: a transmission
reaches every node within range at transmission time after a jittered
per-kind latency, each copy independently dropped with ``loss_probability``.
"""

from __future__ import annotations

import enum
import heapq
import io
import math
import random
from collections import Counter
from dataclasses import dataclass, field


class MsgKind(str, enum.Enum):
    AGG_REQUEST_FLOOD = "AGG_REQUEST_FLOOD"
    PUSH = "PUSH"
    TOKEN_ANNOUNCE = "TOKEN_ANNOUNCE"
    TOKEN_REQUEST = "TOKEN_REQUEST"
    TOKEN_TRANSFER = "TOKEN_TRANSFER"
    RESULT_FLOOD = "RESULT_FLOOD"
    TREE_REQUEST = "TREE_REQUEST"
    TREE_DATA = "TREE_DATA"
    TREE_ACK = "TREE_ACK"

    def __str__(self) -> str:
        return self.value


MESSAGE_KINDS = tuple(MsgKind)


@dataclass(frozen=True)
class Message:
    kind: MsgKind
    sender: int
    payload: object = None
    tx_time: float = 0.0


@dataclass(frozen=True)
class Event:
    fire_time: float
    sequence: int
    kind: str
    payload: object = None


class Simulator:
    """Heap-backed event loop.

    Daemon events (mobility ticks) do not keep a run alive: :meth:`run` returns
    once only daemon events remain.
    """

    def __init__(self):
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self._live = 0
        self.processed = 0

    def schedule(self, delay: float, callback, *args, daemon: bool = False) -> int:
        return self.schedule_at(self.now + delay, callback, *args, daemon=daemon)

    def schedule_at(self, time: float, callback, *args, daemon: bool = False) -> int:
        if time < self.now:
            raise ValueError(f"cannot schedule in the past ({time} < {self.now})")
        seq = self._seq
        self._seq += 1
        if not daemon:
            self._live += 1
        heapq.heappush(self._heap, (time, seq, daemon, callback, args))
        return seq

    @property
    def pending(self) -> int:
        return self._live

    def run(self, horizon: float = math.inf, stop=None) -> tuple[float, bool]:
        """Process events until ``stop()`` is true, no live events remain, or the
        horizon passes.  Returns ``(time, timed_out)``."""
        heap = self._heap
        while heap:
            if stop is not None and stop():
                return self.now, False
            if self._live == 0:
                return self.now, False
            time, _, daemon, callback, args = heap[0]
            if time > horizon:
                self.now = horizon
                return horizon, True
            heapq.heappop(heap)
            if not daemon:
                self._live -= 1
            self.now = time
            self.processed += 1
            callback(*args)
        if math.isfinite(horizon) and (stop is None or not stop()):
            self.now = max(self.now, horizon)
        return self.now, False

    def events(self) -> list[Event]:
        return [Event(t, s, getattr(cb, "__name__", "event"), a) for t, s, _, cb, a in sorted(self._heap)]


def run_until(sim: Simulator, predicate=None, horizon: float = math.inf) -> tuple[float, bool]:
    return sim.run(horizon=horizon, stop=predicate)


# One transaction is ~25 ms: announce 8 ms, request window 9 ms, transfer 8 ms.
# Requests are short control frames; carrier sensing leaves roughly one MAC
# slot in which two requesters can miss each other.
DEFAULT_LATENCY = {MsgKind.TOKEN_REQUEST: 0.00002}


@dataclass(frozen=True)
class MediumConfig:
    latency: float = 0.008
    jitter: float = 0.2
    loss_probability: float = 0.0
    per_kind_latency: dict = field(default_factory=lambda: dict(DEFAULT_LATENCY))

    def validate(self) -> None:
        if not self.latency > 0:
            raise ValueError("latency must be > 0")
        if not 0 <= self.jitter < 1:
            raise ValueError("jitter must lie in [0, 1)")
        if not 0 <= self.loss_probability < 1:
            raise ValueError("loss_probability must lie in [0, 1)")

    def mean_latency(self, kind) -> float:
        return self.per_kind_latency.get(kind, self.latency)

    def max_latency(self, kind) -> float:
        return self.mean_latency(kind) * (1 + self.jitter)


class EventLog:
    """CSV trace: ``time,action,kind,sender,receiver`` (receiver ``*`` = broadcast)."""

    header = "time,action,kind,sender,receiver"

    def __init__(self):
        self.rows: list[tuple] = []

    def add(self, time, action, kind, sender, receiver) -> None:
        self.rows.append((time, action, str(kind), sender, receiver))

    def message_counts(self) -> Counter:
        return Counter(kind for _, action, kind, _, _ in self.rows if action == "tx")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(self.header + "\n")
        for t, action, kind, s, r in self.rows:
            buf.write(f"{t:.6f},{action},{kind},{s},{r}\n")
        return buf.getvalue()


class Medium:
    """Local broadcast over the world's current disk graph."""

    def __init__(self, sim: Simulator, world, config: MediumConfig | None = None, rng: random.Random | None = None, log: EventLog | None = None):
        self.sim = sim
        self.world = world
        self.config = config or MediumConfig()
        self.config.validate()
        self.rng = rng or random.Random(0)
        self.log = log
        self.counts: Counter = Counter()

    def _delay(self, kind) -> float:
        j = self.config.jitter
        mean = self.config.mean_latency(kind)
        return mean * (1 - j + 2 * j * self.rng.random()) if j else mean

    def _survivors(self, receivers: list[int]) -> list[int]:
        p = self.config.loss_probability
        if p <= 0:
            return receivers
        rnd = self.rng.random
        return [r for r in receivers if rnd() >= p]

    def broadcast(self, sender: int, kind: MsgKind, payload, handler) -> list[int]:
        """Count one message and deliver ``handler(receiver, sender, payload)``
        to every surviving neighbor.  Returns the receivers that will get it."""
        self.counts[kind] += 1
        receivers = self._survivors(self.world.neighbors(sender))
        if self.log is not None:
            self.log.add(self.sim.now, "tx", kind, sender, "*")
        if receivers:
            self.sim.schedule(self._delay(kind), self._deliver, kind, sender, receivers, payload, handler)
        return receivers

    def unicast(self, sender: int, dest: int, kind: MsgKind, payload, handler) -> bool:
        """Broadcast heard only by ``dest``; False if it is out of range or lost."""
        self.counts[kind] += 1
        if self.log is not None:
            self.log.add(self.sim.now, "tx", kind, sender, dest)
        nbrs = self.world.neighbors(sender)
        ok = dest in nbrs and (self.config.loss_probability <= 0 or self.rng.random() >= self.config.loss_probability)
        if ok:
            self.sim.schedule(self._delay(kind), self._deliver, kind, sender, [dest], payload, handler)
        return ok

    def _deliver(self, kind, sender, receivers, payload, handler) -> None:
        log = self.log
        for r in receivers:
            if log is not None:
                log.add(self.sim.now, "rx", kind, sender, r)
            handler(r, sender, payload)

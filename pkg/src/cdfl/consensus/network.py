"""Discrete-event message transport under partial synchrony.

Logical time only. Before the global stabilization time (GST), deliveries
are delayed by an arbitrary bounded amount and may be dropped or reordered;
from GST on, every send arrives within ``delta`` ticks and nothing is lost.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np


@dataclass
class NetworkModel:
    delta: int = 4  # post-GST delay bound
    gst: int = 0
    pre_gst_max_delay: int = 40
    drop_rate: float = 0.0  # applies before GST only


@dataclass(order=True)
class _Event:
    tick: int
    seq: int
    receiver: str = field(compare=False)
    message: object = field(compare=False)


class SimNetwork:
    def __init__(self, model: NetworkModel, rng: np.random.Generator):
        self.model = model
        self.rng = rng
        self._queue: list[_Event] = []
        self._seq = itertools.count()
        self.sent = 0
        self.dropped = 0

    def _delay(self, now: int) -> int | None:
        m = self.model
        if now >= m.gst:
            return 1 + int(self.rng.integers(0, max(m.delta, 1)))
        if m.drop_rate > 0 and self.rng.random() < m.drop_rate:
            return None
        raw = 1 + int(self.rng.integers(0, max(m.pre_gst_max_delay, 1)))
        # Sends straddling GST still satisfy the post-GST bound.
        return min(raw, m.gst - now + m.delta)

    def send(self, receiver: str, message, now: int, extra_delay: int = 0) -> None:
        self.sent += 1
        delay = self._delay(now)
        if delay is None:
            self.dropped += 1
            return
        event = _Event(tick=now + delay + extra_delay, seq=next(self._seq), receiver=receiver, message=message)
        heapq.heappush(self._queue, event)

    def schedule(self, receiver: str, message, tick: int) -> None:
        """Timer-style self-delivery at an absolute tick."""
        heapq.heappush(
            self._queue, _Event(tick=tick, seq=next(self._seq), receiver=receiver, message=message)
        )

    def pop(self) -> _Event | None:
        if not self._queue:
            return None
        return heapq.heappop(self._queue)

    def __len__(self) -> int:
        return len(self._queue)

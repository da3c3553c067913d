"""Neighbor message passing with a one-sample delivery delay."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError

CURRENT = "current"
NOTIFICATION = "attack_notification"


@dataclass(frozen=True)
class CommGraph:
    """Directed links as ``(receiver, sender)`` pairs over converters ``0..k-1``."""

    k: int
    links: tuple

    def __post_init__(self):
        links = tuple(sorted({(int(r), int(s)) for r, s in self.links}))
        object.__setattr__(self, "links", links)
        for r, s in links:
            if r == s:
                raise ConfigError(f"self-link on converter {r}")
            if not (0 <= r < self.k and 0 <= s < self.k):
                raise ConfigError(f"link ({r}, {s}) outside 0..{self.k - 1}")
        for r in range(self.k):
            if not self.inbound(r):
                raise ConfigError(f"converter {r} has no inbound link")

    @classmethod
    def ring(cls, k: int) -> "CommGraph":
        if k < 2:
            raise ConfigError("a ring needs at least two converters")
        links = set()
        for r in range(k):
            links.add((r, (r - 1) % k))
            links.add((r, (r + 1) % k))
        return cls(k, tuple(links))

    @classmethod
    def full(cls, k: int) -> "CommGraph":
        return cls(k, tuple((r, s) for r in range(k) for s in range(k) if r != s))

    @classmethod
    def from_name(cls, name: str, k: int) -> "CommGraph":
        if name == "ring":
            return cls.ring(k)
        if name == "full":
            return cls.full(k)
        raise ConfigError(f"unknown topology {name!r} (expected 'ring' or 'full')")

    def inbound(self, receiver: int) -> list:
        return [s for r, s in self.links if r == receiver]

    def outbound(self, sender: int) -> list:
        return [r for r, s in self.links if s == sender]

    @property
    def degree(self) -> int:
        """Inbound link count, required to be the same for every converter."""
        degrees = {len(self.inbound(r)) for r in range(self.k)}
        if len(degrees) != 1:
            raise ConfigError("converters must all have the same inbound degree")
        return degrees.pop()

    @cached_property
    def _slots(self) -> dict:
        return {(r, s): self.inbound(r).index(s) for r, s in self.links}

    def slot(self, receiver: int, sender: int) -> int:
        """Position of ``sender`` in the receiver's inbound list."""
        try:
            return self._slots[(receiver, sender)]
        except KeyError:
            raise ConfigError(f"no link {sender} -> {receiver}") from None

    def inbound_matrix(self) -> np.ndarray:
        """``(k, degree)`` array of sender ids, row = receiver."""
        return np.array([self.inbound(r) for r in range(self.k)], dtype=int)


@dataclass(frozen=True)
class CommMessage:
    sender: int
    receiver: int
    value: float
    sample_index: int
    kind: str = CURRENT
    channel: str | None = None


def broadcast(graph: CommGraph, sender: int, value: float, sample_index: int,
              kind: str = CURRENT, channel: str | None = None) -> list:
    """One message per outbound link of ``sender``."""
    if not 0 <= sender < graph.k:
        raise ConfigError(f"unknown sender {sender}")
    return [CommMessage(sender, r, float(value), sample_index, kind, channel)
            for r in graph.outbound(sender)]


@dataclass
class CommBus:
    """Queue of in-flight messages; anything sent at sample n arrives at n + 1."""

    graph: CommGraph
    _queue: list = field(default_factory=list)

    def broadcast(self, sender, value, sample_index, kind=CURRENT, channel=None) -> list:
        msgs = broadcast(self.graph, sender, value, sample_index, kind, channel)
        self._queue.extend(msgs)
        return msgs

    def deliver(self, sample_index: int) -> list:
        """Pop messages due at ``sample_index`` in (sent index, sender) order."""
        due = [m for m in self._queue if m.sample_index + 1 <= sample_index]
        self._queue = [m for m in self._queue if m.sample_index + 1 > sample_index]
        due.sort(key=lambda m: (m.sample_index, m.sender, m.receiver))
        return due

    def pending(self) -> int:
        return len(self._queue)


def average_received(local_i: float, inbox) -> float:
    """Mean of the local current and every received neighbor current."""
    values = [float(v) for v in inbox]
    return (float(local_i) + sum(values)) / (1 + len(values))


def inbox_matrix(graph: CommGraph, messages, previous: np.ndarray) -> np.ndarray:
    """Current values laid out as ``(receiver, slot)``.

    Slots with no fresh message keep the previous value (zero-order hold).
    """
    out = previous.copy()
    for m in messages:
        if m.kind == CURRENT:
            out[m.receiver, graph.slot(m.receiver, m.sender)] = m.value
    return out

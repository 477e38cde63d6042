"""Deterministic tick-driven message fabric.

One tick is one heartbeat interval. Every envelope enqueued at tick t is
delivered at t+1, and all envelopes due at the same tick are handed over in a
fixed order (src, dst, enqueue sequence), so two runs over identical inputs
produce identical delivery sequences. Links may carry passive taps that copy
traffic without altering delivery; sealed envelopes expose metadata only.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .errors import ScenarioError

GOSSIP = "gossip"
RPC = "rpc"


class SimClock:
    """Monotonic tick counter, advanced only by Network.step()."""

    def __init__(self) -> None:
        self.tick = 0

    def advance(self) -> int:
        self.tick += 1
        return self.tick


@dataclass
class Envelope:
    src: int
    dst: int
    channel: str
    payload: dict
    deliver_at: int
    seq: int
    sealed: bool = False
    seal_key: Optional[str] = None  # gossip key id the sender sealed with
    cert: Any = None                # sender certificate riding the rpc channel

    def tap_view(self) -> dict:
        """What a passive capture reveals. Sealed payloads are opaque."""
        view = {
            "src": self.src,
            "dst": self.dst,
            "channel": self.channel,
            "deliver_at": self.deliver_at,
            "sealed": self.sealed,
        }
        if not self.sealed:
            view["payload"] = copy.deepcopy(self.payload)
        return view


@dataclass
class Tap:
    tap_id: int
    link: tuple  # unordered endpoint pair, stored sorted
    captured: list = field(default_factory=list)


class Network:
    """Point-to-point links with unit latency, no loss, and passive taps."""

    def __init__(self) -> None:
        self.clock = SimClock()
        self._known: set[int] = set()
        self._pending: dict[int, list[Envelope]] = {}
        self._seq = 0
        self._taps: dict[int, Tap] = {}
        self._next_tap_id = 0
        # conservation counters: every send ends as exactly one of the others
        self.sent = 0
        self.delivered = 0
        self.dropped_dead = 0

    @property
    def tick(self) -> int:
        return self.clock.tick

    def register_node(self, node_id: int) -> None:
        self._known.add(node_id)

    def send(self, src: int, dst: int, channel: str, payload: dict,
             sealed: bool = False, seal_key: Optional[str] = None,
             cert: Any = None) -> Envelope:
        if src not in self._known or dst not in self._known:
            raise ScenarioError(f"send between unknown nodes {src}->{dst}")
        env = Envelope(src=src, dst=dst, channel=channel, payload=payload,
                       deliver_at=self.tick + 1, seq=self._seq,
                       sealed=sealed, seal_key=seal_key, cert=cert)
        self._seq += 1
        self._pending.setdefault(env.deliver_at, []).append(env)
        self.sent += 1
        link = (src, dst) if src <= dst else (dst, src)
        for tap in self._taps.values():
            if tap.link == link:
                tap.captured.append(env.tap_view())
        return env

    def step(self, deliverable: Callable[[int], bool]) -> list[tuple[int, Envelope]]:
        """Advance one tick and return (dst, envelope) pairs due now.

        Envelopes addressed to nodes for which deliverable() is false are
        dropped silently (crashed recipient).
        """
        now = self.clock.advance()
        due = self._pending.pop(now, [])
        due.sort(key=lambda e: (e.src, e.dst, e.seq))
        out = []
        for env in due:
            if deliverable(env.dst):
                out.append((env.dst, env))
                self.delivered += 1
            else:
                self.dropped_dead += 1
        return out

    def attach_tap(self, a: int, b: int) -> int:
        if a not in self._known or b not in self._known:
            raise ScenarioError(f"tap on unknown link ({a},{b})")
        tap_id = self._next_tap_id
        self._next_tap_id += 1
        self._taps[tap_id] = Tap(tap_id=tap_id, link=(a, b) if a <= b else (b, a))
        return tap_id

    def read_tap(self, tap_id: int) -> list[dict]:
        if tap_id not in self._taps:
            raise ScenarioError(f"unknown tap id {tap_id}")
        return list(self._taps[tap_id].captured)

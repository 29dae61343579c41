"""Deterministic in-process message bus with a virtual clock.

Every directed link owns a FIFO queue: a message never overtakes an
earlier one on the same link, including across the single retry granted
when the destination is down. All randomness comes from one seeded
generator, so a fixed seed replays the exact delivery schedule.
"""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field
from collections import deque
from typing import Callable

from ..chain.encoding import WireMessage

MessageHandler = Callable[[WireMessage, float], None]
TickHandler = Callable[[float], None]

DELIVERED = "delivered"
FAILED = "failed"
PENDING = "pending"


@dataclass(frozen=True)
class LatencyModel:
    base_ms: float = 5.0
    jitter_ms: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.base_ms < 0 or self.jitter_ms < 0:
            raise ValueError("latency parameters must be >= 0")


@dataclass
class Receipt:
    peer: str
    status: str = PENDING
    attempts: int = 0


@dataclass
class _Queued:
    msg: WireMessage
    ready_at: float
    receipt: Receipt
    attempts: int = 0


@dataclass
class _Node:
    on_message: MessageHandler
    on_tick: TickHandler | None = None
    down: bool = False


class SimNetwork:
    """Fully connected virtual network among joined nodes."""

    def __init__(self, latency: LatencyModel | None = None, tick_ms: float = 10.0):
        self.latency = latency or LatencyModel()
        self.tick_ms = tick_ms
        self.now = 0.0
        self._rng = random.Random(self.latency.seed)
        self._nodes: dict[str, _Node] = {}
        self._links: dict[tuple[str, str], deque[_Queued]] = {}
        self._events: list[tuple[float, int, tuple]] = []
        self._seq = itertools.count()
        self.delivery_log: list[tuple[float, str, str, int]] = []

    # -- membership ------------------------------------------------------

    def join(
        self,
        node_id: str,
        on_message: MessageHandler,
        on_tick: TickHandler | None = None,
    ) -> None:
        if node_id in self._nodes:
            raise ValueError(f"node {node_id!r} already joined")
        self._nodes[node_id] = _Node(on_message=on_message, on_tick=on_tick)
        if on_tick is not None:
            self._push(self.now + self.tick_ms, ("tick", node_id))

    def set_down(self, node_id: str, down: bool) -> None:
        self._nodes[node_id].down = down
        if not down:
            # links toward a recovered node may hold ready messages
            for (src, dst), queue in self._links.items():
                if dst == node_id and queue:
                    self._push(max(self.now, queue[0].ready_at), ("link", src, dst))

    @property
    def node_ids(self) -> list[str]:
        return list(self._nodes)

    # -- sending ---------------------------------------------------------

    def send(self, sender: str, dest: str, msg: WireMessage) -> Receipt:
        if dest not in self._nodes:
            return Receipt(peer=dest, status=FAILED)
        delay = self.latency.base_ms + self._rng.random() * self.latency.jitter_ms
        receipt = Receipt(peer=dest)
        queue = self._links.setdefault((sender, dest), deque())
        queue.append(_Queued(msg=msg, ready_at=self.now + delay, receipt=receipt))
        if len(queue) == 1:
            self._push(queue[0].ready_at, ("link", sender, dest))
        return receipt

    def broadcast(self, sender: str, msg: WireMessage) -> list[Receipt]:
        return [
            self.send(sender, dest, msg) for dest in self._nodes if dest != sender
        ]

    # -- clock -----------------------------------------------------------

    def _push(self, at: float, event: tuple) -> None:
        heapq.heappush(self._events, (at, next(self._seq), event))

    def _service_link(self, src: str, dst: str) -> None:
        queue = self._links.get((src, dst))
        if not queue:
            return
        item = queue[0]
        if item.ready_at > self.now:
            self._push(item.ready_at, ("link", src, dst))
            return
        node = self._nodes[dst]
        if node.down:
            item.attempts += 1
            if item.attempts > 1:
                item.receipt.status = FAILED
                item.receipt.attempts = item.attempts
                queue.popleft()
            else:
                # one retry; everything behind waits so FIFO order holds
                item.ready_at = self.now + self.latency.base_ms
            if queue:
                self._push(max(self.now, queue[0].ready_at), ("link", src, dst))
            return
        queue.popleft()
        item.receipt.status = DELIVERED
        item.receipt.attempts = item.attempts + 1
        self.delivery_log.append((self.now, src, dst, int(item.msg.kind)))
        node.on_message(item.msg, self.now)
        if queue:
            self._push(max(self.now, queue[0].ready_at), ("link", src, dst))

    def _dispatch(self, event: tuple) -> None:
        if event[0] == "tick":
            node = self._nodes[event[1]]
            if node.on_tick is not None:
                if not node.down:
                    node.on_tick(self.now)
                self._push(self.now + self.tick_ms, ("tick", event[1]))
        else:
            _, src, dst = event
            self._service_link(src, dst)

    def run_for(self, duration_ms: float) -> None:
        self.run_until(lambda: False, duration_ms)

    def run_until(self, cond: Callable[[], bool], max_ms: float) -> bool:
        """Advance the clock until cond() or the time budget runs out."""
        deadline = self.now + max_ms
        if cond():
            return True
        while self._events and self._events[0][0] <= deadline:
            at, _, event = heapq.heappop(self._events)
            self.now = max(self.now, at)
            self._dispatch(event)
            if cond():
                return True
        self.now = deadline
        return cond()

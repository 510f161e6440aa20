"""Topic-based publish/subscribe broker on the simulated clock."""

from __future__ import annotations

import heapq
import random
from collections import deque
from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Optional, Sequence

from ..messages import DENM_MAX_BYTES, VAM_MAX_BYTES, MessageEnvelope, MessageKind, NodeId
from .latency import LinkLatencyModel

DEFAULT_VAM_HZ = 10.0
DEFAULT_DENM_HZ = 5.0
RATE_WINDOW_MS = 1000.0


class BrokerError(Exception):
    pass


class UnknownClient(BrokerError):
    pass


class OversizedPayload(BrokerError):
    pass


class RateViolation(BrokerError):
    pass


class CausalityError(BrokerError):
    pass


@dataclass(frozen=True, slots=True)
class Subscription:
    client: NodeId
    topics: frozenset


@dataclass(slots=True)
class DeliveryEvent:
    envelope: MessageEnvelope
    recipient: NodeId
    publish_time_ms: float
    delivery_time_ms: float
    hops: tuple[tuple[str, float], ...]

    @property
    def time(self) -> float:
        return self.delivery_time_ms

    @property
    def latency_ms(self) -> float:
        return self.delivery_time_ms - self.publish_time_ms


@dataclass(slots=True)
class DropEvent:
    envelope: MessageEnvelope
    recipient: NodeId
    time: float
    link: str


def enforce_frequency(history: deque, now_ms: float, max_hz: float,
                      window_ms: float = RATE_WINDOW_MS) -> bool:
    """Admit a publication iff fewer than ``max_hz`` were admitted in the
    trailing window ``(now - window, now]``. Admitted times are appended."""
    if max_hz <= 0:
        raise ValueError("max_hz must be positive")
    while history and history[0] <= now_ms - window_ms:
        history.popleft()
    if len(history) < max_hz:
        history.append(now_ms)
        return True
    return False


class RateLimiter:
    """Per-sender sliding-window caps, one window per message kind.

    Only user equipment is limited; infrastructure senders (string node ids)
    are exempt.
    """

    def __init__(self, vam_hz: float = DEFAULT_VAM_HZ, denm_hz: float = DEFAULT_DENM_HZ):
        self.caps = {MessageKind.VAM: vam_hz, MessageKind.DENM: denm_hz}
        self._windows: dict[tuple[Hashable, MessageKind], deque] = {}
        self.rejected = 0

    def admit(self, sender: Hashable, kind: MessageKind, now_ms: float) -> bool:
        if isinstance(sender, str):
            return True
        window = self._windows.get((sender, kind))
        if window is None:
            window = self._windows[(sender, kind)] = deque()
        ok = enforce_frequency(window, now_ms, self.caps[kind])
        if not ok:
            self.rejected += 1
        return ok


Route = Callable[[MessageEnvelope, NodeId, object], Sequence[str]]

SIZE_LIMITS = {MessageKind.VAM: VAM_MAX_BYTES, MessageKind.DENM: DENM_MAX_BYTES}


class Broker:
    """Exact-match topic broker.

    ``route(envelope, recipient, attach)`` names the chain of links a
    delivery traverses; ``attach`` is whatever the recipient registered with
    (its access edge, typically). Each hop's latency is sampled independently
    and a dropped hop ends the delivery.
    """

    def __init__(self, links: dict[str, LinkLatencyModel], route: Route,
                 limiter: Optional[RateLimiter] = None, name: str = "broker"):
        self.name = name
        self.links = dict(links)
        self.route = route
        self.limiter = limiter
        self._topics: dict[object, dict[NodeId, None]] = {}
        self._subs: dict[NodeId, set] = {}
        self._attach: dict[NodeId, object] = {}
        self._fixed_hops: dict[tuple[str, ...], tuple[tuple[str, float], ...]] = {}
        self.published = 0
        self.dropped = 0

    # -- membership --------------------------------------------------------

    def register(self, client: NodeId, attach: object = None) -> None:
        self._subs.setdefault(client, set())
        self._attach[client] = attach

    def set_attach(self, client: NodeId, attach: object) -> None:
        if client not in self._subs:
            raise UnknownClient(client)
        self._attach[client] = attach

    def is_registered(self, client: NodeId) -> bool:
        return client in self._subs

    def deregister(self, client: NodeId) -> None:
        self.unsubscribe(client)
        self._subs.pop(client, None)
        self._attach.pop(client, None)

    def subscribe(self, client: NodeId, topics: Iterable) -> Subscription:
        if client not in self._subs:
            raise UnknownClient(client)
        mine = self._subs[client]
        for topic in topics:
            if topic in mine:
                continue
            mine.add(topic)
            self._topics.setdefault(topic, {})[client] = None
        return Subscription(client, frozenset(mine))

    def unsubscribe(self, client: NodeId, topics: Optional[Iterable] = None) -> None:
        mine = self._subs.get(client)
        if mine is None:
            raise UnknownClient(client)
        for topic in list(mine if topics is None else topics):
            if topic not in mine:
                continue
            mine.discard(topic)
            holders = self._topics[topic]
            del holders[client]
            if not holders:
                del self._topics[topic]

    def subscription(self, client: NodeId) -> Subscription:
        if client not in self._subs:
            raise UnknownClient(client)
        return Subscription(client, frozenset(self._subs[client]))

    def subscribers(self, topic) -> list[NodeId]:
        return list(self._topics.get(topic, ()))

    # -- publication -------------------------------------------------------

    def _hops(self, names: Sequence[str], rng: random.Random):
        names = tuple(names)
        cached = self._fixed_hops.get(names)
        if cached is not None:
            return cached, None
        models = [self.links[n] for n in names]
        if all(m.deterministic for m in models):
            hops = tuple((n, m.sample(rng)) for n, m in zip(names, models))
            self._fixed_hops[names] = hops
            return hops, None
        hops = []
        for n, m in zip(names, models):
            lat = m.sample(rng)
            if lat is None:
                return None, n
            hops.append((n, lat))
        return tuple(hops), None

    def publish(self, envelope: MessageEnvelope, rng: random.Random,
                drops: Optional[list] = None, check_rate: bool = True) -> list[DeliveryEvent]:
        limit = SIZE_LIMITS[envelope.kind]
        if len(envelope.payload) > limit:
            raise OversizedPayload(f"{envelope.kind.name} payload {len(envelope.payload)} > {limit} bytes")
        now = envelope.publish_time_ms
        if check_rate and self.limiter is not None and not self.limiter.admit(envelope.sender, envelope.kind, now):
            raise RateViolation(f"sender {envelope.sender} over the {envelope.kind.name} rate cap")
        self.published += 1
        out = []
        for client in self._topics.get(envelope.topic, ()):
            if client == envelope.sender:
                continue
            hops, dropped_on = self._hops(self.route(envelope, client, self._attach.get(client)), rng)
            if hops is None:
                self.dropped += 1
                if drops is not None:
                    drops.append(DropEvent(envelope, client, now, dropped_on))
                continue
            total = 0.0
            for _, lat in hops:
                total += lat
            t = now + total
            if not t > now:
                raise CausalityError(f"delivery to {client} at {t} not after publish {now}")
            out.append(DeliveryEvent(envelope, client, now, t, hops))
        return out


class EventQueue:
    """Discrete-event queue ordered by (time, insertion sequence)."""

    def __init__(self):
        self._heap: list = []
        self._seq = 0

    def push(self, time: float, item) -> None:
        heapq.heappush(self._heap, (time, self._seq, item))
        self._seq += 1

    def pop(self):
        time, _, item = heapq.heappop(self._heap)
        return time, item

    def peek_time(self) -> Optional[float]:
        return self._heap[0][0] if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)

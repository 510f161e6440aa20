"""Simulation trace events and their JSON form.

A trace file is a JSON array with exactly one event object per line, so it
can be produced and consumed as a stream. Deliveries and drops reference the
publication they belong to by sequence number instead of repeating it.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Optional, Union

from .geocast import TopicId
from .messages import MessageEnvelope, MessageKind, NodeId
from .netsim.broker import DeliveryEvent, DropEvent

TRACE_FORMAT = "v2vru-trace/1"


class TraceError(ValueError):
    pass


@dataclass(slots=True)
class ScenarioStart:
    time: float
    meta: dict


@dataclass(slots=True)
class ScenarioEnd:
    time: float


@dataclass(slots=True)
class VamPublished:
    time: float
    actor_id: int
    envelope: MessageEnvelope


@dataclass(slots=True)
class DenmPublished:
    time: float
    envelope: MessageEnvelope
    actor_id: Optional[int] = None  # set when a device (direct mode) is the origin


@dataclass(slots=True)
class PublishRejected:
    time: float
    actor_id: Optional[int]
    sender: NodeId
    kind: MessageKind


@dataclass(slots=True)
class WarningPresented:
    time: float
    actor_id: int
    pseudonym: int
    danger: int
    ttc_ms: int
    sender: NodeId
    event_id: int


@dataclass(slots=True)
class GroundTruthCollision:
    time: float
    actor_a: int
    actor_b: int


@dataclass(slots=True)
class StateSample:
    time: float
    actor_id: int
    pseudonym: int
    profile: int
    motion_state: int
    position: tuple[float, float]
    velocity: tuple[float, float]


Event = Union[ScenarioStart, ScenarioEnd, VamPublished, DenmPublished, PublishRejected,
              DeliveryEvent, DropEvent, WarningPresented, GroundTruthCollision, StateSample]


@dataclass
class SimulationTrace:
    events: list = field(default_factory=list)

    @property
    def meta(self) -> dict:
        if self.events and isinstance(self.events[0], ScenarioStart):
            return self.events[0].meta
        return {}

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def of_type(self, cls) -> list:
        return [e for e in self.events if isinstance(e, cls)]

    def to_bytes(self) -> bytes:
        buf = io.StringIO()
        write_trace(self, buf)
        return buf.getvalue().encode()


def event_time(e: Event) -> float:
    return e.delivery_time_ms if isinstance(e, DeliveryEvent) else e.time


# -- encoding ----------------------------------------------------------------

def _node(n: NodeId):
    return n


def event_to_dict(e: Event) -> dict:
    if isinstance(e, DeliveryEvent):
        return {"type": "delivered", "t": e.delivery_time_ms, "seq": e.envelope.seq,
                "recipient": e.recipient, "publish_t": e.publish_time_ms,
                "hops": [[name, lat] for name, lat in e.hops]}
    if isinstance(e, VamPublished):
        env = e.envelope
        return {"type": "vam_published", "t": e.time, "seq": env.seq, "actor": e.actor_id,
                "sender": env.sender, "topic": env.topic.format(), "payload": env.payload.hex()}
    if isinstance(e, StateSample):
        return {"type": "state", "t": e.time, "actor": e.actor_id, "pseudonym": e.pseudonym,
                "profile": e.profile, "motion": e.motion_state,
                "x": e.position[0], "y": e.position[1], "vx": e.velocity[0], "vy": e.velocity[1]}
    if isinstance(e, DenmPublished):
        env = e.envelope
        return {"type": "denm_published", "t": e.time, "seq": env.seq, "actor": e.actor_id,
                "sender": env.sender, "topic": env.topic.format(), "payload": env.payload.hex()}
    if isinstance(e, WarningPresented):
        return {"type": "warning", "t": e.time, "actor": e.actor_id, "pseudonym": e.pseudonym,
                "danger": e.danger, "ttc_ms": e.ttc_ms, "sender": e.sender, "event_id": e.event_id}
    if isinstance(e, DropEvent):
        return {"type": "dropped", "t": e.time, "seq": e.envelope.seq, "recipient": e.recipient,
                "link": e.link}
    if isinstance(e, GroundTruthCollision):
        return {"type": "collision", "t": e.time, "a": e.actor_a, "b": e.actor_b}
    if isinstance(e, PublishRejected):
        return {"type": "rejected", "t": e.time, "actor": e.actor_id, "sender": e.sender,
                "kind": e.kind.name}
    if isinstance(e, ScenarioStart):
        return {"type": "start", "t": e.time, "format": TRACE_FORMAT, "meta": e.meta}
    if isinstance(e, ScenarioEnd):
        return {"type": "end", "t": e.time}
    raise TraceError(f"cannot serialize {type(e).__name__}")


def _dumps(d: dict) -> str:
    return json.dumps(d, separators=(",", ":"), allow_nan=False)


def write_trace(trace: Union[SimulationTrace, Iterable[Event]], dest: Union[str, os.PathLike, IO[str]]) -> None:
    events = trace.events if isinstance(trace, SimulationTrace) else trace
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8") as fp:
            write_trace(events, fp)
        return
    dest.write("[\n")
    first = True
    for e in events:
        if not first:
            dest.write(",\n")
        dest.write(_dumps(event_to_dict(e)))
        first = False
    dest.write("\n]\n")


# -- decoding ----------------------------------------------------------------

class _Decoder:
    def __init__(self):
        self.envelopes: dict[int, MessageEnvelope] = {}
        self.topics: dict[str, TopicId] = {}

    def _topic(self, s: str) -> TopicId:
        t = self.topics.get(s)
        if t is None:
            t = self.topics[s] = TopicId.parse(s)
        return t

    def _envelope(self, d: dict, kind: MessageKind) -> MessageEnvelope:
        env = MessageEnvelope(kind, d["sender"], self._topic(d["topic"]), bytes.fromhex(d["payload"]),
                              d["t"], d["seq"])
        self.envelopes[env.seq] = env
        return env

    def _ref(self, d: dict) -> MessageEnvelope:
        try:
            return self.envelopes[d["seq"]]
        except KeyError:
            raise TraceError(f"event references unknown publication {d['seq']}") from None

    def decode(self, d: dict) -> Event:
        try:
            kind = d["type"]
            if kind == "delivered":
                return DeliveryEvent(self._ref(d), d["recipient"], d["publish_t"], d["t"],
                                     tuple((h[0], h[1]) for h in d["hops"]))
            if kind == "vam_published":
                return VamPublished(d["t"], d["actor"], self._envelope(d, MessageKind.VAM))
            if kind == "state":
                return StateSample(d["t"], d["actor"], d["pseudonym"], d["profile"], d["motion"],
                                   (d["x"], d["y"]), (d["vx"], d["vy"]))
            if kind == "denm_published":
                return DenmPublished(d["t"], self._envelope(d, MessageKind.DENM), d.get("actor"))
            if kind == "warning":
                return WarningPresented(d["t"], d["actor"], d["pseudonym"], d["danger"], d["ttc_ms"],
                                        d["sender"], d["event_id"])
            if kind == "dropped":
                return DropEvent(self._ref(d), d["recipient"], d["t"], d["link"])
            if kind == "collision":
                return GroundTruthCollision(d["t"], d["a"], d["b"])
            if kind == "rejected":
                return PublishRejected(d["t"], d["actor"], d["sender"], MessageKind[d["kind"]])
            if kind == "start":
                if d.get("format") != TRACE_FORMAT:
                    raise TraceError(f"unsupported trace format {d.get('format')!r}")
                return ScenarioStart(d["t"], d["meta"])
            if kind == "end":
                return ScenarioEnd(d["t"])
        except (KeyError, TypeError, IndexError) as exc:
            raise TraceError(f"malformed {d.get('type', '?')} event: {exc}") from None
        raise TraceError(f"unknown event type {kind!r}")


def iter_trace_dicts(fp: IO[str]) -> Iterator[dict]:
    first = fp.readline()
    if first.strip() != "[":
        # not in the line-per-event layout; fall back to a full parse
        rest = fp.read()
        data = json.loads(first + rest)
        if not isinstance(data, list):
            raise TraceError("trace must be a JSON array of events")
        yield from data
        return
    for line in fp:
        line = line.strip()
        if line == "]":
            return
        if line.endswith(","):
            line = line[:-1]
        if line:
            yield json.loads(line)
    raise TraceError("trace truncated: missing closing bracket")


def read_trace(src: Union[str, os.PathLike, IO[str]]) -> SimulationTrace:
    if isinstance(src, (str, os.PathLike)):
        with open(src, encoding="utf-8") as fp:
            return read_trace(fp)
    dec = _Decoder()
    try:
        events = [dec.decode(d) for d in iter_trace_dicts(src)]
    except json.JSONDecodeError as exc:
        raise TraceError(f"invalid JSON in trace: {exc}") from None
    if not events or not isinstance(events[0], ScenarioStart):
        raise TraceError("trace must start with a start event")
    return SimulationTrace(events)

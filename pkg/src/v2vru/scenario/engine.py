"""Discrete-event scenario runner.

Per tick every actor's true state is read from its motion script, observed
through the positioning-noise model and published as a VAM on the awareness
channel. Processing nodes (server, edges or the devices themselves,
depending on the pipeline mode) assess each arriving VAM and publish DENMs on
the warning channel; deliveries to targeted devices become warnings. Ground
truth is computed from the true states only.
"""

from __future__ import annotations

import logging
import math
import random
import time as _wall
from typing import Optional

import numpy as np

from ..geocast import GridCell, TopicId, cell_index, neighborhood, ring_for_range
from ..messages import (MessageEnvelope, MessageKind, PseudonymSchedule, decode_denm, decode_vam,
                        derive_actor_seed, encode_denm, encode_vam, vam_from_state)
from ..netsim.broker import Broker, DeliveryEvent, EventQueue, RateLimiter, RateViolation
from ..netsim.pipeline import SERVER_NODE, Dispatch, PipelineMode, ProcessingNode, Topology
from ..risk import required_range
from ..state import RoadUserState, VruProfile
from ..trace import (DenmPublished, GroundTruthCollision, PublishRejected, ScenarioEnd, ScenarioStart,
                     SimulationTrace, StateSample, VamPublished, WarningPresented)
from .config import MotionScript, ScenarioConfig
from .world import CollisionDetector, tick_noise

log = logging.getLogger(__name__)

_TICK = object()


class _Actor:
    __slots__ = ("actor_id", "profile", "script", "schedule", "pseudonym", "ring", "ix", "iy",
                 "topic", "downlink_topics", "uplink_topics", "node")

    def __init__(self, actor_id: int, profile: VruProfile, script: MotionScript,
                 schedule: PseudonymSchedule, ring: int):
        self.actor_id = actor_id
        self.profile = profile
        self.script = script
        self.schedule = schedule
        self.pseudonym: Optional[int] = None
        self.ring = ring
        self.ix: Optional[int] = None
        self.iy: Optional[int] = None
        self.topic: Optional[TopicId] = None
        self.downlink_topics: set = set()
        self.uplink_topics: set = set()
        self.node: Optional[ProcessingNode] = None


class _Run:
    def __init__(self, cfg: ScenarioConfig):
        cfg.validate()
        self.cfg = cfg
        self.mode = cfg.pipeline
        self.cs = cfg.cell_size_m
        self.req = cfg.requirements
        self.policy = cfg.policy
        self.duration_ms = cfg.duration_ms
        self.tick_ms = cfg.tick_ms
        self.publish_ms = cfg.publish_interval_ms
        self.sample_ms = cfg.sample_interval_ms
        self.epoch_ms = int(round(cfg.pseudonym_epoch_s * 1000))
        self.horizons = tuple(float(k + 1) for k in range(cfg.vam_path_points))
        zone_ring = ring_for_range(self.req.zone_radius_m, self.cs)
        self.topology = Topology(self.mode, self.cs, cfg.edge_zone_cells, zone_ring)
        limiter = RateLimiter(vam_hz=self.req.max_frequency_hz)
        self.uplink = Broker(cfg.latency, self.topology.uplink_route, limiter, "awareness")
        self.downlink = Broker(cfg.latency, self.topology.downlink_route, limiter, "warning")
        self.lat_rng = random.Random(cfg.seed * 1_000_003 + 17)
        self.queue = EventQueue()
        self.events: list = []
        self.seq = 0
        self.owner: dict[int, _Actor] = {}
        self.nodes: dict[object, ProcessingNode] = {}
        self._denm_cache: dict[int, object] = {}
        self._topics: dict[tuple[int, int], TopicId] = {}
        self._drops: list = []

        self.actors: list[_Actor] = []
        for i, spec in enumerate(cfg.actors):
            script = MotionScript(spec.profile, spec.start, spec.script)
            sched = PseudonymSchedule(derive_actor_seed(cfg.seed, i), self.epoch_ms)
            ring = ring_for_range(required_range(spec.profile, self.req), self.cs)
            self.actors.append(_Actor(i, spec.profile, script, sched, ring))
        self.detector = CollisionDetector([a.profile for a in self.actors], self.policy.collision_radius_m)
        self._setup_infrastructure()

    # -- topology ------------------------------------------------------------

    def _topic(self, ix: int, iy: int) -> TopicId:
        key = (ix, iy)
        t = self._topics.get(key)
        if t is None:
            t = self._topics[key] = TopicId(self.cs, ix, iy)
        return t

    def _node(self, name, index: int, focus=None) -> ProcessingNode:
        cfg = self.cfg
        return ProcessingNode(name, self.policy, self.cs, cfg.staleness_ms, cfg.denm_validity_ms,
                              self.req.zone_radius_m, self.req, node_index=index, focus=focus)

    def _world_cells(self) -> list[GridCell]:
        if not self.actors:
            return []
        ext = np.array([a.script.extent(self.duration_ms) for a in self.actors])
        lo_x, lo_y = ext[:, 0].min(), ext[:, 1].min()
        hi_x, hi_y = ext[:, 2].max(), ext[:, 3].max()
        # noise and path extrapolation can push observations slightly outside
        pad = max(a.ring for a in self.actors) + 1 + int(math.ceil(6 * self.cfg.noise_sigma_m / self.cs))
        ix0, iy0 = math.floor(lo_x / self.cs) - pad, math.floor(lo_y / self.cs) - pad
        ix1, iy1 = math.floor(hi_x / self.cs) + pad, math.floor(hi_y / self.cs) + pad
        return [GridCell(ix, iy, self.cs) for iy in range(iy0, iy1 + 1) for ix in range(ix0, ix1 + 1)]

    def _setup_infrastructure(self) -> None:
        cells = self._world_cells()
        if self.mode is PipelineMode.CENTRAL:
            self.nodes[SERVER_NODE] = self._node(SERVER_NODE, 0)
            self.uplink.register(SERVER_NODE)
            self.uplink.subscribe(SERVER_NODE, [self._topic(c.ix, c.iy) for c in cells])
        elif self.mode is PipelineMode.EDGE:
            by_edge: dict[str, list] = {}
            for c in cells:
                for e in self.topology.edges_covering(c):
                    by_edge.setdefault(e, []).append(self._topic(c.ix, c.iy))
            for k, (name, topics) in enumerate(sorted(by_edge.items())):
                self.nodes[name] = self._node(name, k + 1)
                self.uplink.register(name)
                self.uplink.subscribe(name, topics)

    def _relocate(self, a: _Actor, ix: int, iy: int) -> None:
        """Move ``a``'s subscriptions to the neighborhood of cell (ix, iy)."""
        a.ix, a.iy = ix, iy
        a.topic = self._topic(ix, iy)
        cell = GridCell(ix, iy, self.cs)
        wanted = {self._topic(c.ix, c.iy) for c in neighborhood(cell, a.ring)}
        self._resubscribe(self.downlink, a.pseudonym, a.downlink_topics, wanted)
        a.downlink_topics = wanted
        if self.mode is PipelineMode.EDGE:
            self.downlink.set_attach(a.pseudonym, self.topology.home_edge(cell))
        elif self.mode is PipelineMode.DIRECT:
            self._resubscribe(self.uplink, a.pseudonym, a.uplink_topics, wanted)
            a.uplink_topics = wanted

    @staticmethod
    def _resubscribe(broker: Broker, client, old: set, new: set) -> None:
        gone = old - new
        if gone:
            broker.unsubscribe(client, gone)
        added = new - old
        if added:
            broker.subscribe(client, added)

    def _rotate(self, a: _Actor, pseudonym: int) -> None:
        old = a.pseudonym
        a.pseudonym = pseudonym
        self.owner[pseudonym] = a
        attach = None
        if old is not None:
            if self.mode is PipelineMode.EDGE and a.ix is not None:
                attach = self.topology.home_edge(GridCell(a.ix, a.iy, self.cs))
            self.downlink.deregister(old)
            if self.mode is PipelineMode.DIRECT:
                self.uplink.deregister(old)
        self.downlink.register(pseudonym, attach)
        if a.downlink_topics:
            self.downlink.subscribe(pseudonym, a.downlink_topics)
        if self.mode is PipelineMode.DIRECT:
            self.uplink.register(pseudonym)
            if a.uplink_topics:
                self.uplink.subscribe(pseudonym, a.uplink_topics)
            if a.node is None:
                a.node = self._node(pseudonym, a.actor_id + 1, focus=set())
                self.nodes[a.actor_id] = a.node
            a.node.focus.add(pseudonym)

    # -- event handling --------------------------------------------------------

    def _next_seq(self) -> int:
        self.seq += 1
        return self.seq

    def _flush_drops(self) -> None:
        if self._drops:
            self.events.extend(self._drops)
            self._drops = []

    def _schedule(self, deliveries: list[DeliveryEvent]) -> None:
        push = self.queue.push
        for d in deliveries:
            push(d.delivery_time_ms, d)

    def _publish_denms(self, dispatches: list[Dispatch], sender, now: float,
                       origin: Optional[_Actor] = None) -> None:
        for disp in dispatches:
            denm = disp.denm
            env = MessageEnvelope(MessageKind.DENM, sender, disp.topic, encode_denm(denm), now, self._next_seq())
            try:
                deliveries = self.downlink.publish(env, self.lat_rng, self._drops)
            except RateViolation:
                self.events.append(PublishRejected(now, origin.actor_id if origin else None, sender,
                                                   MessageKind.DENM))
                continue
            self.events.append(DenmPublished(now, env, origin.actor_id if origin else None))
            if origin is not None and origin.pseudonym in denm.target_pseudonyms:
                # the device that assessed the conflict alerts its own user at once
                self.events.append(WarningPresented(now, origin.actor_id, origin.pseudonym, denm.danger_level,
                                                    denm.ttc_ms, sender, denm.event_id))
            self._flush_drops()
            self._schedule(deliveries)

    def _on_delivery(self, d: DeliveryEvent) -> None:
        self.events.append(d)
        env = d.envelope
        now = d.delivery_time_ms
        if env.kind is MessageKind.VAM:
            vam = decode_vam(env.payload)
            if self.mode is PipelineMode.DIRECT:
                a = self.owner[d.recipient]
                self._publish_denms(a.node.process((vam,), now), a.pseudonym, now, origin=a)
                return
            node = self.nodes[d.recipient]
            assess = self.mode is PipelineMode.CENTRAL or d.recipient == self.topology.home_edge_of_topic(env.topic)
            dispatches = node.process((vam,), now, assess=assess)
            if dispatches:
                self._publish_denms(dispatches, d.recipient, now)
            return
        denm = self._denm_cache.get(env.seq)
        if denm is None:
            denm = self._denm_cache[env.seq] = decode_denm(env.payload)
        if d.recipient in denm.target_pseudonyms:
            a = self.owner[d.recipient]
            remaining = max(0, int(round(denm.ttc_ms - d.latency_ms))) if denm.ttc_ms else 0
            self.events.append(WarningPresented(now, a.actor_id, d.recipient, denm.danger_level, remaining,
                                                env.sender, denm.event_id))

    def _state(self, a: _Actor, t: int) -> RoadUserState:
        pos, vel, motion = a.script.kinematics_at(t)
        return RoadUserState(a.actor_id, a.pseudonym, a.profile, motion, pos, vel, t, 0.0)

    def _on_tick(self, t: int, positions: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        events = self.events
        publish_now = t % self.publish_ms == 0
        sample_now = self.sample_ms > 0 and t % self.sample_ms == 0
        epoch = t // self.epoch_ms
        sigma = cfg.noise_sigma_m
        noise = tick_noise(cfg.seed, t // self.tick_ms, len(self.actors)) if publish_now and sigma > 0 else None
        cs = self.cs
        for a in self.actors:
            pid = a.schedule.for_epoch(epoch)
            if pid != a.pseudonym:
                self._rotate(a, pid)
            st = self._state(a, t)
            if sample_now:
                events.append(StateSample(t, a.actor_id, pid, int(a.profile), int(st.motion_state),
                                          st.position_m, st.velocity_ms))
            if not publish_now:
                continue
            if noise is not None:
                z = noise[a.actor_id]
                obs = RoadUserState(a.actor_id, pid, a.profile, st.motion_state,
                                    (st.position_m[0] + sigma * float(z[0]), st.position_m[1] + sigma * float(z[1])),
                                    st.velocity_ms, t, sigma)
            else:
                obs = st
            ix = cell_index(obs.position_m[0], cs)
            iy = cell_index(obs.position_m[1], cs)
            if ix != a.ix or iy != a.iy:
                self._relocate(a, ix, iy)
            vam = vam_from_state(obs, self.horizons)
            env = MessageEnvelope(MessageKind.VAM, pid, a.topic, encode_vam(vam), float(t), self._next_seq())
            try:
                deliveries = self.uplink.publish(env, self.lat_rng, self._drops)
            except RateViolation:
                events.append(PublishRejected(t, a.actor_id, pid, MessageKind.VAM))
                continue
            events.append(VamPublished(t, a.actor_id, env))
            self._flush_drops()
            self._schedule(deliveries)
            if a.node is not None:
                self._publish_denms(a.node.process((vam,), t), pid, t, origin=a)

        # ground truth over the interval to the next tick
        t1 = min(t + self.tick_ms, self.duration_ms)
        nxt = self._positions(t1)
        for i, j, when in self.detector.check(t, positions, t1, nxt):
            self.queue.push(when, GroundTruthCollision(when, i, j))
        return nxt

    def _positions(self, t: float) -> np.ndarray:
        out = np.empty((len(self.actors), 2))
        for k, a in enumerate(self.actors):
            out[k] = a.script.position_at(t)
        return out

    def _meta(self) -> dict:
        cfg = self.cfg
        profiles = sorted({a.profile for a in self.actors})
        return {
            "scenario": cfg.name,
            "seed": cfg.seed,
            "mode": cfg.pipeline.value,
            "duration_ms": self.duration_ms,
            "tick_ms": self.tick_ms,
            "publish_interval_ms": self.publish_ms,
            "cell_size_m": self.cs,
            "noise_sigma_m": cfg.noise_sigma_m,
            "t_warn_s": self.policy.t_warn,
            "denm_validity_ms": cfg.denm_validity_ms,
            "zone_radius_m": self.req.zone_radius_m,
            "pseudonym_epoch_ms": self.epoch_ms,
            "rings": {p.name.lower(): ring_for_range(required_range(p, self.req), self.cs) for p in profiles},
            "links": {k: v.to_dict() for k, v in sorted(cfg.latency.items())},
            "actor_profiles": [int(a.profile) for a in self.actors],
        }

    def run(self) -> SimulationTrace:
        started = _wall.perf_counter()
        self.events.append(ScenarioStart(0.0, self._meta()))
        positions = self._positions(0) if self.actors else np.empty((0, 2))
        if self.actors:
            self.queue.push(0, _TICK)
        tick_time = 0
        last = 0.0
        while len(self.queue):
            now, item = self.queue.pop()
            last = now
            if item is _TICK:
                positions = self._on_tick(tick_time, positions)
                tick_time += self.tick_ms
                if tick_time < self.duration_ms:
                    self.queue.push(tick_time, _TICK)
                if tick_time % 1000 == 0:
                    log.debug("%s: t=%d ms, %d events, %.1fs wall", self.cfg.name, tick_time,
                              len(self.events), _wall.perf_counter() - started)
            elif isinstance(item, DeliveryEvent):
                self._on_delivery(item)
            else:
                self.events.append(item)
        self.events.append(ScenarioEnd(float(max(self.duration_ms, last))))
        log.info("%s (%s): %d events in %.1fs", self.cfg.name, self.mode.value, len(self.events),
                 _wall.perf_counter() - started)
        return SimulationTrace(self.events)


def run(config: ScenarioConfig) -> SimulationTrace:
    """Execute ``config`` and return its event trace (a pure function of the config)."""
    return _Run(config).run()

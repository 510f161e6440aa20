"""Processing tiers: communication unit, information processing, dispatch.

A :class:`ProcessingNode` is the server application (central mode), one
edge broker's processor (edge mode) or a client's on-device processor
(direct mode). Assessment is event driven: each arriving VAM is assessed
against the node's state table at the VAM's own timestamp, so identical
arrival orders give identical warnings regardless of where the node sits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

import numpy as np

from ..geocast import GridCell, TopicId, cell_of
from ..messages import (DenmMessage, EventType, MessageEnvelope, NodeId, VamMessage, to_cm,
                        vam_kinematics)
from ..risk import DEFAULT_REQUIREMENTS, DangerLevel, RequirementProfile, WarningPolicy, \
    assess_arrays, required_range
from ..state import MotionState, VruProfile
from .latency import CLIENT_TO_EDGE, DIRECT, EDGE_TO_CLIENT, EDGE_TO_EDGE, EDGE_TO_SERVER, \
    SERVER_TO_EDGE

DEFAULT_STALENESS_MS = 1500.0
DEFAULT_DENM_VALIDITY_MS = 5000
SERVER_NODE = "server"


class PipelineMode(str, Enum):
    CENTRAL = "central"
    EDGE = "edge"
    DIRECT = "direct"


class StateTable:
    """Freshness-windowed table of the latest VAM per pseudonym."""

    def __init__(self, staleness_ms: float = DEFAULT_STALENESS_MS, capacity: int = 64):
        self.staleness_ms = staleness_ms
        self.index: dict[int, int] = {}
        self.ids = np.zeros(capacity, dtype=np.int64)
        self.x = np.zeros(capacity)
        self.y = np.zeros(capacity)
        self.vx = np.zeros(capacity)
        self.vy = np.zeros(capacity)
        self.ts = np.full(capacity, -np.inf)
        self.profile = np.zeros(capacity, dtype=np.int8)
        self.alive = np.zeros(capacity, dtype=bool)
        self._free: list[int] = []
        self._size = 0
        self._last_sweep = -np.inf
        self.version = 0  # bumped whenever slot membership changes

    def __len__(self) -> int:
        return len(self.index)

    def _grow(self) -> None:
        cap = len(self.x) * 2
        for name in ("ids", "x", "y", "vx", "vy", "ts", "profile", "alive"):
            old = getattr(self, name)
            fill = -np.inf if name == "ts" else 0
            new = np.full(cap, fill, dtype=old.dtype)
            new[:len(old)] = old
            setattr(self, name, new)

    def sweep(self, now_ms: float) -> None:
        stale = self.alive & (self.ts < now_ms - self.staleness_ms)
        for i in np.nonzero(stale)[0]:
            i = int(i)
            del self.index[int(self.ids[i])]
            self.alive[i] = False
            self._free.append(i)
            self.version += 1
        self._last_sweep = now_ms

    def ingest(self, vam: VamMessage, now_ms: float) -> Optional[int]:
        """Store ``vam``; returns its slot, or None if it is stale or superseded."""
        if now_ms - vam.timestamp_ms > self.staleness_ms:
            return None
        if now_ms - self._last_sweep >= self.staleness_ms / 3:
            self.sweep(now_ms)
        i = self.index.get(vam.pseudonym)
        if i is None:
            if self._free:
                i = self._free.pop()
            else:
                if self._size == len(self.x):
                    self._grow()
                i = self._size
                self._size += 1
            self.index[vam.pseudonym] = i
            self.ids[i] = vam.pseudonym
            self.version += 1
        elif self.ts[i] >= vam.timestamp_ms:
            return None
        x, y, vx, vy = vam_kinematics(vam)
        if vam.motion_state in (MotionState.STANDING, MotionState.IDLE):
            vx = vy = 0.0
        self.x[i], self.y[i], self.vx[i], self.vy[i] = x, y, vx, vy
        self.ts[i] = vam.timestamp_ms
        if self.profile[i] != vam.profile:
            self.profile[i] = int(vam.profile)
            self.version += 1
        self.alive[i] = True
        return i

    def fresh_mask(self, now_ms: float) -> np.ndarray:
        n = self._size
        return self.alive[:n] & (self.ts[:n] >= now_ms - self.staleness_ms)


@dataclass(frozen=True, slots=True)
class Dispatch:
    denm: DenmMessage
    topic: TopicId
    reference_ms: float


def _radius_table(policy: WarningPolicy) -> np.ndarray:
    table = np.zeros((8, 8))
    for (a, b), r in policy.collision_radius_m.items():
        table[int(a), int(b)] = table[int(b), int(a)] = r
    return table


class ProcessingNode:
    """CU + IPU + MD for one processing location."""

    def __init__(self, name: NodeId, policy: WarningPolicy, cell_size_m: int,
                 staleness_ms: float = DEFAULT_STALENESS_MS,
                 validity_ms: int = DEFAULT_DENM_VALIDITY_MS,
                 zone_radius_m: float = DEFAULT_REQUIREMENTS.zone_radius_m,
                 requirements: RequirementProfile = DEFAULT_REQUIREMENTS,
                 node_index: int = 0, focus: Optional[set] = None):
        self.name = name
        self.policy = policy
        self.cell_size_m = cell_size_m
        self.table = StateTable(staleness_ms)
        self.validity_ms = int(validity_ms)
        self.zone_radius_m = zone_radius_m
        self.requirements = requirements
        self.focus = focus
        self._set_policy(policy)
        self._sent: dict[tuple[int, int], tuple[int, float]] = {}
        self._event_base = (node_index & 0xFF) << 24
        self._event_counter = 0
        self.assessments = 0

    def _set_policy(self, policy: WarningPolicy) -> None:
        self.policy = policy
        self._radii = _radius_table(policy)
        self._t_warn = max(policy.t_warn, policy.imminent_s)
        self._partner_cache: dict[int, tuple[int, np.ndarray]] = {}

    def _next_event_id(self) -> int:
        self._event_counter = (self._event_counter + 1) & 0xFFFFFF
        return self._event_base | self._event_counter

    def process(self, vams: Iterable[VamMessage], now_ms: float, assess: bool = True) -> list[Dispatch]:
        out: list[Dispatch] = []
        for vam in vams:
            slot = self.table.ingest(vam, now_ms)
            if slot is None or not assess:
                continue
            out.extend(self._assess(slot, vam, now_ms))
        return out

    def _partners(self, profile: int) -> np.ndarray:
        """Slots whose profile has a collision radius with ``profile``."""
        t = self.table
        hit = self._partner_cache.get(profile)
        if hit is not None and hit[0] == t.version:
            return hit[1]
        n = t._size
        idx = np.nonzero(t.alive[:n] & (self._radii[profile][t.profile[:n]] > 0))[0]
        self._partner_cache[profile] = (t.version, idx)
        return idx

    def _assess(self, u: int, vam: VamMessage, now_ms: float) -> list[Dispatch]:
        t = self.table
        ref = float(vam.timestamp_ms)
        pu = int(t.profile[u])
        idx = self._partners(pu)
        if idx.size == 0:
            return []
        keep = t.alive[idx] & (t.ts[idx] >= now_ms - t.staleness_ms) & (idx != u)
        if self.focus is not None and vam.pseudonym not in self.focus:
            keep &= np.isin(t.ids[idx], list(self.focus))
        idx = idx[keep]
        if idx.size == 0:
            return []
        dt = (ref - t.ts[idx]) / 1000.0
        rx = t.x[idx] + t.vx[idx] * dt - t.x[u]
        ry = t.y[idx] + t.vy[idx] * dt - t.y[u]
        vx = t.vx[idx] - t.vx[u]
        vy = t.vy[idx] - t.vy[u]
        radius = self._radii[pu][t.profile[idx]]
        rr = rx * rx + ry * ry
        # only pairs in the zone that could close to contact within the warning
        # lead time can reach Warning; everything else is skipped unassessed
        reach = radius + np.sqrt(vx * vx + vy * vy) * self._t_warn
        cand = (rr <= self.zone_radius_m * self.zone_radius_m) & (rr <= reach * reach)
        self.assessments += idx.size
        if not cand.any():
            return []
        sel = np.nonzero(cand)[0]
        idx, dt = idx[sel], dt[sel]
        ttc, t_cpa, d_min, danger = assess_arrays(rx[sel], ry[sel], vx[sel], vy[sel], radius[sel], self.policy)
        out = []
        for k in np.nonzero(danger >= DangerLevel.WARNING)[0]:
            d = self._dispatch(u, int(idx[k]), float(ttc[k]), float(t_cpa[k]),
                               DangerLevel(int(danger[k])), float(dt[k]), ref, now_ms)
            if d is not None:
                out.append(d)
        return out

    def _dispatch(self, u: int, w: int, ttc: float, t_cpa: float, danger: DangerLevel,
                  dt_w: float, ref: float, now_ms: float) -> Optional[Dispatch]:
        t = self.table
        a, b = int(t.ids[u]), int(t.ids[w])
        key = (a, b) if a <= b else (b, a)
        last = self._sent.get(key)
        if last is not None and danger <= last[0] and now_ms < last[1] + self.validity_ms:
            return None
        self._sent[key] = (int(danger), now_ms)

        tc = ttc if not math.isnan(ttc) else t_cpa
        ux, uy = t.x[u] + t.vx[u] * tc, t.y[u] + t.vy[u] * tc
        wx = t.x[w] + t.vx[w] * (dt_w + tc)
        wy = t.y[w] + t.vy[w] * (dt_w + tc)
        point = ((ux + wx) / 2.0, (uy + wy) / 2.0)
        remaining_ms = 0 if math.isnan(ttc) else max(0, int(round(ttc * 1000.0 - (now_ms - ref))))
        profiles = [VruProfile(int(t.profile[u])), VruProfile(int(t.profile[w]))]
        vrus = [p for p in profiles if p.is_vru] or profiles
        radius_m = int(math.ceil(max(required_range(p, self.requirements) for p in vrus)))
        denm = DenmMessage(
            event_id=self._next_event_id(),
            event_type=EventType.COLLISION_RISK,
            event_position_cm=(to_cm(point[0]), to_cm(point[1])),
            danger_level=int(danger),
            ttc_ms=remaining_ms,
            validity_ms=self.validity_ms,
            relevance_radius_m=max(1, radius_m),
            target_pseudonyms=key,
        )
        return Dispatch(denm, cell_of(point, self.cell_size_m).topic, ref)


def server_step(sa_state: ProcessingNode, received: Iterable[VamMessage], policy: WarningPolicy,
                clock_ms: float) -> list[DenmMessage]:
    """Central-mode step: ingest, assess co-zone pairs, dispatch warnings."""
    if sa_state.policy is not policy:
        sa_state._set_policy(policy)
    return [d.denm for d in sa_state.process(received, clock_ms)]


def edge_step(ec_state: ProcessingNode, received: Iterable[VamMessage], policy: WarningPolicy,
              clock_ms: float) -> list[DenmMessage]:
    """Edge-mode step; same semantics as :func:`server_step`, run at the edge hop."""
    return server_step(ec_state, received, policy, clock_ms)


class Topology:
    """Edge zoning and per-mode hop chains.

    Edges tile the grid in square blocks of ``edge_zone_cells`` cells, with
    block 0 centered on the origin cell.
    """

    def __init__(self, mode: PipelineMode, cell_size_m: int, edge_zone_cells: int = 16,
                 edge_margin_cells: int = 3):
        if edge_zone_cells <= 0:
            raise ValueError("edge_zone_cells must be positive")
        self.mode = PipelineMode(mode)
        self.cell_size_m = cell_size_m
        self.zone = edge_zone_cells
        self.margin = edge_margin_cells
        self._home: dict[TopicId, str] = {}

    def edge_index(self, cell: GridCell) -> tuple[int, int]:
        half = self.zone // 2
        return ((cell.ix + half) // self.zone, (cell.iy + half) // self.zone)

    def home_edge(self, cell: GridCell) -> str:
        ex, ey = self.edge_index(cell)
        return f"edge/{ex}/{ey}"

    def home_edge_of_topic(self, topic: TopicId) -> str:
        h = self._home.get(topic)
        if h is None:
            h = self._home[topic] = self.home_edge(topic.cell)
        return h

    def edges_covering(self, cell: GridCell) -> list[str]:
        """Edges whose block, grown by the margin, contains ``cell``."""
        half = self.zone // 2
        lo_x = (cell.ix - self.margin + half) // self.zone
        hi_x = (cell.ix + self.margin + half) // self.zone
        lo_y = (cell.iy - self.margin + half) // self.zone
        hi_y = (cell.iy + self.margin + half) // self.zone
        return [f"edge/{ex}/{ey}" for ey in range(lo_y, hi_y + 1) for ex in range(lo_x, hi_x + 1)]

    def uplink_route(self, envelope: MessageEnvelope, recipient: NodeId, attach) -> tuple[str, ...]:
        if self.mode is PipelineMode.CENTRAL:
            return (CLIENT_TO_EDGE, EDGE_TO_SERVER)
        if self.mode is PipelineMode.EDGE:
            if recipient == self.home_edge_of_topic(envelope.topic):
                return (CLIENT_TO_EDGE,)
            return (CLIENT_TO_EDGE, EDGE_TO_EDGE)
        return (DIRECT,)

    def downlink_route(self, envelope: MessageEnvelope, recipient: NodeId, attach) -> tuple[str, ...]:
        if self.mode is PipelineMode.CENTRAL:
            return (SERVER_TO_EDGE, EDGE_TO_CLIENT)
        if self.mode is PipelineMode.EDGE:
            if envelope.sender == attach:
                return (EDGE_TO_CLIENT,)
            return (EDGE_TO_EDGE, EDGE_TO_CLIENT)
        return (DIRECT,)

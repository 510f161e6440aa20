"""Ground-truth kinematics, positioning noise and collision detection."""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from ..risk import DEFAULT_COLLISION_RADII, PairKey, pair_key
from ..state import RoadUserState, VruProfile
from .config import MotionScript


def step(state: RoadUserState, dt_s: float, script: Optional[MotionScript] = None) -> RoadUserState:
    """Advance ``state`` by ``dt_s``.

    Without a script this is the first-order update ``p + v*dt``. With one,
    the new state is read from the script at the new time, so velocity and
    motion state switch exactly at segment boundaries and repeated steps
    accumulate no error.
    """
    if dt_s < 0:
        raise ValueError("dt_s must be >= 0")
    if dt_s == 0:
        return state
    t_ms = state.timestamp_ms + dt_s * 1000.0
    if script is None:
        x, y = state.position_m
        vx, vy = state.velocity_ms
        return state.with_(position_m=(x + vx * dt_s, y + vy * dt_s), timestamp_ms=int(round(t_ms)))
    pos, vel, motion = script.kinematics_at(t_ms)
    return state.with_(position_m=pos, velocity_ms=vel, motion_state=motion, timestamp_ms=int(round(t_ms)))


def perturb(state: RoadUserState, offset: Sequence[float], sigma_m: float) -> RoadUserState:
    x, y = state.position_m
    return state.with_(position_m=(x + float(offset[0]), y + float(offset[1])), sigma_m=float(sigma_m))


def observe(state: RoadUserState, noise_sigma_m: float, rng: np.random.Generator) -> RoadUserState:
    """What the device's positioning reports: isotropic normal error per axis."""
    if noise_sigma_m < 0:
        raise ValueError("noise_sigma_m must be >= 0")
    if noise_sigma_m == 0:
        return state.with_(sigma_m=0.0)
    return perturb(state, rng.normal(0.0, noise_sigma_m, size=2), noise_sigma_m)


def tick_noise(seed: int, tick_index: int, n_actors: int) -> np.ndarray:
    """Standard-normal offsets for every actor at one tick (row i = actor i)."""
    return np.random.default_rng([seed & 0xFFFFFFFF, tick_index]).standard_normal((n_actors, 2))


def _radius_matrix(radii: Mapping[PairKey, float]) -> np.ndarray:
    table = np.zeros((8, 8))
    for (a, b), r in radii.items():
        table[int(a), int(b)] = table[int(b), int(a)] = r
    return table


class CollisionDetector:
    """Continuous first-contact detection between consecutive world samples.

    Between two samples every actor moves along a straight segment, so the
    first instant a pair is within its radius solves a quadratic in the
    interpolation parameter. Each pair is reported once.
    """

    def __init__(self, profiles: Sequence[VruProfile], radii: Mapping[PairKey, float] = DEFAULT_COLLISION_RADII):
        self.profiles = np.asarray([int(p) for p in profiles], dtype=np.int64)
        self._table = _radius_matrix(radii)
        self.r_max = max(radii.values(), default=0.0)
        # actors whose profile takes part in at least one radius pair
        self._active = self._table[self.profiles].max(axis=1) > 0 if len(self.profiles) else np.zeros(0, bool)
        self.collided: set[tuple[int, int]] = set()

    def check(self, t0_ms: float, p0: np.ndarray, t1_ms: float, p1: np.ndarray) -> list[tuple[int, int, float]]:
        """Pairs (i, j, time_ms) making first contact within [t0, t1], sorted by time then pair."""
        if self.r_max <= 0 or len(p0) < 2:
            return []
        idx = np.nonzero(self._active)[0]
        a0, a1 = p0[idx], p1[idx]
        disp = a1 - a0
        reach = self.r_max + 2.0 * float(np.sqrt((disp * disp).sum(axis=1)).max(initial=0.0))
        pairs = cKDTree(a0).query_pairs(reach, output_type="ndarray")
        if len(pairs) == 0:
            return []
        i, j = idx[pairs[:, 0]], idx[pairs[:, 1]]
        radius = self._table[self.profiles[i], self.profiles[j]]
        keep = radius > 0
        i, j, radius = i[keep], j[keep], radius[keep]
        r0 = p0[j] - p0[i]
        dr = (p1[j] - p1[i]) - r0
        a = (dr * dr).sum(axis=1)
        b = (r0 * dr).sum(axis=1)
        c = (r0 * r0).sum(axis=1) - radius * radius
        s = np.full(len(i), np.nan)
        s[c <= 0] = 0.0  # already in contact, same boundary as ttc_vectors
        disc = b * b - a * c
        moving = (c > 0) & (b < 0) & (disc >= 0) & (a > 0)
        s[moving] = c[moving] / (-b[moving] + np.sqrt(disc[moving]))
        hit = (s >= 0) & (s <= 1)
        out = []
        for k in np.nonzero(hit)[0]:
            key = (int(i[k]), int(j[k]))
            if key in self.collided:
                continue
            self.collided.add(key)
            out.append((key[0], key[1], t0_ms + float(s[k]) * (t1_ms - t0_ms)))
        out.sort(key=lambda e: (e[2], e[0], e[1]))
        return out


def detect_ground_truth_collisions(history: Sequence[Sequence[RoadUserState]],
                                   radii: Mapping[PairKey, float] = DEFAULT_COLLISION_RADII
                                   ) -> list[tuple[tuple[int, int], float]]:
    """First contact time (ms) of every colliding pair in a sampled world history.

    ``history`` is a sequence of snapshots, each listing every actor in the
    same order; pairs are reported by actor id.
    """
    if not history:
        return []
    first = history[0]
    ids = [s.actor_id for s in first]
    detector = CollisionDetector([s.profile for s in first], {pair_key(*k): v for k, v in radii.items()})
    out = []
    prev = np.array([s.position_m for s in first], dtype=float).reshape(-1, 2)
    prev_t = first[0].timestamp_ms if first else 0
    for snap in history[1:]:
        cur = np.array([s.position_m for s in snap], dtype=float).reshape(-1, 2)
        t = snap[0].timestamp_ms if snap else prev_t
        for i, j, when in detector.check(prev_t, prev, t, cur):
            a, b = ids[i], ids[j]
            out.append(((min(a, b), max(a, b)), when))
        prev, prev_t = cur, t
    return out

"""Collision mathematics and warning policy.

All predictions are constant-velocity. Relative quantities are taken as
``r = p_b - p_a`` and ``v = v_b - v_a``; every result is symmetric in the pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping, Optional

import numpy as np

from .state import RoadUserState, VruProfile


class DangerLevel(IntEnum):
    NONE = 0
    AWARENESS = 1
    WARNING = 2
    IMMINENT = 3


@dataclass(frozen=True)
class RequirementProfile:
    """Quantified V2VRU requirements; defaults are the reference values."""

    range_infrastructure_m: float = 25.0
    range_pedestrian_m: float = 75.0
    range_cyclist_m: float = 150.0
    range_motorcyclist_m: float = 300.0
    positioning_sigma_max_m: float = 0.5
    latency_max_ms: float = 300.0
    latency_target_ms: float = 100.0
    max_frequency_hz: float = 10.0
    max_users_per_zone: int = 5000
    zone_radius_m: float = 300.0
    vam_max_bytes: int = 300
    denm_max_bytes: int = 1200

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive")


DEFAULT_REQUIREMENTS = RequirementProfile()


def required_range(profile: VruProfile, req: RequirementProfile = DEFAULT_REQUIREMENTS) -> float:
    """Communication range a user of ``profile`` must be reachable within.

    Vehicles take the largest VRU range since they must hear every VRU type.
    """
    profile = VruProfile(profile)
    if profile is VruProfile.PEDESTRIAN:
        return req.range_pedestrian_m
    if profile is VruProfile.CYCLIST:
        return req.range_cyclist_m
    if profile is VruProfile.MOTORCYCLIST:
        return req.range_motorcyclist_m
    if profile is VruProfile.INFRASTRUCTURE:
        return req.range_infrastructure_m
    return max(req.range_pedestrian_m, req.range_cyclist_m, req.range_motorcyclist_m)


PairKey = tuple[VruProfile, VruProfile]


def pair_key(a: VruProfile, b: VruProfile) -> PairKey:
    a, b = VruProfile(a), VruProfile(b)
    return (a, b) if a <= b else (b, a)


DEFAULT_COLLISION_RADII: dict[PairKey, float] = {
    pair_key(VruProfile.VEHICLE, VruProfile.PEDESTRIAN): 1.5,
    pair_key(VruProfile.VEHICLE, VruProfile.CYCLIST): 1.8,
    pair_key(VruProfile.VEHICLE, VruProfile.MOTORCYCLIST): 2.0,
}


@dataclass(frozen=True)
class WarningPolicy:
    reaction_s: float = 1.5
    latency_budget_s: float = 0.3
    maneuver_s: float = 2.0
    margin_s: float = 0.5
    collision_radius_m: Mapping[PairKey, float] = field(
        default_factory=lambda: dict(DEFAULT_COLLISION_RADII))
    awareness_factor: float = 2.0
    imminent_s: float = 1.5

    def __post_init__(self):
        for name in ("reaction_s", "latency_budget_s", "maneuver_s", "margin_s",
                     "awareness_factor", "imminent_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        radii = {pair_key(*k): float(v) for k, v in self.collision_radius_m.items()}
        if any(r <= 0 for r in radii.values()):
            raise ValueError("collision radii must be positive")
        object.__setattr__(self, "collision_radius_m", radii)

    def radius_for(self, a: VruProfile, b: VruProfile) -> Optional[float]:
        return self.collision_radius_m.get(pair_key(a, b))

    @property
    def t_warn(self) -> float:
        return warning_threshold(self)

    @property
    def horizon_s(self) -> float:
        return self.awareness_factor * self.t_warn

    def __hash__(self):
        return hash((self.reaction_s, self.latency_budget_s, self.maneuver_s, self.margin_s,
                     tuple(sorted(self.collision_radius_m.items())),
                     self.awareness_factor, self.imminent_s))


def warning_threshold(policy: WarningPolicy) -> float:
    """Warning lead time: reaction + latency budget + maneuver + safety margin."""
    return policy.reaction_s + policy.latency_budget_s + policy.maneuver_s + policy.margin_s


@dataclass(frozen=True, slots=True)
class Trajectory:
    origin: tuple[float, float]
    velocity: tuple[float, float]
    t0_ms: int
    horizon_s: float

    def at(self, t_s: float) -> tuple[float, float]:
        return (self.origin[0] + self.velocity[0] * t_s, self.origin[1] + self.velocity[1] * t_s)


def predict_trajectory(state: RoadUserState, horizon_s: float) -> Trajectory:
    if horizon_s <= 0:
        raise ValueError("horizon_s must be positive")
    return Trajectory(state.position_m, state.effective_velocity(), state.timestamp_ms, horizon_s)


def _relative(a: RoadUserState, b: RoadUserState) -> tuple[float, float, float, float]:
    ava, avb = a.effective_velocity(), b.effective_velocity()
    return (b.position_m[0] - a.position_m[0], b.position_m[1] - a.position_m[1],
            avb[0] - ava[0], avb[1] - ava[1])


def closest_approach_vectors(rx: float, ry: float, vx: float, vy: float) -> tuple[float, float]:
    vv = vx * vx + vy * vy
    if vv == 0.0:
        return 0.0, math.hypot(rx, ry)
    t = max(0.0, -(rx * vx + ry * vy) / vv)
    return t, math.hypot(rx + t * vx, ry + t * vy)


def closest_approach(a: RoadUserState, b: RoadUserState) -> tuple[float, float]:
    """(t_cpa_s, d_min_m) for the predicted motion of the pair; t_cpa >= 0."""
    return closest_approach_vectors(*_relative(a, b))


def ttc_vectors(rx: float, ry: float, vx: float, vy: float, radius: float) -> Optional[float]:
    c = rx * rx + ry * ry - radius * radius
    if c <= 0.0:
        return 0.0
    b = rx * vx + ry * vy
    if b >= 0.0:
        return None  # separated and not closing
    a = vx * vx + vy * vy
    if a == 0.0:
        return None  # relative speed underflows: consistent with closest_approach_vectors
    disc = b * b - a * c
    if disc < 0.0:
        return None
    # smaller root of a t^2 + 2 b t + c, in the cancellation-free form
    return c / (-b + math.sqrt(disc))


def time_to_collision(a: RoadUserState, b: RoadUserState, collision_radius_m: float) -> Optional[float]:
    """Earliest t >= 0 at which the pair's separation reaches ``collision_radius_m``."""
    if collision_radius_m <= 0:
        raise ValueError("collision_radius_m must be positive")
    return ttc_vectors(*_relative(a, b), collision_radius_m)


def classify(ttc: Optional[float], t_cpa: float, d_min: float, radius: float,
             policy: WarningPolicy) -> DangerLevel:
    t_warn = warning_threshold(policy)
    if ttc is not None:
        if ttc <= policy.imminent_s:
            return DangerLevel.IMMINENT
        if ttc <= t_warn:
            return DangerLevel.WARNING
        if ttc <= policy.awareness_factor * t_warn:
            return DangerLevel.AWARENESS
    elif t_cpa <= policy.awareness_factor * t_warn and d_min < radius * policy.awareness_factor:
        return DangerLevel.AWARENESS
    return DangerLevel.NONE


@dataclass(frozen=True, slots=True)
class CollisionAssessment:
    pair: tuple[int, int]
    t_cpa_s: float
    d_min_m: float
    ttc_s: Optional[float]
    danger: DangerLevel
    radius_m: float = 0.0


def assess_pair(a: RoadUserState, b: RoadUserState, policy: WarningPolicy) -> CollisionAssessment:
    radius = policy.radius_for(a.profile, b.profile)
    if radius is None:
        raise ValueError(f"no collision radius for {a.profile.name}/{b.profile.name}")
    rel = _relative(a, b)
    t_cpa, d_min = closest_approach_vectors(*rel)
    ttc = ttc_vectors(*rel, radius)
    danger = classify(ttc, t_cpa, d_min, radius, policy)
    pair = (a.pseudonym, b.pseudonym) if a.pseudonym <= b.pseudonym else (b.pseudonym, a.pseudonym)
    return CollisionAssessment(pair, t_cpa, d_min, ttc, danger, radius)


def assess_arrays(rx: np.ndarray, ry: np.ndarray, vx: np.ndarray, vy: np.ndarray,
                  radius: np.ndarray, policy: WarningPolicy):
    """Vectorized ``assess_pair`` over relative states.

    Returns ``(ttc, t_cpa, d_min, danger)``; ``ttc`` is NaN where absent.
    """
    vv = vx * vx + vy * vy
    rv = rx * vx + ry * vy
    moving = vv > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t_cpa = np.where(moving, np.maximum(0.0, -rv / np.where(moving, vv, 1.0)), 0.0)
        d_min = np.hypot(rx + t_cpa * vx, ry + t_cpa * vy)

        c = rx * rx + ry * ry - radius * radius
        disc = rv * rv - vv * c
        closing = moving & (rv < 0.0) & (disc >= 0.0)
        root = c / (-rv + np.sqrt(np.where(closing, disc, 0.0)))
        ttc = np.where(c <= 0.0, 0.0, np.where(closing, root, np.nan))

    t_warn = warning_threshold(policy)
    aware_t = policy.awareness_factor * t_warn
    has = ~np.isnan(ttc)
    danger = np.zeros(rx.shape, dtype=np.int8)
    danger[has & (ttc <= aware_t)] = DangerLevel.AWARENESS
    danger[has & (ttc <= t_warn)] = DangerLevel.WARNING
    danger[has & (ttc <= policy.imminent_s)] = DangerLevel.IMMINENT
    danger[~has & (t_cpa <= aware_t) & (d_min < radius * policy.awareness_factor)] = DangerLevel.AWARENESS
    return ttc, t_cpa, d_min, danger

"""Canonical scenario templates.

Each conflict scenario is laid out so the conflict first becomes visible
with more than the warning lead time left, which is what a working system
must be able to exploit. Roads run along x (eastbound lane at y = 0 unless
noted); VRUs cross along +y.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from ..state import MotionState, VruProfile
from .config import ActorSpec, ScenarioConfig, VelocitySegment

KMH = 1.0 / 3.6

P, C, M, V = VruProfile.PEDESTRIAN, VruProfile.CYCLIST, VruProfile.MOTORCYCLIST, VruProfile.VEHICLE
WALK, RUN, CYCLE, RIDE, DRIVE, STAND = (MotionState.WALKING, MotionState.RUNNING, MotionState.CYCLING,
                                        MotionState.RIDING, MotionState.DRIVING, MotionState.STANDING)


def _cruise(profile, start, velocity, until_ms, motion, label=""):
    return ActorSpec(profile, start, (VelocitySegment(until_ms, velocity, motion),), label)


def los_crossing(vehicle_speed_ms: float = 45 * KMH, pedestrian_speed_ms: float = 1.4,
                 meet_s: float = 8.0, pedestrian_offset_s: float = 0.0, duration_s: float = 12.0,
                 seed: int = 0, name: str = "los_crossing") -> ScenarioConfig:
    """A vehicle and a crossing pedestrian in clear view of each other.

    Both reach the crossing point (0, 0) at ``meet_s``, or the pedestrian
    ``pedestrian_offset_s`` later (a near miss when the offset is large).
    """
    end = int(duration_s * 1000)
    veh_start = (-vehicle_speed_ms * meet_s, 0.0)
    ped_t = meet_s + pedestrian_offset_s
    ped_start = (0.0, -pedestrian_speed_ms * ped_t)
    actors = (
        _cruise(V, veh_start, (vehicle_speed_ms, 0.0), end, DRIVE, "vehicle"),
        _cruise(P, ped_start, (0.0, pedestrian_speed_ms), end, WALK, "pedestrian"),
    )
    return ScenarioConfig(name=name, duration_s=duration_s, seed=seed, actors=actors,
                          description="Pedestrian crossing in front of an approaching vehicle, line of sight.")


def nlos_parked_cars() -> ScenarioConfig:
    """A pedestrian steps out from behind a row of parked cars."""
    end = 12_000
    v = 45 * KMH
    ped = ActorSpec(P, (0.0, -8.0), (
        VelocitySegment(2_000, (0.0, 0.0), STAND),
        VelocitySegment(end, (0.0, 1.6), WALK),
    ), "pedestrian behind parked cars")
    # the pedestrian reaches the lane at 7 s; so does the vehicle
    veh = _cruise(V, (-v * 7.0, 0.0), (v, 0.0), end, DRIVE, "vehicle")
    return ScenarioConfig(
        name="nlos_parked_cars", duration_s=12.0, actors=(veh, ped),
        occluders=((-30.0, -6.0, -2.0, -4.0), (1.0, -6.0, 14.0, -4.0)),
        description="Pedestrian hidden by parked cars crosses in front of a vehicle. The occluders "
                    "are annotations only: the cellular path is routed through infrastructure, so "
                    "blocked line of sight does not affect delivery.")


def distracted_pedestrian() -> ScenarioConfig:
    """A pedestrian walking along the road turns into it without looking."""
    end = 16_000
    v = 45 * KMH
    ped = ActorSpec(P, (0.0, -12.0), (
        VelocitySegment(3_000, (1.3, 0.0), WALK),
        VelocitySegment(end, (0.0, 1.5), WALK),
    ), "distracted pedestrian")
    # pedestrian enters the eastbound lane (y = 0) at 3 + 12/1.5 = 11 s at x = 3.9
    veh = _cruise(V, (3.9 - v * 11.0, 0.0), (v, 0.0), end, DRIVE, "eastbound vehicle")
    # westbound traffic passes the crossing point well before the pedestrian gets there
    oncoming = _cruise(V, (3.9 + v * 6.0, 3.5), (-v, 0.0), end, DRIVE, "westbound vehicle")
    return ScenarioConfig(name="distracted_pedestrian", duration_s=16.0, actors=(veh, oncoming, ped),
                          description="Pedestrian turns from the sidewalk into the road without looking.")


def shared_road() -> ScenarioConfig:
    """A vehicle overtakes a cyclist too closely, then meets a crossing pedestrian."""
    end = 18_000
    bike_v, car_v = 30 * KMH, 90 * KMH
    cyclist = _cruise(C, (0.0, -1.0), (bike_v, 0.0), end, CYCLE, "cyclist")
    vehicle = _cruise(V, (-120.0, -0.5), (car_v, 0.0), end, DRIVE, "vehicle")
    # the vehicle reaches x = 250 at (250 + 120) / 25 = 14.8 s; so does the pedestrian
    walk_s = 10.0
    ped = ActorSpec(P, (250.0, -0.5 - 1.4 * walk_s), (
        VelocitySegment(4_800, (0.0, 0.0), STAND),
        VelocitySegment(end, (0.0, 1.4), WALK),
    ), "crossing pedestrian")
    return ScenarioConfig(name="shared_road", duration_s=18.0, actors=(cyclist, vehicle, ped),
                          description="Vehicle overtaking a cyclist on a shared road, then a road crossing.")


def intersection_load(n_actors: int = 5000, radius_m: float = 295.0, duration_s: float = 30.0,
                      publish_rate_hz: float = 10.0, seed: int = 7) -> ScenarioConfig:
    """A dense four-way intersection: ``n_actors`` users inside a 300 m zone.

    Vehicles drive the two roads; a few pedestrians use the crosswalks and
    conflict with traffic; everyone else moves through the quadrants away
    from the roads.
    """
    rng = np.random.default_rng(seed)
    end = int(duration_s * 1000)
    actors: list[ActorSpec] = []
    lane = 3.5
    per_lane = 25
    n_veh = min(4 * per_lane, n_actors)
    for k in range(n_veh):
        lane_no, slot = divmod(k, per_lane)
        speed = float(rng.uniform(10.0, 14.0))
        along = -radius_m + 5.0 + slot * (2 * radius_m - 10.0) / per_lane
        if lane_no == 0:
            start, vel = (along, -lane), (speed, 0.0)
        elif lane_no == 1:
            start, vel = (-along, lane), (-speed, 0.0)
        elif lane_no == 2:
            start, vel = (lane, along), (0.0, speed)
        else:
            start, vel = (-lane, -along), (0.0, -speed)
        actors.append(_cruise(V, start, vel, end, DRIVE))

    n_cross = min(16, n_actors - len(actors))
    for k in range(n_cross):
        # crosswalks sit 12 m from the center on each approach
        side = k % 4
        depart = int(rng.integers(0, 15)) * 1000
        v = float(rng.uniform(1.1, 1.6))
        if side == 0:
            start, vel = (12.0, -9.0), (0.0, v)
        elif side == 1:
            start, vel = (-12.0, 9.0), (0.0, -v)
        elif side == 2:
            start, vel = (-9.0, 12.0), (v, 0.0)
        else:
            start, vel = (9.0, -12.0), (-v, 0.0)
        script = (VelocitySegment(depart, (0.0, 0.0), STAND), VelocitySegment(depart + 13_000, vel, WALK)) \
            if depart else (VelocitySegment(13_000, vel, WALK),)
        actors.append(ActorSpec(P, start, script))

    rest = n_actors - len(actors)
    kinds = rng.choice([0, 1, 2, 3], size=rest, p=[0.62, 0.16, 0.17, 0.05])
    spec_by_kind = {0: (P, WALK, 0.8, 1.6), 1: (P, STAND, 0.0, 0.0), 2: (C, CYCLE, 3.0, 7.0),
                    3: (M, RIDE, 8.0, 14.0)}
    for kind in kinds:
        profile, motion, lo, hi = spec_by_kind[int(kind)]
        while True:
            r = radius_m * math.sqrt(rng.uniform())
            th = rng.uniform(0.0, 2 * math.pi)
            x, y = r * math.cos(th), r * math.sin(th)
            if abs(x) > 9.0 and abs(y) > 9.0:
                break
        # heading away from both roads so quadrant users never enter traffic
        ang = rng.uniform(0.0, math.pi / 2)
        speed = rng.uniform(lo, hi)
        vel = (math.copysign(speed * math.cos(ang), x), math.copysign(speed * math.sin(ang), y))
        actors.append(_cruise(profile, (float(x), float(y)), (float(vel[0]), float(vel[1])), end, motion))

    return ScenarioConfig(
        name="intersection_load", duration_s=duration_s, seed=seed, actors=tuple(actors),
        publish_rate_hz=publish_rate_hz, state_sample_ms=1000,
        description=f"{n_actors} road users within {radius_m:.0f} m of a four-way intersection.")


_BUILTINS: dict[str, Callable[[], ScenarioConfig]] = {
    "nlos_parked_cars": nlos_parked_cars,
    "los_crossing": los_crossing,
    "distracted_pedestrian": distracted_pedestrian,
    "shared_road": shared_road,
    "intersection_load": intersection_load,
}

BUILTIN_NAMES = tuple(_BUILTINS)


def builtin_scenario(name: str) -> ScenarioConfig:
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {', '.join(BUILTIN_NAMES)}") from None
    cfg = factory()
    cfg.validate()
    return cfg


def los_crossing_variants(n: int, seed: int = 2024) -> list[ScenarioConfig]:
    """Randomized crossing encounters: roughly half collide, half are near misses."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        offset = 0.0 if k % 2 == 0 else float(rng.choice([-1, 1]) * rng.uniform(1.5, 3.0))
        out.append(los_crossing(
            vehicle_speed_ms=float(rng.uniform(10.0, 15.0)),
            pedestrian_speed_ms=float(rng.uniform(1.1, 1.7)),
            meet_s=float(rng.uniform(7.0, 9.0)),
            pedestrian_offset_s=offset,
            duration_s=14.0,
            seed=seed * 1000 + k,
            name=f"los_crossing_variant_{k}",
        ))
    return out

"""Road-user state shared by the risk, geocast and scenario layers."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import IntEnum


class VruProfile(IntEnum):
    PEDESTRIAN = 1
    CYCLIST = 2
    MOTORCYCLIST = 3
    VEHICLE = 4
    INFRASTRUCTURE = 5

    @property
    def is_vru(self) -> bool:
        return self in (VruProfile.PEDESTRIAN, VruProfile.CYCLIST, VruProfile.MOTORCYCLIST)

    @classmethod
    def parse(cls, name: str) -> "VruProfile":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown profile {name!r}") from None


class MotionState(IntEnum):
    STANDING = 0
    WALKING = 1
    RUNNING = 2
    CYCLING = 3
    RIDING = 4
    DRIVING = 5
    IDLE = 6

    @property
    def is_stationary(self) -> bool:
        return self in (MotionState.STANDING, MotionState.IDLE)

    @classmethod
    def parse(cls, name: str) -> "MotionState":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown motion state {name!r}") from None


# m/s; configurable per scenario through ScenarioConfig.speed_caps
DEFAULT_SPEED_CAPS = {
    VruProfile.PEDESTRIAN: 3.0,
    VruProfile.CYCLIST: 15.0,
    VruProfile.MOTORCYCLIST: 50.0,
    VruProfile.VEHICLE: 60.0,
    VruProfile.INFRASTRUCTURE: 0.0,
}


@dataclass(frozen=True, slots=True)
class RoadUserState:
    actor_id: int
    pseudonym: int
    profile: VruProfile
    motion_state: MotionState
    position_m: tuple[float, float]
    velocity_ms: tuple[float, float]
    timestamp_ms: int = 0
    sigma_m: float = 0.0

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity_ms)

    @property
    def heading_deg(self) -> float:
        """Compass heading: 0 = +y (north), clockwise positive, in [0, 360)."""
        vx, vy = self.velocity_ms
        if vx == 0.0 and vy == 0.0:
            return 0.0
        return math.degrees(math.atan2(vx, vy)) % 360.0

    def effective_velocity(self) -> tuple[float, float]:
        # context override: a standing/idle user is predicted not to move
        if self.motion_state.is_stationary:
            return (0.0, 0.0)
        return self.velocity_ms

    def with_(self, **changes) -> "RoadUserState":
        return replace(self, **changes)


def velocity_from_heading(speed: float, heading_deg: float) -> tuple[float, float]:
    h = math.radians(heading_deg)
    return (speed * math.sin(h), speed * math.cos(h))

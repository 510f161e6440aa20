"""Scenario configuration, motion scripts and the strict JSON loader."""

from __future__ import annotations

import bisect
import json
import math
from importlib import resources
from dataclasses import dataclass, field, fields, replace
from typing import Any, Mapping, Optional, Sequence, Union

from ..geocast import GeoOrigin
from ..netsim.latency import LINK_NAMES, LinkLatencyModel, default_links
from ..netsim.pipeline import DEFAULT_DENM_VALIDITY_MS, DEFAULT_STALENESS_MS, PipelineMode
from ..risk import RequirementProfile, WarningPolicy, pair_key
from ..state import DEFAULT_SPEED_CAPS, MotionState, RoadUserState, VruProfile


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class VelocitySegment:
    """Move with ``velocity`` from the previous boundary until ``until_ms``."""

    until_ms: int
    velocity: tuple[float, float]
    motion_state: MotionState


@dataclass(frozen=True)
class Waypoint:
    """Arrive at ``position`` at ``at_ms``, moving linearly from the previous point."""

    at_ms: int
    position: tuple[float, float]
    motion_state: MotionState


ScriptEntry = Union[VelocitySegment, Waypoint]


@dataclass(frozen=True)
class ActorSpec:
    profile: VruProfile
    start: tuple[float, float]
    script: tuple[ScriptEntry, ...] = ()
    label: str = ""


@dataclass(frozen=True, slots=True)
class _Segment:
    t0_ms: int
    t1_ms: float
    p0: tuple[float, float]
    velocity: tuple[float, float]
    motion_state: MotionState


def _rest_state(profile: VruProfile) -> MotionState:
    return MotionState.IDLE if profile in (VruProfile.VEHICLE, VruProfile.INFRASTRUCTURE) \
        else MotionState.STANDING


class MotionScript:
    """Piecewise constant-velocity motion evaluated in closed form.

    Position at time t is ``p0 + v * (t - t0)`` of the active segment, so the
    result does not depend on how the caller steps through time. After the
    last entry the actor rests at its final position.
    """

    def __init__(self, profile: VruProfile, start: Sequence[float], entries: Sequence[ScriptEntry]):
        self.profile = profile
        segs: list[_Segment] = []
        t0, p0 = 0, (float(start[0]), float(start[1]))
        for e in entries:
            if isinstance(e, VelocitySegment):
                t1 = int(e.until_ms)
                if t1 <= t0:
                    raise ConfigError(f"segment end {t1} ms not after {t0} ms")
                v = (float(e.velocity[0]), float(e.velocity[1]))
                segs.append(_Segment(t0, t1, p0, v, e.motion_state))
                dt = (t1 - t0) / 1000.0
                p0 = (p0[0] + v[0] * dt, p0[1] + v[1] * dt)
            else:
                t1 = int(e.at_ms)
                if t1 <= t0:
                    raise ConfigError(f"waypoint time {t1} ms not after {t0} ms")
                dt = (t1 - t0) / 1000.0
                target = (float(e.position[0]), float(e.position[1]))
                v = ((target[0] - p0[0]) / dt, (target[1] - p0[1]) / dt)
                segs.append(_Segment(t0, t1, p0, v, e.motion_state))
                p0 = target
            t0 = t1
        segs.append(_Segment(t0, math.inf, p0, (0.0, 0.0), _rest_state(profile)))
        self.segments = segs
        self._starts = [s.t0_ms for s in segs]

    def segment_at(self, t_ms: float) -> _Segment:
        i = bisect.bisect_right(self._starts, t_ms) - 1
        return self.segments[max(i, 0)]

    def position_at(self, t_ms: float) -> tuple[float, float]:
        s = self.segment_at(t_ms)
        dt = (t_ms - s.t0_ms) / 1000.0
        return (s.p0[0] + s.velocity[0] * dt, s.p0[1] + s.velocity[1] * dt)

    def kinematics_at(self, t_ms: float):
        s = self.segment_at(t_ms)
        dt = (t_ms - s.t0_ms) / 1000.0
        return (s.p0[0] + s.velocity[0] * dt, s.p0[1] + s.velocity[1] * dt), s.velocity, s.motion_state

    def state_at(self, t_ms: int, actor_id: int = 0, pseudonym: int = 0) -> RoadUserState:
        pos, vel, motion = self.kinematics_at(t_ms)
        return RoadUserState(actor_id, pseudonym, self.profile, motion, pos, vel, int(t_ms), 0.0)

    def max_speed(self) -> float:
        return max(math.hypot(*s.velocity) for s in self.segments)

    def extent(self, until_ms: float) -> tuple[float, float, float, float]:
        pts = [s.p0 for s in self.segments if s.t0_ms <= until_ms]
        pts.append(self.position_at(until_ms))
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        return min(xs), min(ys), max(xs), max(ys)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    duration_s: float
    tick_ms: int = 100
    seed: int = 0
    origin: GeoOrigin = GeoOrigin(-27.4698, 153.0251)
    noise_sigma_m: float = 0.0
    pipeline: PipelineMode = PipelineMode.CENTRAL
    latency: Mapping[str, LinkLatencyModel] = field(default_factory=default_links)
    policy: WarningPolicy = field(default_factory=WarningPolicy)
    cell_size_m: int = 100
    actors: tuple[ActorSpec, ...] = ()
    # operational parameters with documented defaults
    description: str = ""
    occluders: tuple[tuple[float, float, float, float], ...] = ()
    publish_rate_hz: float = 10.0
    vam_path_points: int = 3
    pseudonym_epoch_s: float = 300.0
    edge_zone_cells: int = 16
    state_sample_ms: Optional[int] = None
    staleness_ms: float = DEFAULT_STALENESS_MS
    denm_validity_ms: int = DEFAULT_DENM_VALIDITY_MS
    speed_caps: Mapping[VruProfile, float] = field(default_factory=lambda: dict(DEFAULT_SPEED_CAPS))
    requirements: RequirementProfile = RequirementProfile()

    def __post_init__(self):
        links = dict(default_links())
        links.update(self.latency)
        object.__setattr__(self, "latency", links)
        caps = dict(DEFAULT_SPEED_CAPS)
        caps.update({VruProfile(k): float(v) for k, v in self.speed_caps.items()})
        object.__setattr__(self, "speed_caps", caps)
        object.__setattr__(self, "pipeline", PipelineMode(self.pipeline))
        object.__setattr__(self, "actors", tuple(self.actors))
        object.__setattr__(self, "occluders", tuple(tuple(o) for o in self.occluders))

    @property
    def duration_ms(self) -> int:
        return int(round(self.duration_s * 1000))

    @property
    def publish_interval_ms(self) -> int:
        return int(round(1000.0 / self.publish_rate_hz))

    @property
    def sample_interval_ms(self) -> int:
        return self.tick_ms if self.state_sample_ms is None else self.state_sample_ms

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def validate(self) -> None:
        if not self.name:
            raise ConfigError("scenario needs a name")
        if not self.duration_s > 0:
            raise ConfigError("duration_s must be > 0")
        if self.tick_ms <= 0 or 1000 % self.tick_ms:
            raise ConfigError(f"tick_ms={self.tick_ms} must divide 1000")
        if self.noise_sigma_m < 0:
            raise ConfigError("noise_sigma_m must be >= 0")
        if not isinstance(self.cell_size_m, int) or self.cell_size_m <= 0:
            raise ConfigError("cell_size_m must be a positive integer")
        if not self.publish_rate_hz > 0 or abs(1000.0 / self.publish_rate_hz - self.publish_interval_ms) > 1e-9:
            raise ConfigError("publish_rate_hz must give a whole-millisecond interval")
        if self.publish_interval_ms % self.tick_ms:
            raise ConfigError("publish interval must be a multiple of tick_ms")
        if not 0 <= self.vam_path_points <= 10:
            raise ConfigError("vam_path_points must be in [0, 10]")
        if self.pseudonym_epoch_s <= 0:
            raise ConfigError("pseudonym_epoch_s must be > 0")
        if self.edge_zone_cells <= 0:
            raise ConfigError("edge_zone_cells must be > 0")
        if self.sample_interval_ms < 0 or (self.sample_interval_ms and self.sample_interval_ms % self.tick_ms):
            raise ConfigError("state_sample_ms must be 0 or a multiple of tick_ms")
        if self.staleness_ms <= 0 or self.denm_validity_ms <= 0:
            raise ConfigError("staleness_ms and denm_validity_ms must be > 0")
        unknown = set(self.latency) - set(LINK_NAMES)
        if unknown:
            raise ConfigError(f"unknown links {sorted(unknown)}")
        for i, a in enumerate(self.actors):
            try:
                script = MotionScript(a.profile, a.start, a.script)
            except ConfigError as exc:
                raise ConfigError(f"actor {i}: {exc}") from None
            cap = self.speed_caps[a.profile]
            if script.max_speed() > cap + 1e-9:
                raise ConfigError(f"actor {i} ({a.profile.name.lower()}) exceeds speed cap {cap} m/s")


# -- JSON mapping -------------------------------------------------------------

def _strict(d: Any, allowed: set, where: str, required: Sequence[str] = ()) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown field(s) in {where}: {sorted(extra)}")
    missing = [k for k in required if k not in d]
    if missing:
        raise ConfigError(f"missing field(s) in {where}: {missing}")
    return d


def _pair(v, where: str) -> tuple[float, float]:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"{where} must be a [x, y] pair")
    try:
        return (float(v[0]), float(v[1]))
    except (TypeError, ValueError):
        raise ConfigError(f"{where} must be numeric") from None


def _pair_name(k) -> str:
    a, b = pair_key(*k)
    return f"{a.name.lower()}+{b.name.lower()}"


def _parse_pair_name(s: str):
    parts = s.split("+")
    if len(parts) != 2:
        raise ConfigError(f"collision radius key {s!r} must look like 'pedestrian+vehicle'")
    return pair_key(VruProfile.parse(parts[0]), VruProfile.parse(parts[1]))


def policy_to_dict(p: WarningPolicy) -> dict:
    return {
        "reaction_s": p.reaction_s, "latency_budget_s": p.latency_budget_s,
        "maneuver_s": p.maneuver_s, "margin_s": p.margin_s,
        "collision_radius_m": {_pair_name(k): v for k, v in sorted(p.collision_radius_m.items())},
        "awareness_factor": p.awareness_factor, "imminent_s": p.imminent_s,
    }


def policy_from_dict(d: dict) -> WarningPolicy:
    names = {f.name for f in fields(WarningPolicy)}
    _strict(d, names, "policy")
    kw = dict(d)
    if "collision_radius_m" in kw:
        radii = _strict(kw["collision_radius_m"], set(kw["collision_radius_m"]), "collision_radius_m")
        kw["collision_radius_m"] = {_parse_pair_name(k): float(v) for k, v in radii.items()}
    try:
        return WarningPolicy(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"policy: {exc}") from None


def _entry_to_dict(e: ScriptEntry) -> dict:
    if isinstance(e, VelocitySegment):
        return {"until_ms": e.until_ms, "velocity": list(e.velocity), "motion_state": e.motion_state.name.lower()}
    return {"at_ms": e.at_ms, "position": list(e.position), "motion_state": e.motion_state.name.lower()}


def _entry_from_dict(d: dict, where: str) -> ScriptEntry:
    if isinstance(d, dict) and "until_ms" in d:
        _strict(d, {"until_ms", "velocity", "motion_state"}, where, ("until_ms", "velocity", "motion_state"))
        return VelocitySegment(int(d["until_ms"]), _pair(d["velocity"], where + ".velocity"),
                               MotionState.parse(d["motion_state"]))
    _strict(d, {"at_ms", "position", "motion_state"}, where, ("at_ms", "position", "motion_state"))
    return Waypoint(int(d["at_ms"]), _pair(d["position"], where + ".position"),
                    MotionState.parse(d["motion_state"]))


def actor_to_dict(a: ActorSpec) -> dict:
    d = {"profile": a.profile.name.lower(), "start": list(a.start),
         "script": [_entry_to_dict(e) for e in a.script]}
    if a.label:
        d["label"] = a.label
    return d


def actor_from_dict(d: dict, where: str) -> ActorSpec:
    _strict(d, {"profile", "start", "script", "label"}, where, ("profile", "start"))
    try:
        profile = VruProfile.parse(d["profile"])
        script = tuple(_entry_from_dict(e, f"{where}.script[{i}]") for i, e in enumerate(d.get("script", [])))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    return ActorSpec(profile, _pair(d["start"], where + ".start"), script, str(d.get("label", "")))


def config_to_dict(c: ScenarioConfig) -> dict:
    req = c.requirements
    default_req = RequirementProfile()
    return {
        "name": c.name,
        "duration_s": c.duration_s,
        "tick_ms": c.tick_ms,
        "seed": c.seed,
        "origin": {"lat_deg": c.origin.lat_deg, "lon_deg": c.origin.lon_deg},
        "noise_sigma_m": c.noise_sigma_m,
        "pipeline": c.pipeline.value,
        "latency": {k: c.latency[k].to_dict() for k in LINK_NAMES},
        "policy": policy_to_dict(c.policy),
        "cell_size_m": c.cell_size_m,
        "actors": [actor_to_dict(a) for a in c.actors],
        "description": c.description,
        "occluders": [list(o) for o in c.occluders],
        "publish_rate_hz": c.publish_rate_hz,
        "vam_path_points": c.vam_path_points,
        "pseudonym_epoch_s": c.pseudonym_epoch_s,
        "edge_zone_cells": c.edge_zone_cells,
        "state_sample_ms": c.state_sample_ms,
        "staleness_ms": c.staleness_ms,
        "denm_validity_ms": c.denm_validity_ms,
        "speed_caps": {p.name.lower(): v for p, v in sorted(c.speed_caps.items())},
        "requirements": {f.name: getattr(req, f.name) for f in fields(RequirementProfile)
                         if getattr(req, f.name) != getattr(default_req, f.name)},
    }


_TOP_FIELDS = {f.name for f in fields(ScenarioConfig)}


def config_from_dict(d: dict) -> ScenarioConfig:
    _strict(d, _TOP_FIELDS, "scenario", ("name", "duration_s"))
    kw: dict[str, Any] = {k: v for k, v in d.items()
                          if k not in ("origin", "latency", "policy", "actors", "pipeline",
                                       "speed_caps", "requirements", "occluders")}
    try:
        if "origin" in d:
            o = _strict(d["origin"], {"lat_deg", "lon_deg", "earth_radius_m"}, "origin", ("lat_deg", "lon_deg"))
            kw["origin"] = GeoOrigin(**o)
        if "pipeline" in d:
            kw["pipeline"] = PipelineMode(d["pipeline"])
        if "latency" in d:
            lat = _strict(d["latency"], set(LINK_NAMES), "latency")
            kw["latency"] = {
                name: LinkLatencyModel(**_strict(m, {"kind", "base_ms", "jitter_ms", "sigma", "drop_probability"},
                                                 f"latency.{name}"))
                for name, m in lat.items()}
        if "policy" in d:
            kw["policy"] = policy_from_dict(d["policy"])
        if "actors" in d:
            if not isinstance(d["actors"], list):
                raise ConfigError("actors must be a list")
            kw["actors"] = tuple(actor_from_dict(a, f"actors[{i}]") for i, a in enumerate(d["actors"]))
        if "occluders" in d:
            kw["occluders"] = tuple(tuple(float(x) for x in o) for o in d["occluders"])
        if "speed_caps" in d:
            kw["speed_caps"] = {VruProfile.parse(k): float(v) for k, v in d["speed_caps"].items()}
        if "requirements" in d:
            req = _strict(d["requirements"], {f.name for f in fields(RequirementProfile)}, "requirements")
            kw["requirements"] = RequirementProfile(**req)
        cfg = ScenarioConfig(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def load_scenario(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fp:
        try:
            data = json.load(fp)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data)


def dump_scenario(cfg: ScenarioConfig, fp=None, indent: Optional[int] = 2) -> Optional[str]:
    text = json.dumps(config_to_dict(cfg), indent=indent)
    if fp is None:
        return text
    fp.write(text + "\n")
    return None


def scenario_schema() -> dict:
    """The JSON Schema that scenario documents conform to."""
    return json.loads(resources.files("v2vru").joinpath("schemas/scenario.schema.json").read_text("utf-8"))

"""Awareness (VAM) and event (DENM) messages with fixed little-endian codecs.

Wire layouts::

    VAM  = kind:u8 version:u8 pseudonym:u32 timestamp_ms:u64 x_cm:i32 y_cm:i32
           speed_cms:u16 heading_cdeg:u16 profile:u8 motion:u8 accuracy_dm:u8
           n_path:u8 { dx_cm:i32 dy_cm:i32 } * n_path            (30 + 8n bytes)
    DENM = kind:u8 version:u8 event_id:u32 event_type:u8 x_cm:i32 y_cm:i32
           danger:u8 ttc_ms:u32 validity_ms:u32 radius_m:u16 n_targets:u8
           { pseudonym:u32 } * n_targets                          (27 + 4k bytes)

Bit 7 of the version byte is reserved for a security flag. It must be clear;
signed messages are not supported.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Union

from .state import MotionState, RoadUserState, VruProfile

PROTOCOL_VERSION = 1
SECURITY_FLAG = 0x80

VAM_MAX_BYTES = 300
DENM_MAX_BYTES = 1200
MAX_PATH_POINTS = 10
MAX_TARGETS = 64
DEFAULT_PSEUDONYM_EPOCH_MS = 300_000

INT32_MAX = 2**31 - 1
UINT32_MAX = 2**32 - 1

_VAM_HEAD = struct.Struct("<BBIQiiHHBBBB")
_DENM_HEAD = struct.Struct("<BBIBiiBIIHB")
_POINT = struct.Struct("<ii")
_INT32_MIN = -(2**31)
_U32 = struct.Struct("<I")

assert _VAM_HEAD.size == 30 and _DENM_HEAD.size == 27

NodeId = Union[int, str]


class MessageKind(IntEnum):
    VAM = 0x01
    DENM = 0x02


class EventType(IntEnum):
    COLLISION_RISK = 1
    HAZARD = 2


class CodecError(ValueError):
    """Raised for any message that cannot be encoded or decoded."""


class TruncatedError(CodecError):
    pass


class TrailingBytesError(CodecError):
    pass


@dataclass(frozen=True, slots=True)
class VamMessage:
    pseudonym: int
    timestamp_ms: int
    position_cm: tuple[int, int]
    speed_cms: int
    heading_cdeg: int
    profile: VruProfile
    motion_state: MotionState
    position_accuracy_dm: int = 0
    path_points: tuple[tuple[int, int], ...] = ()
    protocol_version: int = PROTOCOL_VERSION

    @property
    def encoded_size(self) -> int:
        return _VAM_HEAD.size + _POINT.size * len(self.path_points)


@dataclass(frozen=True, slots=True)
class DenmMessage:
    event_id: int
    event_type: EventType
    event_position_cm: tuple[int, int]
    danger_level: int
    ttc_ms: int
    validity_ms: int
    relevance_radius_m: int
    target_pseudonyms: tuple[int, ...] = ()
    protocol_version: int = PROTOCOL_VERSION

    @property
    def encoded_size(self) -> int:
        return _DENM_HEAD.size + _U32.size * len(self.target_pseudonyms)


@dataclass(frozen=True, slots=True)
class MessageEnvelope:
    kind: MessageKind
    sender: NodeId
    topic: object  # geocast.TopicId; kept untyped here to avoid an import cycle
    payload: bytes
    publish_time_ms: float
    seq: int = field(default=0, compare=False)

    def decode(self) -> Union[VamMessage, DenmMessage]:
        if self.kind is MessageKind.VAM:
            return decode_vam(self.payload)
        return decode_denm(self.payload)


def _check_range(name: str, value: int, lo: int, hi: int) -> None:
    if type(value) is not int and (not isinstance(value, int) or isinstance(value, bool)):
        raise CodecError(f"{name}={value!r} is not an integer")
    if not lo <= value <= hi:
        raise CodecError(f"{name}={value!r} outside [{lo}, {hi}]")


def _check_version(version: int) -> None:
    _check_range("protocol_version", version, 0, 0xFF)
    if version & SECURITY_FLAG:
        raise CodecError("security flag set; signed messages are not supported")


def _check_position(name: str, pos: tuple[int, int]) -> None:
    if len(pos) != 2:
        raise CodecError(f"{name} must be a pair")
    for v in pos:
        _check_range(name, v, -INT32_MAX, INT32_MAX)


def validate_vam(msg: VamMessage) -> None:
    _check_version(msg.protocol_version)
    _check_range("pseudonym", msg.pseudonym, 0, UINT32_MAX)
    _check_range("timestamp_ms", msg.timestamp_ms, 0, 2**64 - 1)
    _check_position("position_cm", msg.position_cm)
    _check_range("speed_cms", msg.speed_cms, 0, 0xFFFF)
    _check_range("heading_cdeg", msg.heading_cdeg, 0, 35999)
    try:
        VruProfile(msg.profile)
        MotionState(msg.motion_state)
    except ValueError as exc:
        raise CodecError(str(exc)) from None
    _check_range("position_accuracy_dm", msg.position_accuracy_dm, 0, 0xFF)
    if len(msg.path_points) > MAX_PATH_POINTS:
        raise CodecError(f"{len(msg.path_points)} path points > {MAX_PATH_POINTS}")
    for p in msg.path_points:
        _check_position("path_point", p)


def validate_denm(msg: DenmMessage) -> None:
    _check_version(msg.protocol_version)
    _check_range("event_id", msg.event_id, 0, UINT32_MAX)
    try:
        EventType(msg.event_type)
    except ValueError as exc:
        raise CodecError(str(exc)) from None
    _check_position("event_position_cm", msg.event_position_cm)
    _check_range("danger_level", msg.danger_level, 0, 3)
    _check_range("ttc_ms", msg.ttc_ms, 0, UINT32_MAX)
    _check_range("validity_ms", msg.validity_ms, 0, UINT32_MAX)
    _check_range("relevance_radius_m", msg.relevance_radius_m, 1, 0xFFFF)
    if len(msg.target_pseudonyms) > MAX_TARGETS:
        raise CodecError(f"{len(msg.target_pseudonyms)} targets > {MAX_TARGETS}")
    for t in msg.target_pseudonyms:
        _check_range("target_pseudonym", t, 0, UINT32_MAX)


def encode_vam(msg: VamMessage) -> bytes:
    validate_vam(msg)
    head = _VAM_HEAD.pack(
        MessageKind.VAM,
        msg.protocol_version,
        msg.pseudonym,
        msg.timestamp_ms,
        msg.position_cm[0],
        msg.position_cm[1],
        msg.speed_cms,
        msg.heading_cdeg,
        msg.profile,
        msg.motion_state,
        msg.position_accuracy_dm,
        len(msg.path_points),
    )
    return head + b"".join(_POINT.pack(*p) for p in msg.path_points)


def decode_vam(data: bytes) -> VamMessage:
    if len(data) < _VAM_HEAD.size:
        raise TruncatedError(f"VAM needs {_VAM_HEAD.size} header bytes, got {len(data)}")
    (kind, version, pseudonym, ts, x, y, speed, heading,
     profile, motion, accuracy, n) = _VAM_HEAD.unpack_from(data)
    if kind != MessageKind.VAM:
        raise CodecError(f"wrong kind tag 0x{kind:02x} for VAM")
    expected = _VAM_HEAD.size + _POINT.size * n
    if len(data) < expected:
        raise TruncatedError(f"VAM declares {n} path points, needs {expected} bytes")
    if len(data) > expected:
        raise TrailingBytesError(f"{len(data) - expected} trailing bytes after VAM")
    points = tuple(_POINT.unpack_from(data, _VAM_HEAD.size + _POINT.size * i) for i in range(n))
    try:
        msg = VamMessage(
            pseudonym=pseudonym,
            timestamp_ms=ts,
            position_cm=(x, y),
            speed_cms=speed,
            heading_cdeg=heading,
            profile=VruProfile(profile),
            motion_state=MotionState(motion),
            position_accuracy_dm=accuracy,
            path_points=points,
            protocol_version=version,
        )
    except ValueError as exc:
        raise CodecError(str(exc)) from None
    # field widths bound everything else; check what they cannot
    _check_version(version)
    if heading > 35999:
        raise CodecError(f"heading_cdeg={heading} outside [0, 35999]")
    if x == _INT32_MIN or y == _INT32_MIN or any(_INT32_MIN in p for p in points):
        raise CodecError("position outside the signed 31-bit magnitude range")
    return msg


def encode_denm(msg: DenmMessage) -> bytes:
    validate_denm(msg)
    head = _DENM_HEAD.pack(
        MessageKind.DENM,
        msg.protocol_version,
        msg.event_id,
        msg.event_type,
        msg.event_position_cm[0],
        msg.event_position_cm[1],
        msg.danger_level,
        msg.ttc_ms,
        msg.validity_ms,
        msg.relevance_radius_m,
        len(msg.target_pseudonyms),
    )
    return head + b"".join(_U32.pack(t) for t in msg.target_pseudonyms)


def decode_denm(data: bytes) -> DenmMessage:
    if len(data) < _DENM_HEAD.size:
        raise TruncatedError(f"DENM needs {_DENM_HEAD.size} header bytes, got {len(data)}")
    (kind, version, event_id, event_type, x, y, danger,
     ttc, validity, radius, k) = _DENM_HEAD.unpack_from(data)
    if kind != MessageKind.DENM:
        raise CodecError(f"wrong kind tag 0x{kind:02x} for DENM")
    expected = _DENM_HEAD.size + _U32.size * k
    if len(data) < expected:
        raise TruncatedError(f"DENM declares {k} targets, needs {expected} bytes")
    if len(data) > expected:
        raise TrailingBytesError(f"{len(data) - expected} trailing bytes after DENM")
    targets = tuple(_U32.unpack_from(data, _DENM_HEAD.size + 4 * i)[0] for i in range(k))
    try:
        msg = DenmMessage(
            event_id=event_id,
            event_type=EventType(event_type),
            event_position_cm=(x, y),
            danger_level=danger,
            ttc_ms=ttc,
            validity_ms=validity,
            relevance_radius_m=radius,
            target_pseudonyms=targets,
            protocol_version=version,
        )
    except ValueError as exc:
        raise CodecError(str(exc)) from None
    _check_version(version)
    if danger > 3:
        raise CodecError(f"danger_level={danger} outside [0, 3]")
    if radius == 0:
        raise CodecError("relevance_radius_m must be > 0")
    if x == _INT32_MIN or y == _INT32_MIN:
        raise CodecError("position outside the signed 31-bit magnitude range")
    return msg


def peek_kind(data: bytes) -> MessageKind:
    if not data:
        raise TruncatedError("empty message")
    try:
        return MessageKind(data[0])
    except ValueError:
        raise CodecError(f"unknown kind tag 0x{data[0]:02x}") from None


# -- unit conversion ---------------------------------------------------------

def to_cm(meters: float) -> int:
    return int(round(meters * 100.0))


def speed_to_cms(speed_ms: float) -> int:
    return min(0xFFFF, int(round(speed_ms * 100.0)))


def heading_to_cdeg(heading_deg: float) -> int:
    return int(round((heading_deg % 360.0) * 100.0)) % 36000


def sigma_to_dm(sigma_m: float) -> int:
    return min(0xFF, int(math.ceil(sigma_m * 10.0 - 1e-9)))


def vam_from_state(state: RoadUserState, path_horizons_s: tuple[float, ...] = ()) -> VamMessage:
    """Build the awareness message a device would send for ``state``.

    Path points are constant-velocity offsets from the current position at the
    given look-ahead times.
    """
    vx, vy = state.effective_velocity()
    points = tuple((to_cm(vx * h), to_cm(vy * h)) for h in path_horizons_s)
    return VamMessage(
        pseudonym=state.pseudonym,
        timestamp_ms=int(state.timestamp_ms),
        position_cm=(to_cm(state.position_m[0]), to_cm(state.position_m[1])),
        speed_cms=speed_to_cms(state.speed),
        heading_cdeg=heading_to_cdeg(state.heading_deg),
        profile=state.profile,
        motion_state=state.motion_state,
        position_accuracy_dm=sigma_to_dm(state.sigma_m),
        path_points=points,
    )


def vam_kinematics(msg: VamMessage) -> tuple[float, float, float, float]:
    """(x, y, vx, vy) in meters and m/s as a receiver reconstructs them."""
    speed = msg.speed_cms / 100.0
    h = math.radians(msg.heading_cdeg / 100.0)
    return (msg.position_cm[0] / 100.0, msg.position_cm[1] / 100.0,
            speed * math.sin(h), speed * math.cos(h))


# -- pseudonyms --------------------------------------------------------------

def epoch_of(timestamp_ms: int, epoch_ms: int = DEFAULT_PSEUDONYM_EPOCH_MS) -> int:
    if epoch_ms <= 0:
        raise ValueError("epoch length must be positive")
    return int(timestamp_ms) // epoch_ms


def rotate_pseudonym(actor_seed: int, epoch_index: int, salt: int = 0) -> int:
    """Pseudonym for one rotation epoch: a keyed hash, uniform over u32."""
    if epoch_index < 0:
        raise ValueError("epoch_index must be >= 0")
    raw = struct.pack("<QQQ", actor_seed & 0xFFFFFFFFFFFFFFFF, epoch_index, salt)
    return int.from_bytes(hashlib.blake2b(raw, digest_size=4, person=b"v2vru-pn").digest(), "little")


def derive_actor_seed(run_seed: int, actor_id: int) -> int:
    raw = struct.pack("<QQ", run_seed & 0xFFFFFFFFFFFFFFFF, actor_id)
    return int.from_bytes(hashlib.blake2b(raw, digest_size=8, person=b"v2vru-as").digest(), "little")


class PseudonymSchedule:
    """Per-actor pseudonym sequence with no reuse inside one run."""

    def __init__(self, actor_seed: int, epoch_ms: int = DEFAULT_PSEUDONYM_EPOCH_MS):
        self.actor_seed = actor_seed
        self.epoch_ms = epoch_ms
        self._ids: list[int] = []

    def for_epoch(self, epoch_index: int) -> int:
        while len(self._ids) <= epoch_index:
            k = len(self._ids)
            salt = 0
            pid = rotate_pseudonym(self.actor_seed, k)
            while pid in self._ids:
                salt += 1
                pid = rotate_pseudonym(self.actor_seed, k, salt)
            self._ids.append(pid)
        return self._ids[epoch_index]

    def at(self, timestamp_ms: int) -> int:
        return self.for_epoch(epoch_of(timestamp_ms, self.epoch_ms))

    @property
    def issued(self) -> tuple[int, ...]:
        return tuple(self._ids)

"""Trace metrics and grading against the requirement profile."""

from __future__ import annotations

import json
import math
from bisect import bisect_left, bisect_right
from collections import defaultdict
from dataclasses import asdict, dataclass, fields
from enum import Enum
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .messages import MessageKind, decode_denm, decode_vam, epoch_of
from .netsim.broker import DeliveryEvent, DropEvent
from .risk import DangerLevel, RequirementProfile
from .state import VruProfile
from .trace import (DenmPublished, GroundTruthCollision, PublishRejected, ScenarioStart, SimulationTrace,
                    StateSample, TraceError, VamPublished, WarningPresented)

SCALABILITY_SCENARIO = "intersection_load"
ZONE_LATTICE_M = 25.0
REPORT_FORMAT = "v2vru-report/1"


def nearest_rank(sorted_values, p: float) -> float:
    """Nearest-rank percentile of an ascending sequence."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("no values")
    k = max(1, math.ceil(p / 100.0 * n))
    return sorted_values[min(k, n) - 1]


def max_in_window(times, window_ms: float = 1000.0) -> int:
    """Largest number of ``times`` inside any half-open window [t, t + window)."""
    ts = sorted(times)
    best, lo = 0, 0
    for hi, t in enumerate(ts):
        while ts[lo] <= t - window_ms:
            lo += 1
        best = max(best, hi - lo + 1)
    return best


@dataclass(frozen=True)
class LatencyStats:
    p50: float
    p95: float
    p99: float
    max: float
    count: int

    @classmethod
    def of(cls, values) -> Optional["LatencyStats"]:
        if len(values) == 0:
            return None
        v = np.sort(np.asarray(values, dtype=float))
        return cls(float(nearest_rank(v, 50)), float(nearest_rank(v, 95)), float(nearest_rank(v, 99)),
                   float(v[-1]), int(len(v)))


@dataclass(frozen=True)
class MetricsReport:
    scenario: str
    mode: str
    latency_ms: Optional[LatencyStats]
    vam_latency_ms: Optional[LatencyStats]
    denm_latency_ms: Optional[LatencyStats]
    deliveries: int
    drops: int
    delivery_ratio: Optional[float]
    vam_published: int
    denm_published: int
    rejected: int
    sender_max_hz: dict  # "actor:<id>" -> max VAMs in any sliding second
    max_frequency_hz: Optional[int]
    max_denm_hz_ue: Optional[int]
    max_denm_hz_infrastructure: Optional[int]
    max_vam_bytes: Optional[int]
    max_denm_bytes: Optional[int]
    max_position_sigma_m: Optional[float]
    lead_times_s: dict  # "a-b" actor pair -> lead time, or None if never warned in time
    collisions: int
    missed_warnings: int
    false_alarms: int
    warning_denms: int
    bidirectional_denms: int
    peak_zone_users: int
    subscription_reach_m: dict  # profile name -> ring * cell size
    zone_radius_m: Optional[float]
    pseudonym_violations: int
    shared_pseudonyms: int
    causality_violations: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        names = {f.name for f in fields(cls)}
        if set(d) != names:
            raise ValueError(f"metrics fields mismatch: {sorted(set(d) ^ names)}")
        kw = dict(d)
        for k in ("latency_ms", "vam_latency_ms", "denm_latency_ms"):
            if kw[k] is not None:
                kw[k] = LatencyStats(**kw[k])
        return cls(**kw)


def _pair_name(a: int, b: int) -> str:
    return f"{min(a, b)}-{max(a, b)}"


def _peak_zone_users(samples: dict, radius_m: float) -> int:
    best = 0
    for pts in samples.values():
        p = np.asarray(pts, dtype=float)
        if len(p) <= best:
            continue
        lo = np.floor((p.min(axis=0) - radius_m) / ZONE_LATTICE_M)
        hi = np.ceil((p.max(axis=0) + radius_m) / ZONE_LATTICE_M)
        gx = np.arange(lo[0], hi[0] + 1) * ZONE_LATTICE_M
        gy = np.arange(lo[1], hi[1] + 1) * ZONE_LATTICE_M
        centers = np.stack(np.meshgrid(gx, gy), axis=-1).reshape(-1, 2)
        tree = cKDTree(p)
        counts = tree.query_ball_point(centers, radius_m, return_length=True)
        best = max(best, int(np.max(counts)))
    return best


def metrics(trace: SimulationTrace) -> MetricsReport:
    """Aggregate a trace into the quantities the requirement checks need."""
    events = trace.events if isinstance(trace, SimulationTrace) else list(trace)
    if not events or not isinstance(events[0], ScenarioStart):
        raise TraceError("trace must begin with a start event")
    meta = events[0].meta
    validity_ms = float(meta.get("denm_validity_ms", 5000))
    epoch_ms = int(meta.get("pseudonym_epoch_ms", 300_000))
    profiles = meta.get("actor_profiles", [])

    all_lat, vam_lat, denm_lat = [], [], []
    drops = rejected = causality = 0
    vam_times = defaultdict(list)
    denm_ue_times = defaultdict(list)
    denm_infra_times = defaultdict(list)
    max_vam = max_denm = None
    max_dm = None
    owner: dict[int, int] = {}  # pseudonym -> actor
    epochs_seen: dict[int, dict[int, int]] = defaultdict(dict)  # actor -> epoch -> pseudonym
    pseudonym_violations = 0
    shared_pseudonyms: set = set()
    denms: dict[int, tuple] = {}  # seq -> (time, sender, denm)
    denm_keys: dict[tuple, int] = {}
    delivered_to: dict[int, set] = defaultdict(set)
    collisions: list[tuple[float, int, int]] = []
    warnings: list[WarningPresented] = []
    samples: dict[float, list] = defaultdict(list)
    n_vam = n_denm = 0
    last_t = -math.inf

    for e in events:
        if isinstance(e, DeliveryEvent):
            lat = e.delivery_time_ms - e.publish_time_ms
            hop_sum = sum(h[1] for h in e.hops)
            if not lat > 0 or abs(e.publish_time_ms + hop_sum - e.delivery_time_ms) > 1e-6:
                causality += 1
            all_lat.append(lat)
            if e.envelope.kind is MessageKind.VAM:
                vam_lat.append(lat)
            else:
                denm_lat.append(lat)
                delivered_to[e.envelope.seq].add(e.recipient)
        elif isinstance(e, VamPublished):
            n_vam += 1
            env = e.envelope
            vam_times[e.actor_id].append(e.time)
            size = len(env.payload)
            max_vam = size if max_vam is None else max(max_vam, size)
            vam = decode_vam(env.payload)
            max_dm = vam.position_accuracy_dm if max_dm is None else max(max_dm, vam.position_accuracy_dm)
            if owner.setdefault(vam.pseudonym, e.actor_id) != e.actor_id:
                shared_pseudonyms.add(vam.pseudonym)  # allowed, but tracked
            ep = epoch_of(vam.timestamp_ms, epoch_ms)
            seen = epochs_seen[e.actor_id]
            if seen.setdefault(ep, vam.pseudonym) != vam.pseudonym:
                pseudonym_violations += 1  # changed mid-epoch
            elif ep > 0 and seen.get(ep - 1) == vam.pseudonym:
                pseudonym_violations += 1  # failed to rotate
        elif isinstance(e, DenmPublished):
            n_denm += 1
            env = e.envelope
            size = len(env.payload)
            max_denm = size if max_denm is None else max(max_denm, size)
            denm = decode_denm(env.payload)
            denms[env.seq] = (e.time, env.sender, denm)
            denm_keys[(env.sender, denm.event_id)] = env.seq
            (denm_infra_times if isinstance(env.sender, str) else denm_ue_times)[env.sender].append(e.time)
            if e.actor_id is not None:
                delivered_to[env.seq].add(env.sender)  # the originating device itself
        elif isinstance(e, DropEvent):
            drops += 1
        elif isinstance(e, WarningPresented):
            warnings.append(e)
        elif isinstance(e, GroundTruthCollision):
            collisions.append((e.time, e.actor_a, e.actor_b))
        elif isinstance(e, StateSample):
            samples[e.time].append(e.position)
        elif isinstance(e, PublishRejected):
            rejected += 1
        t = e.delivery_time_ms if isinstance(e, DeliveryEvent) else e.time
        if t < last_t:
            raise TraceError(f"timestamps decrease at {t} < {last_t}")
        last_t = t

    deliveries = len(all_lat)
    total = deliveries + drops
    sender_hz = {f"actor:{a}": max_in_window(ts) for a, ts in sorted(vam_times.items())}

    def _pair_actors(denm) -> Optional[tuple[int, int]]:
        acts = [owner.get(p) for p in denm.target_pseudonyms]
        if len(acts) != 2 or None in acts:
            return None
        return (min(acts), max(acts))

    # earliest Warning-or-higher presentation per (pair, actor)
    first_warn: dict[tuple[int, int], dict[int, float]] = defaultdict(dict)
    for w in warnings:
        if w.danger < DangerLevel.WARNING:
            continue
        seq = denm_keys.get((w.sender, w.event_id))
        if seq is None:
            raise TraceError(f"warning refers to unknown DENM {w.sender}/{w.event_id}")
        pair = _pair_actors(denms[seq][2])
        if pair is None:
            continue
        first_warn[pair].setdefault(w.actor_id, w.time)

    gt_times: dict[tuple[int, int], list[float]] = defaultdict(list)
    lead: dict[str, Optional[float]] = {}
    missed = 0
    for t, a, b in sorted(collisions):
        pair = (min(a, b), max(a, b))
        gt_times[pair].append(t)
        got = first_warn.get(pair, {})
        if pair[0] in got and pair[1] in got and max(got.values()) < t:
            lead[_pair_name(*pair)] = (t - max(got[pair[0]], got[pair[1]])) / 1000.0
        else:
            lead[_pair_name(*pair)] = None
            missed += 1

    warning_denms = bidirectional = false_alarms = 0
    for seq, (t, sender, denm) in denms.items():
        if denm.danger_level < DangerLevel.WARNING:
            continue
        warning_denms += 1
        pair = _pair_actors(denm)
        ok = pair is not None and set(denm.target_pseudonyms) <= delivered_to[seq]
        if ok and profiles:
            kinds = {VruProfile(profiles[pair[0]]).is_vru, VruProfile(profiles[pair[1]]).is_vru}
            ok = kinds == {True, False}
        bidirectional += bool(ok)
        times = sorted(gt_times.get(pair, ())) if pair else []
        lo, hi = bisect_left(times, t - validity_ms), bisect_right(times, t + validity_ms)
        if hi <= lo:
            false_alarms += 1

    cell = meta.get("cell_size_m")
    reach = {name: ring * cell for name, ring in meta.get("rings", {}).items()} if cell else {}
    zone_r = meta.get("zone_radius_m")

    def _max(d):
        return max((max_in_window(v) for v in d.values()), default=None)

    return MetricsReport(
        scenario=str(meta.get("scenario", "")),
        mode=str(meta.get("mode", "")),
        latency_ms=LatencyStats.of(all_lat),
        vam_latency_ms=LatencyStats.of(vam_lat),
        denm_latency_ms=LatencyStats.of(denm_lat),
        deliveries=deliveries,
        drops=drops,
        delivery_ratio=(deliveries / total) if total else None,
        vam_published=n_vam,
        denm_published=n_denm,
        rejected=rejected,
        sender_max_hz=sender_hz,
        max_frequency_hz=max(sender_hz.values(), default=None),
        max_denm_hz_ue=_max(denm_ue_times),
        max_denm_hz_infrastructure=_max(denm_infra_times),
        max_vam_bytes=max_vam,
        max_denm_bytes=max_denm,
        max_position_sigma_m=None if max_dm is None else max_dm / 10.0,
        lead_times_s=lead,
        collisions=len(collisions),
        missed_warnings=missed,
        false_alarms=false_alarms,
        warning_denms=warning_denms,
        bidirectional_denms=bidirectional,
        peak_zone_users=_peak_zone_users(samples, float(zone_r or 300.0)) if samples else 0,
        subscription_reach_m=reach,
        zone_radius_m=zone_r if n_vam else None,
        pseudonym_violations=pseudonym_violations,
        shared_pseudonyms=len(shared_pseudonyms),
        causality_violations=causality,
    )


# -- requirement checking ----------------------------------------------------

class Verdict(str, Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    NA = "NA"


@dataclass(frozen=True)
class RequirementRow:
    requirement: str
    threshold: str
    observed: Optional[float]
    verdict: Verdict
    note: str = ""
    advisory: bool = False  # graded, but does not affect the overall verdict or exit status


@dataclass(frozen=True)
class RequirementReport:
    scenario: str
    mode: str
    rows: tuple[RequirementRow, ...]

    @property
    def failed(self) -> bool:
        return any(r.verdict is Verdict.FAIL and not r.advisory for r in self.rows)

    @property
    def overall(self) -> Verdict:
        if self.failed:
            return Verdict.FAIL
        if all(r.verdict is Verdict.NA for r in self.rows):
            return Verdict.NA
        return Verdict.PASS

    def row(self, requirement: str) -> RequirementRow:
        for r in self.rows:
            if r.requirement == requirement:
                return r
        raise KeyError(requirement)

    def to_dict(self) -> dict:
        return {"format": REPORT_FORMAT, "scenario": self.scenario, "mode": self.mode,
                "overall": self.overall.value,
                "rows": [{"requirement": r.requirement, "threshold": r.threshold, "observed": r.observed,
                          "verdict": r.verdict.value, "note": r.note, "advisory": r.advisory}
                         for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> "RequirementReport":
        if d.get("format") != REPORT_FORMAT:
            raise ValueError(f"unsupported report format {d.get('format')!r}")
        rows = tuple(RequirementRow(r["requirement"], r["threshold"], r["observed"], Verdict(r["verdict"]),
                                    r.get("note", ""), bool(r.get("advisory", False))) for r in d["rows"])
        return cls(d["scenario"], d["mode"], rows)


def _row(name, threshold, observed, ok, note="", advisory=False) -> RequirementRow:
    if ok is None:
        return RequirementRow(name, threshold, observed, Verdict.NA, note, advisory)
    return RequirementRow(name, threshold, observed, Verdict.PASS if ok else Verdict.FAIL, note, advisory)


_RANGE_ROWS = (
    ("range_infrastructure_m", "infrastructure"),
    ("range_pedestrian_m", "pedestrian"),
    ("range_cyclist_m", "cyclist"),
    ("range_motorcyclist_m", "motorcyclist"),
)


def check_requirements(report: MetricsReport, profile: RequirementProfile = RequirementProfile()
                       ) -> RequirementReport:
    rows = []
    for attr, name in _RANGE_ROWS:
        need = getattr(profile, attr)
        reach = report.subscription_reach_m.get(name)
        rows.append(_row(attr, f">= {need:g} m", reach, None if reach is None else reach >= need,
                         "" if reach is None else f"{name} subscription reach"))

    sigma = report.max_position_sigma_m
    rows.append(_row("positioning_sigma_max_m", f"<= {profile.positioning_sigma_max_m:g} m", sigma,
                     None if sigma is None else sigma <= profile.positioning_sigma_max_m))

    lat = report.latency_ms
    lat_ok = None if lat is None else lat.p99 <= profile.latency_max_ms
    note = "" if lat is None else f"p50={lat.p50:g} p95={lat.p95:g} max={lat.max:g}"
    if lat is not None and lat.p99 <= profile.latency_target_ms:
        note += f"; within {profile.latency_target_ms:g} ms target"
    rows.append(_row("latency_max_ms", f"p99 <= {profile.latency_max_ms:g} ms",
                     None if lat is None else lat.p99, lat_ok, note))
    rows.append(_row("latency_target_ms", f"p99 <= {profile.latency_target_ms:g} ms",
                     None if lat is None else lat.p99,
                     None if lat is None else lat.p99 <= profile.latency_target_ms,
                     "best-case target", advisory=True))

    hz = report.max_frequency_hz
    rows.append(_row("max_frequency_hz", f"<= {profile.max_frequency_hz:g} Hz per UE", hz,
                     None if hz is None else hz <= profile.max_frequency_hz,
                     "" if report.max_denm_hz_ue is None else f"device DENMs max {report.max_denm_hz_ue} Hz"))

    if report.scenario == SCALABILITY_SCENARIO and lat is not None:
        ok = report.peak_zone_users >= profile.max_users_per_zone and bool(lat_ok)
        rows.append(_row("max_users_per_zone", f">= {profile.max_users_per_zone} users with latency PASS",
                         report.peak_zone_users, ok))
    else:
        rows.append(_row("max_users_per_zone", f">= {profile.max_users_per_zone} users with latency PASS",
                         report.peak_zone_users, None, "graded for the load scenario only"))

    zr = report.zone_radius_m
    rows.append(_row("zone_radius_m", f">= {profile.zone_radius_m:g} m", zr,
                     None if zr is None else zr >= profile.zone_radius_m, "processing zone radius"))

    rows.append(_row("vam_max_bytes", f"<= {profile.vam_max_bytes} B", report.max_vam_bytes,
                     None if report.max_vam_bytes is None else report.max_vam_bytes <= profile.vam_max_bytes))
    rows.append(_row("denm_max_bytes", f"<= {profile.denm_max_bytes} B", report.max_denm_bytes,
                     None if report.max_denm_bytes is None else report.max_denm_bytes <= profile.denm_max_bytes))

    w = report.warning_denms
    rows.append(_row("bidirectional", "every warning DENM reaches its vehicle and VRU targets",
                     report.bidirectional_denms, None if w == 0 else report.bidirectional_denms == w,
                     "" if w == 0 else f"{report.bidirectional_denms}/{w} warning DENMs"))
    rows.append(_row("collision_avoidance", "0 collisions without a prior warning to both",
                     report.missed_warnings, None if report.collisions == 0 else report.missed_warnings == 0,
                     "" if report.collisions == 0 else
                     f"{report.collisions} collisions, {report.false_alarms} false alarms"))
    rows.append(_row("pseudonym_rotation", "pseudonyms change only at epoch boundaries",
                     report.pseudonym_violations,
                     None if report.vam_published == 0 else report.pseudonym_violations == 0))
    return RequirementReport(report.scenario, report.mode, tuple(rows))


# -- rendering ---------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def format_text(report: RequirementReport) -> str:
    head = f"{'requirement':<26} {'threshold':<56} {'observed':>12}  verdict  note"
    lines = [f"scenario: {report.scenario}  mode: {report.mode}  overall: {report.overall.value}", head,
             "-" * len(head)]
    for r in report.rows:
        verdict = r.verdict.value + ("*" if r.advisory else "")
        lines.append(f"{r.requirement:<26} {r.threshold:<56} {_fmt(r.observed):>12}  {verdict:<7}  {r.note}".rstrip())
    if any(r.advisory for r in report.rows):
        lines.append("* advisory row: reported, not counted in the overall verdict")
    return "\n".join(lines) + "\n"


def format_json(report: RequirementReport, metrics_report: Optional[MetricsReport] = None) -> str:
    d = report.to_dict()
    if metrics_report is not None:
        d["metrics"] = metrics_report.to_dict()
    return json.dumps(d, indent=2, sort_keys=False, allow_nan=False) + "\n"


def parse_json(text: str) -> tuple[RequirementReport, Optional[MetricsReport]]:
    d = json.loads(text)
    if not isinstance(d, dict):
        raise ValueError("report must be a JSON object")
    m = d.get("metrics")
    return RequirementReport.from_dict(d), (MetricsReport.from_dict(m) if m is not None else None)


def grade(trace: SimulationTrace, profile: RequirementProfile = RequirementProfile()
          ) -> tuple[MetricsReport, RequirementReport]:
    m = metrics(trace)
    return m, check_requirements(m, profile)

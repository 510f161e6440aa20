"""Geographic addressing: local projection, grid topics, recipient selection, clusters."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .state import RoadUserState

EARTH_RADIUS_M = 6_371_000.0
PROJECTION_LIMIT_M = 10_000.0
DEFAULT_CELL_SIZE_M = 100
DEFAULT_RELEVANCE_M = 25.0


@dataclass(frozen=True, slots=True)
class GeoOrigin:
    lat_deg: float
    lon_deg: float
    earth_radius_m: float = EARTH_RADIUS_M

    def __post_init__(self):
        if abs(self.lat_deg) > 85.0:
            raise ValueError(f"origin latitude {self.lat_deg} outside +-85 deg")


def project_to_local(lat_deg: float, lon_deg: float, origin: GeoOrigin,
                     enforce_bound: bool = True) -> tuple[float, float]:
    """Equirectangular projection around ``origin``; valid within 10 km of it.

    Points beyond the bound raise unless ``enforce_bound`` is false, which
    evaluates the same formula regardless of its accuracy.
    """
    dlat = math.radians(lat_deg - origin.lat_deg)
    dlon = math.radians(lon_deg - origin.lon_deg)
    x = origin.earth_radius_m * math.cos(math.radians(origin.lat_deg)) * dlon
    y = origin.earth_radius_m * dlat
    if enforce_bound and math.hypot(x, y) > PROJECTION_LIMIT_M:
        raise ValueError(f"({lat_deg}, {lon_deg}) is more than 10 km from the origin")
    return (x, y)


def unproject(x: float, y: float, origin: GeoOrigin) -> tuple[float, float]:
    lat = origin.lat_deg + math.degrees(y / origin.earth_radius_m)
    lon = origin.lon_deg + math.degrees(
        x / (origin.earth_radius_m * math.cos(math.radians(origin.lat_deg))))
    return (lat, lon)


@dataclass(frozen=True, slots=True)
class GridCell:
    ix: int
    iy: int
    cell_size_m: int = DEFAULT_CELL_SIZE_M

    def __post_init__(self):
        if self.cell_size_m <= 0:
            raise ValueError("cell_size_m must be positive")

    @property
    def topic(self) -> "TopicId":
        return TopicId(self.cell_size_m, self.ix, self.iy)

    def chebyshev(self, other: "GridCell") -> int:
        return max(abs(self.ix - other.ix), abs(self.iy - other.iy))


_TOPIC_RE = re.compile(r"geo/([1-9][0-9]*)/(0|-?[1-9][0-9]*)/(0|-?[1-9][0-9]*)")


@dataclass(frozen=True, slots=True)
class TopicId:
    cell_size_m: int
    ix: int
    iy: int

    def __post_init__(self):
        if not isinstance(self.cell_size_m, int) or self.cell_size_m <= 0:
            raise ValueError("topic cell size must be a positive integer number of meters")

    def format(self) -> str:
        return f"geo/{self.cell_size_m}/{self.ix}/{self.iy}"

    __str__ = format

    @classmethod
    def parse(cls, text: str) -> "TopicId":
        m = _TOPIC_RE.fullmatch(text)
        if m is None:
            raise ValueError(f"malformed topic {text!r}")
        return cls(int(m.group(1)), int(m.group(2)), int(m.group(3)))

    @property
    def cell(self) -> GridCell:
        return GridCell(self.ix, self.iy, self.cell_size_m)


def cell_index(v: float, cell_size_m: int) -> int:
    """Index k with k * size <= v < (k + 1) * size, exact even where v / size rounds."""
    k = math.floor(v / cell_size_m)
    if k * cell_size_m > v:
        k -= 1
    elif (k + 1) * cell_size_m <= v:
        k += 1
    return k


def cell_of(position: Sequence[float], cell_size_m: int = DEFAULT_CELL_SIZE_M) -> GridCell:
    if cell_size_m <= 0:
        raise ValueError("cell_size_m must be positive")
    return GridCell(cell_index(position[0], cell_size_m), cell_index(position[1], cell_size_m), cell_size_m)


def ring_for_range(range_m: float, cell_size_m: int) -> int:
    return max(0, math.ceil(range_m / cell_size_m - 1e-12))


def neighborhood(cell: GridCell, ring: int) -> list[GridCell]:
    if ring < 0:
        raise ValueError("ring must be >= 0")
    return [GridCell(cell.ix + dx, cell.iy + dy, cell.cell_size_m)
            for dy in range(-ring, ring + 1) for dx in range(-ring, ring + 1)]


def subscription_cells(position: Sequence[float], cell_size_m: int, ring: int) -> set[GridCell]:
    """The (2*ring+1)^2 block of cells centered on the cell holding ``position``."""
    return set(neighborhood(cell_of(position, cell_size_m), ring))


def circular_zone_recipients(event_pos: Sequence[float], radius_m: float,
                             users: Iterable[RoadUserState]) -> set[int]:
    if radius_m <= 0:
        raise ValueError("radius_m must be positive")
    ex, ey = event_pos
    return {u.pseudonym for u in users
            if math.hypot(u.position_m[0] - ex, u.position_m[1] - ey) <= radius_m}


def relevance_filter(event_pos: Sequence[float], horizon_s: float,
                     users: Iterable[RoadUserState],
                     relevance_m: float = DEFAULT_RELEVANCE_M) -> set[int]:
    """Users whose predicted path passes within ``relevance_m`` of the event.

    The event point is treated as a stationary agent; each user's closest
    approach to it is evaluated with the time clamped to ``[0, horizon_s]``.
    """
    from .risk import closest_approach_vectors

    if horizon_s <= 0:
        raise ValueError("horizon_s must be positive")
    out = set()
    for u in users:
        rx = u.position_m[0] - event_pos[0]
        ry = u.position_m[1] - event_pos[1]
        vx, vy = u.effective_velocity()
        t_cpa, _ = closest_approach_vectors(rx, ry, vx, vy)
        t = min(t_cpa, horizon_s)
        if math.hypot(rx + vx * t, ry + vy * t) <= relevance_m:
            out.add(u.pseudonym)
    return out


@dataclass(frozen=True, slots=True)
class Cluster:
    members: frozenset[int]
    head: int

    def __post_init__(self):
        if self.head not in self.members:
            raise ValueError("cluster head must be a member")


def heading_difference(a_deg: float, b_deg: float) -> float:
    d = abs(a_deg - b_deg) % 360.0
    return min(d, 360.0 - d)


def form_clusters(users: Sequence[RoadUserState], eps_dist_m: float,
                  eps_heading_deg: float) -> list[Cluster]:
    """Group co-moving users of the same profile; head = smallest pseudonym.

    Clusters are the connected components of the pair relation "within
    ``eps_dist_m``, heading within ``eps_heading_deg``, same profile".
    """
    if eps_dist_m <= 0:
        raise ValueError("eps_dist_m must be positive")
    if not 0 < eps_heading_deg <= 180:
        raise ValueError("eps_heading_deg must be in (0, 180]")
    n = len(users)
    if n == 0:
        return []
    pos = np.array([u.position_m for u in users], dtype=float)
    hdg = np.array([u.heading_deg for u in users], dtype=float)
    prof = np.array([int(u.profile) for u in users])

    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n - 1):
        d = np.hypot(pos[i + 1:, 0] - pos[i, 0], pos[i + 1:, 1] - pos[i, 1])
        dh = np.abs(hdg[i + 1:] - hdg[i]) % 360.0
        dh = np.minimum(dh, 360.0 - dh)
        linked = np.nonzero((d <= eps_dist_m) & (dh <= eps_heading_deg) & (prof[i + 1:] == prof[i]))[0]
        for j in linked:
            ri, rj = find(i), find(i + 1 + int(j))
            if ri != rj:
                parent[rj] = ri

    groups: dict[int, set[int]] = {}
    for i, u in enumerate(users):
        groups.setdefault(find(i), set()).add(u.pseudonym)
    clusters = [Cluster(frozenset(m), min(m)) for m in groups.values()]
    clusters.sort(key=lambda c: c.head)
    return clusters

"""GPS primitives: haversine distance, DBSCAN clustering, and a geohash cell index."""

from __future__ import annotations

import bisect
import hashlib
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

from dhlink.errors import MixedUserInput, ValidationError

EARTH_RADIUS_M = 6_371_000.0
DEFAULT_EPS_M = 100.0
DEFAULT_MIN_PTS = 3


@dataclass(frozen=True)
class GpsPoint:
    user_token: str
    lat: float
    lon: float
    ts: int

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0 or not -180.0 <= self.lon <= 180.0:
            raise ValidationError(f"coordinates out of range: ({self.lat}, {self.lon})")

    def to_dict(self) -> dict:
        return {"userToken": self.user_token, "lat": self.lat, "lon": self.lon, "ts": self.ts}

    @classmethod
    def from_dict(cls, doc: dict) -> "GpsPoint":
        return cls(doc["userToken"], doc["lat"], doc["lon"], doc["ts"])


@dataclass(frozen=True)
class GpsCluster:
    cluster_id: str
    user_token: str
    centroid_lat: float
    centroid_lon: float
    t_start: int
    t_end: int
    point_count: int

    def to_dict(self) -> dict:
        return {
            "clusterId": self.cluster_id,
            "userToken": self.user_token,
            "centroidLat": self.centroid_lat,
            "centroidLon": self.centroid_lon,
            "tStart": self.t_start,
            "tEnd": self.t_end,
            "pointCount": self.point_count,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GpsCluster":
        return cls(doc["clusterId"], doc["userToken"], doc["centroidLat"], doc["centroidLon"],
                   doc["tStart"], doc["tEnd"], doc["pointCount"])


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in meters on a sphere of radius 6,371 km."""
    p1 = math.radians(lat1)
    p2 = math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def _neighbourhoods(points: Sequence[GpsPoint], eps_m: float) -> list[list[int]]:
    """Indices within eps of each point (self included), ascending.

    Points are swept in latitude order: the great-circle distance is at least
    R * |dphi|, so only a latitude band can hold neighbours.
    """
    n = len(points)
    by_lat = sorted(range(n), key=lambda i: points[i].lat)
    lats = [points[i].lat for i in by_lat]
    band = math.degrees(eps_m / EARTH_RADIUS_M)
    out: list[list[int]] = []
    for i, p in enumerate(points):
        lo = bisect.bisect_left(lats, p.lat - band)
        hi = bisect.bisect_right(lats, p.lat + band)
        near = [j for j in by_lat[lo:hi]
                if j == i or haversine_m(p.lat, p.lon, points[j].lat, points[j].lon) <= eps_m]
        near.sort()
        out.append(near)
    return out


def _cluster_id(user_token: str, members: list[GpsPoint]) -> str:
    h = hashlib.sha256(user_token.encode("utf-8"))
    for p in members:
        h.update(f"|{p.ts}:{p.lat!r}:{p.lon!r}".encode("ascii"))
    return "c-" + h.hexdigest()[:16]


def dbscan_labels(points: Sequence[GpsPoint], eps_m: float, min_pts: int) -> list[int]:
    """Cluster label per point (-1 for noise) in input order.

    Clusters are numbered in the order of their lowest core index; a border
    point joins the first cluster that reaches it.
    """
    if eps_m <= 0:
        raise ValidationError("eps must be positive")
    if min_pts < 1:
        raise ValidationError("minPts must be at least 1")
    neigh = _neighbourhoods(points, eps_m)
    core = [len(nb) >= min_pts for nb in neigh]
    labels = [-1] * len(points)
    cluster = -1
    for i in range(len(points)):
        if labels[i] != -1 or not core[i]:
            continue
        cluster += 1
        labels[i] = cluster
        queue = deque([i])
        while queue:
            j = queue.popleft()
            if not core[j]:
                continue
            for k in neigh[j]:
                if labels[k] == -1:
                    labels[k] = cluster
                    queue.append(k)
    return labels


def gps_cluster(points: Iterable[GpsPoint], eps_m: float = DEFAULT_EPS_M,
                min_pts: int = DEFAULT_MIN_PTS) -> list[GpsCluster]:
    """DBSCAN under the haversine metric for one user's points; noise is dropped."""
    pts = sorted(points, key=lambda p: (p.ts, p.lat, p.lon))
    if not pts:
        return []
    tokens = {p.user_token for p in pts}
    if len(tokens) > 1:
        raise MixedUserInput(f"points from {len(tokens)} users")
    token = pts[0].user_token
    labels = dbscan_labels(pts, eps_m, min_pts)
    groups: dict[int, list[GpsPoint]] = {}
    for p, label in zip(pts, labels):
        if label >= 0:
            groups.setdefault(label, []).append(p)
    clusters = []
    for members in groups.values():
        clusters.append(GpsCluster(
            cluster_id=_cluster_id(token, members),
            user_token=token,
            centroid_lat=math.fsum(p.lat for p in members) / len(members),
            centroid_lon=math.fsum(p.lon for p in members) / len(members),
            t_start=min(p.ts for p in members),
            t_end=max(p.ts for p in members),
            point_count=len(members),
        ))
    clusters.sort(key=lambda c: (c.t_start, c.cluster_id))
    return clusters


# -- geohash ------------------------------------------------------------------

_BASE32 = "0123456789bcdefghjkmnpqrstuvwxyz"


def geohash_encode(lat: float, lon: float, precision: int = 7) -> str:
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    chars = []
    bits = 0
    value = 0
    even = True
    while len(chars) < precision:
        if even:
            mid = (lon_lo + lon_hi) / 2
            if lon >= mid:
                value = value * 2 + 1
                lon_lo = mid
            else:
                value *= 2
                lon_hi = mid
        else:
            mid = (lat_lo + lat_hi) / 2
            if lat >= mid:
                value = value * 2 + 1
                lat_lo = mid
            else:
                value *= 2
                lat_hi = mid
        even = not even
        bits += 1
        if bits == 5:
            chars.append(_BASE32[value])
            bits = 0
            value = 0
    return "".join(chars)


def geohash_cell_size(precision: int) -> tuple[float, float]:
    """(lat_degrees, lon_degrees) spanned by one cell."""
    total = 5 * precision
    lon_bits = (total + 1) // 2
    lat_bits = total // 2
    return 180.0 / 2 ** lat_bits, 360.0 / 2 ** lon_bits


def precision_for_radius(radius_m: float, max_abs_lat: float = 81.0) -> int:
    """Finest precision whose cells are at least ``radius_m`` wide up to ``max_abs_lat``."""
    best = 1
    for p in range(1, 13):
        dlat, dlon = geohash_cell_size(p)
        height = math.radians(dlat) * EARTH_RADIUS_M
        width = math.radians(dlon) * EARTH_RADIUS_M * math.cos(math.radians(max_abs_lat))
        if height >= radius_m and width >= radius_m:
            best = p
        else:
            break
    return best


def geohash_neighbourhood(lat: float, lon: float, precision: int) -> set[str]:
    """The cell holding (lat, lon) and its eight neighbours."""
    dlat, dlon = geohash_cell_size(precision)
    cells = set()
    for i in (-1, 0, 1):
        for j in (-1, 0, 1):
            la = lat + i * dlat
            if not -90.0 <= la <= 90.0:
                continue
            lo = (lon + j * dlon + 180.0) % 360.0 - 180.0
            cells.add(geohash_encode(la, lo, precision))
    return cells


class GeoIndex:
    """Cluster ids bucketed by geohash cell of their centroid.

    ``radius_m`` fixes the cell size; ``near`` returns candidates for any
    query radius up to that size, callers filter by exact distance.
    """

    def __init__(self, radius_m: float = 50.0):
        self.radius_m = radius_m
        self.precision = precision_for_radius(radius_m)
        self._cells: dict[str, set[str]] = {}
        self._where: dict[str, str] = {}

    def __len__(self) -> int:
        return len(self._where)

    def add(self, cluster: GpsCluster) -> None:
        self.remove(cluster.cluster_id)
        cell = geohash_encode(cluster.centroid_lat, cluster.centroid_lon, self.precision)
        self._cells.setdefault(cell, set()).add(cluster.cluster_id)
        self._where[cluster.cluster_id] = cell

    def remove(self, cluster_id: str) -> None:
        cell = self._where.pop(cluster_id, None)
        if cell is not None:
            members = self._cells[cell]
            members.discard(cluster_id)
            if not members:
                del self._cells[cell]

    def near(self, lat: float, lon: float, radius_m: float | None = None) -> set[str] | None:
        """Candidate ids, or None when the radius exceeds the cell size (scan everything)."""
        if radius_m is not None and radius_m > self.radius_m:
            return None
        if abs(lat) > 80.0:
            # cells narrow toward the poles; let the caller scan
            return None
        out: set[str] = set()
        for cell in geohash_neighbourhood(lat, lon, self.precision):
            out |= self._cells.get(cell, set())
        return out

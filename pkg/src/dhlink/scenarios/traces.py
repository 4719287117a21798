"""Seeded synthetic GPS traces with planted co-location episodes.

Every user wanders inside a small disc around a home anchor. Anchors sit on a
square grid whose spacing keeps any two discs far more than ten proximity
distances apart. Planted meetings move both users to a venue on a row of the
grid reserved for venues, so they meet nobody else.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Sequence

from dhlink.errors import InfeasiblePlant
from dhlink.scenarios.config import DEFAULT_START_MS, HOUR_MS, PlantSpec
from dhlink.services.geo import EARTH_RADIUS_M, GpsPoint, haversine_m

BASE_LAT = 22.28
BASE_LON = 114.16
WALK_RADIUS_M = 150.0
STEP_SIGMA_M = 15.0
DAY_MS = 24 * HOUR_MS


@dataclass(frozen=True)
class Plant:
    """A resolved plant: absolute times and a concrete venue."""

    a: int
    b: int
    lat: float
    lon: float
    start_ms: int
    end_ms: int

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "lat": self.lat, "lon": self.lon,
                "startMs": self.start_ms, "endMs": self.end_ms}


class Layout:
    """Where homes and venues are for a given population and proximity distance."""

    def __init__(self, user_count: int, dist_m: float):
        self.cols = max(1, math.ceil(math.sqrt(user_count)))
        self.spacing_m = max(2000.0, 20 * dist_m + 4 * WALK_RADIUS_M)

    def _offset(self, north_m: float, east_m: float) -> tuple[float, float]:
        lat = BASE_LAT + math.degrees(north_m / EARTH_RADIUS_M)
        lon = BASE_LON + math.degrees(east_m / (EARTH_RADIUS_M * math.cos(math.radians(BASE_LAT))))
        return lat, lon

    def home(self, user: int) -> tuple[float, float]:
        row, col = divmod(user, self.cols)
        return self._offset(row * self.spacing_m, col * self.spacing_m)

    def venue(self, k: int) -> tuple[float, float]:
        row, col = divmod(k, self.cols)
        return self._offset(-(row + 1) * self.spacing_m, col * self.spacing_m)


def _move(lat: float, lon: float, north_m: float, east_m: float) -> tuple[float, float]:
    return (lat + math.degrees(north_m / EARTH_RADIUS_M),
            lon + math.degrees(east_m / (EARTH_RADIUS_M * math.cos(math.radians(lat)))))


def resolve_plants(specs: Sequence[PlantSpec], user_count: int, start_ms: int, end_ms: int,
                   dist_m: float) -> list[Plant]:
    """Absolute plants; raises InfeasiblePlant for contradictory or impossible ones."""
    layout = Layout(user_count, dist_m)
    plants = []
    for k, p in enumerate(specs):
        if p.a == p.b:
            raise InfeasiblePlant(f"plant {k}: a user cannot meet themself")
        for u in (p.a, p.b):
            if not 0 <= u < user_count:
                raise InfeasiblePlant(f"plant {k}: no user {u}")
        t0 = start_ms + int(p.start_hour * HOUR_MS)
        t1 = start_ms + int(p.end_hour * HOUR_MS)
        if not start_ms <= t0 < t1 <= end_ms:
            raise InfeasiblePlant(f"plant {k}: interval must lie inside the run and have positive length")
        if p.lat is None:
            lat, lon = layout.venue(k)
        else:
            lat, lon = float(p.lat), float(p.lon)
            for u in range(user_count):
                if u not in (p.a, p.b) and haversine_m(lat, lon, *layout.home(u)) <= 10 * dist_m + WALK_RADIUS_M:
                    raise InfeasiblePlant(f"plant {k}: venue lies inside user {u}'s usual area")
        plants.append(Plant(p.a, p.b, lat, lon, t0, t1))
    for i, x in enumerate(plants):
        for y in plants[i + 1:]:
            shared = {x.a, x.b} & {y.a, y.b}
            overlap = x.start_ms <= y.end_ms and y.start_ms <= x.end_ms
            if shared and overlap and haversine_m(x.lat, x.lon, y.lat, y.lon) > dist_m:
                raise InfeasiblePlant(f"user {min(shared)} planted in two places at once")
    return plants


def generate_traces(seed: int, user_count: int, duration_days: float, plants: Sequence[PlantSpec] = (), *,
                    tokens: Sequence[str] | None = None, start_ms: int = DEFAULT_START_MS,
                    interval_s: int = 600, eps_m: float = 100.0, min_pts: int = 3,
                    dist_m: float = 50.0) -> list[list[GpsPoint]]:
    """One time-ordered point stream per user, identical for identical arguments."""
    tokens = list(tokens) if tokens is not None else [f"user-{i:02d}" for i in range(user_count)]
    if len(tokens) != user_count:
        raise ValueError("need one token per user")
    end_ms = start_ms + int(duration_days * DAY_MS)
    step = interval_s * 1000
    resolved = resolve_plants(plants, user_count, start_ms, end_ms, dist_m)
    plant_r = min(eps_m, dist_m) / 4
    for k, p in enumerate(resolved):
        n = sum(1 for ts in range(start_ms, end_ms, step) if p.start_ms <= ts <= p.end_ms)
        if n < min_pts:
            raise InfeasiblePlant(f"plant {k}: only {n} samples fit the interval, need {min_pts}")

    layout = Layout(user_count, dist_m)
    streams = []
    for u in range(user_count):
        rng = random.Random(f"{seed}/walk/{u}")
        home_lat, home_lon = layout.home(u)
        mine = [p for p in resolved if u in (p.a, p.b)]
        x = y = 0.0
        points = []
        for ts in range(start_ms, end_ms, step):
            x += rng.gauss(0.0, STEP_SIGMA_M)
            y += rng.gauss(0.0, STEP_SIGMA_M)
            r = math.hypot(x, y)
            if r > WALK_RADIUS_M:
                x, y = x * WALK_RADIUS_M / r, y * WALK_RADIUS_M / r
            lat, lon = _move(home_lat, home_lon, y, x)
            for p in mine:
                if p.start_ms <= ts <= p.end_ms:
                    ang = rng.uniform(0, 2 * math.pi)
                    rad = plant_r * math.sqrt(rng.random())
                    lat, lon = _move(p.lat, p.lon, rad * math.sin(ang), rad * math.cos(ang))
                    break
            points.append(GpsPoint(tokens[u], round(lat, 7), round(lon, 7), ts))
        streams.append(points)
    return streams

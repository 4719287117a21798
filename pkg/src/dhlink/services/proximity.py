"""Proximity detection between users' spatio-temporal clusters.

Two clusters are in proximity when their centroids are within ``dist_m`` and
their time intervals, each widened by ``slack_s`` on both ends, intersect.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable

from dhlink.errors import UnknownConfirmedToken
from dhlink.services.geo import DEFAULT_EPS_M, DEFAULT_MIN_PTS, GeoIndex, GpsCluster, GpsPoint, gps_cluster, haversine_m
from dhlink.services.store import RealtimeStore

DAY_MS = 86_400_000
DEFAULT_WINDOW_DAYS = 7
DEFAULT_DIST_M = 50.0
DEFAULT_SLACK_S = 1800


@dataclass(frozen=True)
class ProximityAlert:
    alert_id: str
    subject_token: str
    confirmed_token: str
    subject_cluster_id: str
    confirmed_cluster_id: str
    distance_m: float
    overlap_seconds: float
    created_at: int

    def key(self) -> tuple[str, str]:
        return (self.subject_cluster_id, self.confirmed_cluster_id)

    def to_dict(self) -> dict:
        return {
            "alertId": self.alert_id,
            "subjectToken": self.subject_token,
            "confirmedToken": self.confirmed_token,
            "subjectClusterId": self.subject_cluster_id,
            "confirmedClusterId": self.confirmed_cluster_id,
            "distanceMeters": self.distance_m,
            "overlapSeconds": self.overlap_seconds,
            "createdAt": self.created_at,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ProximityAlert":
        return cls(doc["alertId"], doc["subjectToken"], doc["confirmedToken"], doc["subjectClusterId"],
                   doc["confirmedClusterId"], doc["distanceMeters"], doc["overlapSeconds"], doc["createdAt"])


def in_proximity(a: GpsCluster, b: GpsCluster, dist_m: float, slack_s: float) -> bool:
    slack = slack_s * 1000
    if a.t_start - slack > b.t_end + slack or b.t_start - slack > a.t_end + slack:
        return False
    return haversine_m(a.centroid_lat, a.centroid_lon, b.centroid_lat, b.centroid_lon) <= dist_m


def make_alert(subject: GpsCluster, confirmed: GpsCluster, now: int) -> ProximityAlert:
    digest = hashlib.sha256(f"{subject.cluster_id}|{confirmed.cluster_id}".encode("ascii")).hexdigest()
    overlap_ms = max(0, min(subject.t_end, confirmed.t_end) - max(subject.t_start, confirmed.t_start))
    return ProximityAlert(
        alert_id="a-" + digest[:16],
        subject_token=subject.user_token,
        confirmed_token=confirmed.user_token,
        subject_cluster_id=subject.cluster_id,
        confirmed_cluster_id=confirmed.cluster_id,
        distance_m=haversine_m(subject.centroid_lat, subject.centroid_lon,
                               confirmed.centroid_lat, confirmed.centroid_lon),
        overlap_seconds=overlap_ms / 1000,
        created_at=now,
    )


def _sorted(alerts: Iterable[ProximityAlert]) -> list[ProximityAlert]:
    return sorted(alerts, key=lambda a: (a.subject_token, a.subject_cluster_id, a.confirmed_cluster_id))


def detect_proximity_backtrace(confirmed_token: str, clusters: Iterable[GpsCluster], now: int,
                               window_days: float = DEFAULT_WINDOW_DAYS, dist_m: float = DEFAULT_DIST_M,
                               slack_s: float = DEFAULT_SLACK_S, known_tokens=None) -> list[ProximityAlert]:
    """Alerts for every other user's cluster near one of the confirmed user's recent clusters.

    ``known_tokens`` lists users the caller knows about; by default any user
    owning a cluster in ``clusters``.
    """
    clusters = list(clusters)
    known = set(known_tokens) if known_tokens is not None else {c.user_token for c in clusters}
    if confirmed_token not in known:
        raise UnknownConfirmedToken(f"unknown user token {confirmed_token!r}")
    cutoff = now - window_days * DAY_MS
    recent = [c for c in clusters if c.t_end >= cutoff]
    mine = [c for c in recent if c.user_token == confirmed_token]
    others = [c for c in recent if c.user_token != confirmed_token]
    return _sorted(make_alert(s, c, now) for c in mine for s in others if in_proximity(s, c, dist_m, slack_s))


def detect_proximity_incremental(new_cluster: GpsCluster, confirmed_clusters: Iterable[GpsCluster], now: int,
                                 window_days: float = DEFAULT_WINDOW_DAYS, dist_m: float = DEFAULT_DIST_M,
                                 slack_s: float = DEFAULT_SLACK_S) -> list[ProximityAlert]:
    """Alerts for one newly formed cluster against the confirmed users' clusters."""
    cutoff = now - window_days * DAY_MS
    if new_cluster.t_end < cutoff:
        return []
    return _sorted(
        make_alert(new_cluster, c, now)
        for c in confirmed_clusters
        if c.user_token != new_cluster.user_token and c.t_end >= cutoff
        and in_proximity(new_cluster, c, dist_m, slack_s)
    )


class ProximityService:
    """Raw points, clusters, confirmations and alerts kept in a real-time store.

    Keys: ``points/<token>/<ts>``, ``clusters/<token>/<clusterId>``,
    ``confirmed/<token>`` and ``alerts/<alertId>``. The geohash index over
    cluster centroids is rebuilt from the store on start.
    """

    def __init__(self, store: RealtimeStore, eps_m: float = DEFAULT_EPS_M, min_pts: int = DEFAULT_MIN_PTS,
                 dist_m: float = DEFAULT_DIST_M, slack_s: float = DEFAULT_SLACK_S,
                 window_days: float = DEFAULT_WINDOW_DAYS):
        self.store = store
        self.eps_m = eps_m
        self.min_pts = min_pts
        self.dist_m = dist_m
        self.slack_s = slack_s
        self.window_days = window_days
        self.index = GeoIndex(radius_m=dist_m)
        self._clusters: dict[str, GpsCluster] = {}
        for _, doc in store.items("clusters/"):
            c = GpsCluster.from_dict(doc)
            self._clusters[c.cluster_id] = c
            self.index.add(c)

    # -- ingestion ----------------------------------------------------------

    def add_points(self, points: Iterable[GpsPoint]) -> int:
        n = 0
        for p in points:
            self.store.put(f"points/{p.user_token}/{p.ts:015d}", p.to_dict())
            n += 1
        return n

    def points(self, token: str, since: int | None = None, until: int | None = None) -> list[GpsPoint]:
        out = []
        for _, doc in self.store.items(f"points/{token}/"):
            if (since is None or doc["ts"] >= since) and (until is None or doc["ts"] < until):
                out.append(GpsPoint.from_dict(doc))
        return out

    def tokens(self) -> list[str]:
        return sorted({k.split("/")[1] for k in self.store.keys("points/")}
                      | {c.user_token for c in self._clusters.values()})

    def cluster_batch(self, token: str, since: int, until: int) -> list[GpsCluster]:
        """Cluster one user's points in [since, until) and store clusters not seen before."""
        fresh = []
        for c in gps_cluster(self.points(token, since, until), self.eps_m, self.min_pts):
            if c.cluster_id in self._clusters:
                continue
            self.store.put(f"clusters/{token}/{c.cluster_id}", c.to_dict())
            self._clusters[c.cluster_id] = c
            self.index.add(c)
            fresh.append(c)
        return fresh

    def clusters(self, token: str | None = None) -> list[GpsCluster]:
        cs = [c for c in self._clusters.values() if token is None or c.user_token == token]
        return sorted(cs, key=lambda c: (c.user_token, c.t_start, c.cluster_id))

    # -- confirmation and alerts ------------------------------------------

    def confirmed_tokens(self) -> list[str]:
        return [k.split("/", 1)[1] for k in self.store.keys("confirmed/")]

    def _record(self, alerts: list[ProximityAlert]) -> list[ProximityAlert]:
        new = []
        for a in alerts:
            key = f"alerts/{a.alert_id}"
            if key not in self.store:
                self.store.put(key, a.to_dict())
                new.append(a)
        return new

    def alerts(self) -> list[ProximityAlert]:
        return _sorted(ProximityAlert.from_dict(doc) for _, doc in self.store.items("alerts/"))

    def confirm(self, token: str, now: int) -> list[ProximityAlert]:
        """Mark ``token`` confirmed and back-trace over the retention window; returns new alerts."""
        alerts = detect_proximity_backtrace(token, self._clusters.values(), now, self.window_days,
                                            self.dist_m, self.slack_s, known_tokens=self.tokens())
        self.store.put(f"confirmed/{token}", {"token": token, "confirmedAt": now})
        return self._record(alerts)

    def _candidates(self, c: GpsCluster) -> list[GpsCluster]:
        ids = self.index.near(c.centroid_lat, c.centroid_lon, self.dist_m)
        if ids is None:
            return list(self._clusters.values())
        return [self._clusters[i] for i in sorted(ids)]

    def on_new_cluster(self, c: GpsCluster, now: int) -> list[ProximityAlert]:
        """Incremental check of a freshly stored cluster; returns new alerts."""
        confirmed = set(self.confirmed_tokens())
        near = self._candidates(c)
        theirs = [x for x in near if x.user_token in confirmed]
        alerts = detect_proximity_incremental(c, theirs, now, self.window_days, self.dist_m, self.slack_s)
        if c.user_token in confirmed:
            # the new cluster belongs to a confirmed user: everyone near it is a subject
            cutoff = now - self.window_days * DAY_MS
            alerts += [make_alert(s, c, now) for s in near
                       if s.user_token != c.user_token and s.t_end >= cutoff and c.t_end >= cutoff
                       and in_proximity(s, c, self.dist_m, self.slack_s)]
        return self._record(_sorted(alerts))

    # -- retention ----------------------------------------------------------

    def purge_expired(self, now: int) -> int:
        cutoff = now - self.window_days * DAY_MS
        purged = 0
        for key, doc in list(self.store.items("points/")):
            if doc["ts"] < cutoff:
                self.store.delete(key)
                purged += 1
        for cid, c in list(self._clusters.items()):
            if c.t_end < cutoff:
                self.store.delete(f"clusters/{c.user_token}/{cid}")
                del self._clusters[cid]
                self.index.remove(cid)
                purged += 1
        return purged


def purge_expired(clusters: list[GpsCluster], points: list[GpsPoint], now: int,
                  window_days: float = DEFAULT_WINDOW_DAYS) -> tuple[list[GpsCluster], list[GpsPoint], int]:
    """Pure form: survivors of both lists plus the number removed."""
    cutoff = now - window_days * DAY_MS
    kept_c = [c for c in clusters if c.t_end >= cutoff]
    kept_p = [p for p in points if p.ts >= cutoff]
    return kept_c, kept_p, (len(clusters) - len(kept_c)) + (len(points) - len(kept_p))

"""Proximity tracing.

Phones upload GPS samples through the tracing app on ``location-uploads``.
The proximity engine keeps raw points in its real-time store and clusters
them straight from there every few simulated hours. One scripted
confirmation on ``confirmations`` makes the engine back-trace the last week;
after that each new cluster is checked incrementally. Alerts travel back on
``proximity-alerts``. A daily purge drops everything older than the window.
"""

from __future__ import annotations

import hashlib

from dhlink.scenarios.common import (
    PlatformHandle,
    SimClock,
    WallTimer,
    provision_app,
    receive_logged,
    send_logged,
)
from dhlink.scenarios.config import DAY_MS, HOUR_MS, ScenarioConfig
from dhlink.scenarios.traces import generate_traces, resolve_plants
from dhlink.scenarios.transcript import Transcript
from dhlink.services.geo import GpsPoint
from dhlink.services.proximity import ProximityService
from dhlink.services.store import RealtimeStore
from dhlink.services.users import UserService

SCENARIO = "proximity"
APP_ID = "proximity-tracing"
FRONTEND = "tracing-app"
ENGINE = "proximity-engine"
UPLOADS = "location-uploads"
CONFIRMATIONS = "confirmations"
ALERTS = "proximity-alerts"

SERVICES = {
    FRONTEND: "Tracing mobile frontend backend: uploads, confirmations, notifications",
    ENGINE: "Clustering and proximity detection",
}
TOPICS = [
    {"name": UPLOADS, "description": "batched GPS samples", "policy": "retained",
     "schema": {"name": "LocationBatch", "version": 1}, "senders": [FRONTEND], "receivers": [ENGINE]},
    {"name": CONFIRMATIONS, "description": "confirmed infections", "policy": "retained",
     "schema": {"name": "InfectionConfirmation", "version": 1}, "senders": [FRONTEND], "receivers": [ENGINE]},
    {"name": ALERTS, "description": "proximity alerts for subjects", "policy": "retained",
     "schema": {"name": "ProximityAlert", "version": 1}, "senders": [ENGINE], "receivers": [FRONTEND]},
]
SCHEMA_FILES = ["location-batch.json", "infection-confirmation.json", "proximity-alert.json"]


class ProximityRun:
    def __init__(self, cfg: ScenarioConfig, platform=None, app_id: str = APP_ID):
        self.cfg = cfg
        self.app_id = app_id
        self.handle = PlatformHandle(cfg, platform)
        self.platform = self.handle.platform
        self.transcript = Transcript(SCENARIO, cfg.semantic_dict())
        self.clock = SimClock(cfg.start_ms)
        base = getattr(self.platform, "data_dir", None)
        self.engine_store = RealtimeStore(base / "services" / f"{app_id}-engine.jsonl" if base else None)
        self.app_store = RealtimeStore(base / "services" / f"{app_id}-app.jsonl" if base else None)
        self.engine = ProximityService(self.engine_store, cfg.eps_m, cfg.min_pts, cfg.dist_m, cfg.slack_s,
                                       cfg.window_days)
        secret = hashlib.sha256(f"tracing-deid/{cfg.seed}".encode()).digest()
        self.users = UserService(secret, iterations=1000)

    def close(self) -> None:
        self.engine_store.close()
        self.app_store.close()
        self.handle.close()

    # -- setup ----------------------------------------------------------------

    def _setup(self) -> None:
        cfg = self.cfg
        t = self.transcript
        self.app = provision_app(self.platform, self.app_id, SERVICES, TOPICS, SCHEMA_FILES)
        self.tokens = []
        for i in range(cfg.user_count):
            uid = self.users.register_user(f"Resident {i:02d}", f"pw-{cfg.seed}-{i}", ("resident",),
                                           user_id=f"resident-{i:02d}")
            self.tokens.append(self.users.deidentify(uid))
            t.record(cfg.start_ms, FRONTEND, "enrol", index=i, userToken=self.tokens[-1])
        plants = resolve_plants(cfg.plants, cfg.user_count, cfg.start_ms, cfg.end_ms, cfg.dist_m)
        t.record(cfg.start_ms, "harness", "plants", plants=[p.to_dict() for p in plants])
        streams = generate_traces(cfg.seed, cfg.user_count, cfg.duration_days, cfg.plants, tokens=self.tokens,
                                  start_ms=cfg.start_ms, interval_s=cfg.point_interval_s, eps_m=cfg.eps_m,
                                  min_pts=cfg.min_pts, dist_m=cfg.dist_m)
        self.pending = [list(reversed(s)) for s in streams]  # pop() yields oldest first

        clock = self.clock
        fallback = cfg.plaintext_fallback
        self.upload_out = self.app.source(self.platform, FRONTEND, UPLOADS, clock, plaintext_fallback=fallback)
        self.confirm_out = self.app.source(self.platform, FRONTEND, CONFIRMATIONS, clock,
                                           plaintext_fallback=fallback)
        self.alert_out = self.app.source(self.platform, ENGINE, ALERTS, clock, plaintext_fallback=fallback)
        self.upload_in = self.app.sink(self.platform, ENGINE, UPLOADS)
        self.confirm_in = self.app.sink(self.platform, ENGINE, CONFIRMATIONS)
        self.alert_in = self.app.sink(self.platform, FRONTEND, ALERTS)
        self.confirmed_sent = False

    # -- actors ---------------------------------------------------------------

    def _phones(self, now: int) -> None:
        for token, pending in zip(self.tokens, self.pending):
            batch = []
            while pending and pending[-1].ts < now:
                p = pending.pop()
                batch.append({"position": {"lat": p.lat, "lon": p.lon}, "ts": p.ts})
            if batch:
                send_logged(self.transcript, self.upload_out, FRONTEND, now, {"userToken": token, "points": batch})
                self.transcript.bump("pointsUploaded", len(batch))
        if not self.confirmed_sent and now >= self.cfg.confirm_at_ms:
            self.confirmed_sent = True
            token = self.tokens[self.cfg.confirm_user]
            send_logged(self.transcript, self.confirm_out, FRONTEND, now, {"userToken": token, "confirmedAt": now})

    def _publish(self, now: int, alerts) -> None:
        for a in alerts:
            doc = a.to_dict()
            self.transcript.record(now, ENGINE, "alert", doc, **doc)
            self.transcript.bump("alertsRaised")
            send_logged(self.transcript, self.alert_out, ENGINE, now, doc)

    def _engine(self, now: int) -> None:
        cfg = self.cfg
        for d in receive_logged(self.transcript, self.upload_in, ENGINE, now):
            token = d.value["userToken"]
            self.engine.add_points(GpsPoint(token, p["position"]["lat"], p["position"]["lon"], p["ts"])
                                   for p in d.value["points"])
        for d in receive_logged(self.transcript, self.confirm_in, ENGINE, now):
            token = d.value["userToken"]
            alerts = self.engine.confirm(token, now)
            self.transcript.record(now, ENGINE, "confirm", d.value, userToken=token,
                                   alerts=[a.alert_id for a in alerts])
            self._publish(now, alerts)

        elapsed = now - cfg.start_ms
        batch_ms = cfg.batch_hours * HOUR_MS
        if elapsed % batch_ms == 0:
            fresh = []
            for token in self.tokens:
                fresh += self.engine.cluster_batch(token, now - batch_ms, now)
            for c in fresh:
                self.transcript.record(now, ENGINE, "cluster", c.to_dict(), **c.to_dict())
            self.transcript.record(now, ENGINE, "batch", since=now - batch_ms, until=now, fresh=len(fresh))
            self.transcript.bump("clustersFormed", len(fresh))
            for c in fresh:
                self._publish(now, self.engine.on_new_cluster(c, now))
        if elapsed % (cfg.purge_every_hours * HOUR_MS) == 0:
            purged = self.engine.purge_expired(now)
            cutoff = now - int(cfg.window_days * DAY_MS)
            self.transcript.record(now, ENGINE, "purge", cutoff=cutoff, purged=purged)
            self.transcript.bump("purges")
            self.transcript.bump("purgedItems", purged)

    def _frontend(self, now: int) -> None:
        for d in receive_logged(self.transcript, self.alert_in, FRONTEND, now):
            a = d.value
            note = {"userToken": a["subjectToken"], "alertId": a["alertId"], "createdAt": now}
            self.app_store.put(f"notifications/{a['subjectToken']}/{a['alertId']}", note)
            self.transcript.record(now, FRONTEND, "notify", note, **note)
            self.transcript.bump("notifications")

    # -- driver ---------------------------------------------------------------

    def run(self) -> Transcript:
        timer = WallTimer()
        try:
            self._setup()
            for now in self.cfg.ticks():
                self.clock.now = now
                self._phones(now)
                self._engine(now)
                self._frontend(now)
            self.transcript.record(self.cfg.end_ms, "harness", "end", endMs=self.cfg.end_ms)
        finally:
            self.transcript.finish(timer.elapsed())
        return self.transcript


def run_proximity(cfg: ScenarioConfig, platform=None) -> Transcript:
    run = ProximityRun(cfg, platform)
    try:
        return run.run()
    finally:
        run.close()

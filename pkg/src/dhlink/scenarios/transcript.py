"""Machine-checkable record of a scenario run."""

from __future__ import annotations

import hashlib
import json
import statistics
import threading
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from dhlink.schema import canonical_encode


def payload_digest(value: Any) -> str:
    return hashlib.sha256(canonical_encode(value)).hexdigest()


@dataclass(frozen=True)
class Event:
    sim_time: int
    actor: str
    action: str
    digest: str
    data: dict

    def to_dict(self) -> dict:
        return {"simTime": self.sim_time, "actor": self.actor, "action": self.action,
                "digest": self.digest, "data": self.data}

    @classmethod
    def from_dict(cls, doc: dict) -> "Event":
        return cls(doc["simTime"], doc["actor"], doc["action"], doc["digest"], doc.get("data") or {})


class Transcript:
    """Append-only event list plus counters.

    ``digest()`` covers the scenario name, the semantic config, every event and
    the counters. Wall-clock measurements live in ``timing`` and are excluded.
    """

    def __init__(self, scenario: str, config: dict):
        self.scenario = scenario
        self.config = config
        self.events: list[Event] = []
        self.counters: Counter = Counter()
        self.timing: dict = {}
        self._lock = threading.Lock()
        self._sent_wall: dict[str, float] = {}
        self._hops: list[float] = []

    def record(self, sim_time: int, actor: str, action: str, payload: Any = None, **data) -> Event:
        digest = payload_digest(payload) if payload is not None else ""
        event = Event(sim_time, actor, action, digest, data)
        with self._lock:
            self.events.append(event)
        return event

    def bump(self, counter: str, n: int = 1) -> None:
        with self._lock:
            self.counters[counter] += n

    # hop latency is wall-clock, so it stays out of the digest
    def mark_sent(self, message_id: str, wall: float) -> None:
        self._sent_wall[message_id] = wall

    def mark_received(self, message_id: str, wall: float) -> None:
        sent = self._sent_wall.pop(message_id, None)
        if sent is not None:
            self._hops.append((wall - sent) * 1000)

    def finish(self, wall_seconds: float) -> None:
        hops = sorted(self._hops)
        self.timing = {"wallSeconds": round(wall_seconds, 3), "hops": len(hops)}
        if hops:
            self.timing.update(
                hopMeanMs=round(statistics.fmean(hops), 3),
                hopP95Ms=round(hops[min(len(hops) - 1, int(0.95 * len(hops)))], 3),
            )

    def of(self, action: str, actor: str | None = None) -> list[Event]:
        return [e for e in self.events if e.action == action and (actor is None or e.actor == actor)]

    def summary(self) -> dict:
        return dict(sorted(self.counters.items()))

    def digest(self) -> str:
        body = {
            "scenario": self.scenario,
            "config": self.config,
            "events": [e.to_dict() for e in self.events],
            "summary": self.summary(),
        }
        return hashlib.sha256(canonical_encode(body)).hexdigest()

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "config": self.config,
            "digest": self.digest(),
            "summary": self.summary(),
            "timing": self.timing,
            "events": [e.to_dict() for e in self.events],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Transcript":
        t = cls(doc["scenario"], doc["config"])
        t.events = [Event.from_dict(e) for e in doc["events"]]
        t.counters = Counter(doc.get("summary") or {})
        t.timing = doc.get("timing") or {}
        return t

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Transcript":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

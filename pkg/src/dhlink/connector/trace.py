"""Stage instrumentation for connector pipelines."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field


@dataclass(frozen=True)
class StageEvent:
    stage: str
    outcome: str
    section: str | None = None
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {"stage": self.stage, "outcome": self.outcome}
        if self.section is not None:
            doc["section"] = self.section
        if self.info:
            doc["info"] = dict(self.info)
        return doc


class StageTrace:
    """Collects stage events; pass an instance as a connector's ``tracer``."""

    def __init__(self):
        self.events: list[StageEvent] = []
        self._lock = threading.Lock()

    def __call__(self, stage: str, outcome: str, section: str | None = None, **info) -> None:
        with self._lock:
            self.events.append(StageEvent(stage, outcome, section, info))

    def stages(self) -> list[str]:
        return [e.stage for e in self.events]

    def pairs(self) -> list[tuple[str, str]]:
        return [(e.stage, e.outcome) for e in self.events]

    def clear(self) -> None:
        with self._lock:
            self.events.clear()


def null_tracer(stage: str, outcome: str, section: str | None = None, **info) -> None:
    pass

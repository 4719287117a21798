"""Scenario configuration."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from dhlink.errors import ValidationError

HOUR_MS = 3_600_000
DAY_MS = 24 * HOUR_MS

# 2023-11-14T00:00:00Z; any fixed instant works, simulated time never reads the wall clock
DEFAULT_START_MS = 1_699_920_000_000

# fields that change how a run is wired but not what it computes
WIRING_FIELDS = ("transport", "data_dir", "core_url", "security_url", "admin_token",
                 "security_admin_token", "ca_file")


def _camel(name: str) -> str:
    head, *rest = name.split("_")
    return head + "".join(p.title() for p in rest)


@dataclass
class PlantSpec:
    """Two users meet at one place for a while.

    ``a`` and ``b`` are user indexes; hours count from the scenario start.
    Without ``lat``/``lon`` a venue far from everyone's usual area is chosen.
    """

    a: int
    b: int
    start_hour: float
    end_hour: float
    lat: float | None = None
    lon: float | None = None

    def to_dict(self) -> dict:
        doc = {"a": self.a, "b": self.b, "startHour": self.start_hour, "endHour": self.end_hour}
        if self.lat is not None:
            doc.update(lat=self.lat, lon=self.lon)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "PlantSpec":
        try:
            return cls(int(doc["a"]), int(doc["b"]), float(doc["startHour"]), float(doc["endHour"]),
                       doc.get("lat"), doc.get("lon"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad plant {doc!r}: {exc}") from None


def default_plants() -> list[PlantSpec]:
    return [
        PlantSpec(0, 1, 100.0, 102.0),
        PlantSpec(2, 0, 30.0, 31.5),
        PlantSpec(3, 4, 50.0, 52.0),
    ]


@dataclass
class ScenarioConfig:
    seed: int = 0
    user_count: int = 20
    duration_days: float = 7
    tick_ms: int = HOUR_MS
    start_ms: int = DEFAULT_START_MS
    plaintext_fallback: bool = False

    # wiring
    transport: str = "local"
    data_dir: str | None = None
    core_url: str | None = None
    security_url: str | None = None
    admin_token: str = "core-admin"
    security_admin_token: str = "security-admin"
    ca_file: str | None = None

    # AI2 + MINDtick
    refill_interval_days: float = 30
    grace_days: float = 7
    max_refill_age_days: float = 45
    refill_gap_at_end_days: dict = field(default_factory=dict)

    # proximity tracing
    eps_m: float = 100.0
    min_pts: int = 3
    dist_m: float = 50.0
    slack_s: float = 1800
    window_days: float = 7
    batch_hours: int = 6
    point_interval_s: int = 600
    confirm_user: int = 0
    confirm_at_hour: float | None = None
    purge_every_hours: int = 24
    plants: list = field(default_factory=default_plants)

    def __post_init__(self):
        self.plants = [p if isinstance(p, PlantSpec) else PlantSpec.from_dict(p) for p in self.plants]
        self.refill_gap_at_end_days = {int(k): float(v) for k, v in self.refill_gap_at_end_days.items()}
        if self.user_count < 1:
            raise ValidationError("userCount must be at least 1")
        if self.duration_days <= 0 or self.tick_ms <= 0:
            raise ValidationError("durationDays and tickMs must be positive")
        if (self.batch_hours * HOUR_MS) % self.tick_ms or (self.purge_every_hours * HOUR_MS) % self.tick_ms:
            raise ValidationError("batchHours and purgeEveryHours must be whole numbers of ticks")
        if not 0 <= self.confirm_user < self.user_count:
            raise ValidationError("confirmUser must name one of the users")

    @property
    def end_ms(self) -> int:
        return self.start_ms + int(self.duration_days * DAY_MS)

    @property
    def confirm_at_ms(self) -> int:
        hours = self.confirm_at_hour if self.confirm_at_hour is not None else self.duration_days * 24 - 24
        return self.start_ms + int(hours * HOUR_MS)

    def ticks(self):
        """Simulated instants start+tick, start+2*tick, ..., up to the end."""
        t = self.start_ms + self.tick_ms
        while t <= self.end_ms:
            yield t
            t += self.tick_ms

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "plants":
                v = [p.to_dict() for p in v]
            elif f.name == "refill_gap_at_end_days":
                v = {str(k): g for k, g in sorted(v.items())}
            out[_camel(f.name)] = v
        return out

    def semantic_dict(self) -> dict:
        """Everything that determines the transcript; wiring is left out."""
        skip = {_camel(n) for n in WIRING_FIELDS}
        return {k: v for k, v in self.to_dict().items() if k not in skip and v is not None}

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        names = {_camel(f.name): f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - set(names))
        if unknown:
            raise ValidationError(f"unknown scenario config keys: {unknown}")
        return cls(**{names[k]: v for k, v in doc.items()})

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

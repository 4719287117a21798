"""Service discovery: a queryable registry of schemas, topics and microservices."""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

from dhlink._io import atomic_write_json, read_json
from dhlink.errors import DuplicateName, IllegalTransition, UnknownName, UnknownSchema, ValidationError
from dhlink.schema import DataSchema

INITIALISING = "initialising"
READY = "ready"
RETIRED = "retired"
STATUSES = (INITIALISING, READY, RETIRED)

TOPIC = "topic"
SERVICE = "service"


@dataclass(frozen=True)
class TopicInfo:
    name: str
    description: str
    status: str
    schema: DataSchema

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "status": self.status,
            "schemaSpec": self.schema.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TopicInfo":
        return cls(doc["name"], doc.get("description", ""), doc.get("status", INITIALISING),
                   DataSchema.from_dict(doc["schemaSpec"]))


@dataclass(frozen=True)
class MicroserviceInfo:
    name: str
    description: str
    url: str
    status: str
    owner_app_id: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValidationError(f"unknown status {self.status!r}")
        if self.status == READY and not self.url:
            raise ValidationError(f"service {self.name} cannot be ready without a url")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "url": self.url,
            "status": self.status,
            "ownerAppId": self.owner_app_id,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MicroserviceInfo":
        return cls(doc["name"], doc.get("description", ""), doc.get("url", ""),
                   doc.get("status", INITIALISING), doc.get("ownerAppId", ""))


class Discovery:
    """Registry with copy-on-write state: reads never block, writes are serialized."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._state = {"schemas": {}, "topics": {}, "services": {}}
        if self.path is not None:
            doc = read_json(self.path)
            if doc:
                self._state = {
                    "schemas": {
                        (s["name"], s["version"]): DataSchema.from_dict(s) for s in doc.get("schemas", [])
                    },
                    "topics": {t["name"]: TopicInfo.from_dict(t) for t in doc.get("topics", [])},
                    "services": {s["name"]: MicroserviceInfo.from_dict(s) for s in doc.get("services", [])},
                }

    def _commit(self, state: dict) -> None:
        if self.path is not None:
            atomic_write_json(self.path, {
                "schemas": [s.to_dict() for _, s in sorted(state["schemas"].items())],
                "topics": [t.to_dict() for _, t in sorted(state["topics"].items())],
                "services": [s.to_dict() for _, s in sorted(state["services"].items())],
            })
        self._state = state

    def _mutate(self, part: str, fn) -> None:
        with self._lock:
            state = dict(self._state)
            table = dict(state[part])
            fn(table)
            state[part] = table
            self._commit(state)

    # -- schemas ------------------------------------------------------------

    def register_schema(self, schema: DataSchema) -> None:
        def add(table):
            if schema.ref in table:
                raise DuplicateName(f"schema {schema.name} v{schema.version} exists")
            table[schema.ref] = schema
        self._mutate("schemas", add)

    def has_schema(self, name: str, version: int) -> bool:
        return (name, version) in self._state["schemas"]

    def get_schema(self, name: str, version: int) -> DataSchema:
        try:
            return self._state["schemas"][(name, version)]
        except KeyError:
            raise UnknownSchema(f"schema {name} v{version} is not registered") from None

    def schemas(self) -> list[DataSchema]:
        return [s for _, s in sorted(self._state["schemas"].items())]

    # -- registration -------------------------------------------------------

    def register_topic_info(self, info: TopicInfo) -> None:
        if info.status not in STATUSES:
            raise ValidationError(f"unknown status {info.status!r}")

        def add(table):
            if info.name in table:
                raise DuplicateName(f"topic info {info.name} exists")
            table[info.name] = info
        self._mutate("topics", add)

    def register_service_info(self, info: MicroserviceInfo) -> None:
        def add(table):
            if info.name in table:
                raise DuplicateName(f"service info {info.name} exists")
            table[info.name] = info
        self._mutate("services", add)

    def _part(self, kind: str) -> str:
        if kind == TOPIC:
            return "topics"
        if kind == SERVICE:
            return "services"
        raise ValidationError(f"kind must be topic or service, got {kind!r}")

    def get(self, kind: str, name: str):
        try:
            return self._state[self._part(kind)][name]
        except KeyError:
            raise UnknownName(f"unknown {kind} {name!r}") from None

    def set_status(self, kind: str, name: str, status: str) -> None:
        if status not in STATUSES:
            raise ValidationError(f"unknown status {status!r}")

        def update(table):
            if name not in table:
                raise UnknownName(f"unknown {kind} {name!r}")
            entry = table[name]
            if STATUSES.index(status) <= STATUSES.index(entry.status):
                raise IllegalTransition(f"{kind} {name}: {entry.status} -> {status}")
            table[name] = replace(entry, status=status)
        self._mutate(self._part(kind), update)

    def remove(self, kind: str, name: str) -> None:
        def drop(table):
            if name not in table:
                raise UnknownName(f"unknown {kind} {name!r}")
            del table[name]
        self._mutate(self._part(kind), drop)

    # -- queries ------------------------------------------------------------

    def query_topics(self, query: str = "") -> list[TopicInfo]:
        q = (query or "").lower()
        topics = self._state["topics"]
        return [
            topics[n] for n in sorted(topics)
            if q in topics[n].name.lower() or q in topics[n].description.lower()
        ]

    def query_services(self, query: str = "", visible: Iterable[str] | None = None) -> list[MicroserviceInfo]:
        """Services matching ``query``; ``visible`` restricts the result (None means all)."""
        services = self._state["services"]
        visible = set(services) if visible is None else set(visible)
        q = (query or "").lower()
        return [
            services[n] for n in sorted(services)
            if n in visible and (q in n.lower() or q in services[n].description.lower())
        ]

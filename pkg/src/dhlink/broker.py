"""Topic/section store-and-forward hub.

Every topic is split into sections, one per receiving microservice. A
section is an append-only FIFO log with dense offsets starting at 0; purging
drops records but never reuses an offset. Each section is persisted as a
JSON-lines file ``<data_dir>/<topic>/<section>.log`` whose first line holds
section metadata, and which is compacted by rewriting when records are purged.
"""

from __future__ import annotations

import bisect
import json
import logging
import os
import re
import shutil
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from dhlink._io import atomic_write_json, atomic_write_jsonl, read_json, read_jsonl
from dhlink.envelope import Envelope
from dhlink.errors import (
    DuplicateName,
    EnvelopeMismatch,
    IllegalTransition,
    NotSectionOwner,
    TopicNotReady,
    TopicRetired,
    UnknownSchema,
    UnknownSection,
    UnknownTopic,
    ValidationError,
)
from dhlink.security.keys import now_ms

log = logging.getLogger(__name__)

REALTIME = "realtime"
RETAINED = "retained"
TRANSIENT = "transient"
POLICIES = (REALTIME, RETAINED, TRANSIENT)

CREATED = "created"
READY = "ready"
RETIRED = "retired"
_STATUS_ORDER = {CREATED: 0, READY: 1, RETIRED: 2}

DEFAULT_BUFFER_SIZE = 1024
DEFAULT_TRANSIENT_MAX_AGE = 60
MAX_FETCH = 1000

TOPIC_NAME = re.compile(r"^[a-z0-9-]{1,64}$")


def normalize_config(policy: str, config: dict | None) -> dict:
    config = dict(config or {})
    if policy == REALTIME:
        size = config.pop("bufferSize", DEFAULT_BUFFER_SIZE)
        if isinstance(size, bool) or not isinstance(size, int) or size < 1:
            raise ValidationError("bufferSize must be a positive integer")
        out = {"bufferSize": size}
    elif policy == RETAINED:
        age = config.pop("maxAgeSeconds", None)
        if age is not None and (isinstance(age, bool) or not isinstance(age, int) or age < 1):
            raise ValidationError("maxAgeSeconds must be a positive integer or null")
        out = {"maxAgeSeconds": age}
    elif policy == TRANSIENT:
        age = config.pop("maxAgeSeconds", DEFAULT_TRANSIENT_MAX_AGE)
        if isinstance(age, bool) or not isinstance(age, int) or age < 1:
            raise ValidationError("maxAgeSeconds must be a positive integer")
        out = {"maxAgeSeconds": age}
    else:
        raise ValidationError(f"unknown policy {policy!r}")
    if config:
        raise ValidationError(f"unknown config keys for {policy}: {sorted(config)}")
    return out


@dataclass(frozen=True)
class RoutedRecord:
    offset: int
    envelope: Envelope
    appended_at: int
    delivered: bool = False

    def to_row(self) -> dict:
        return {"o": self.offset, "t": self.appended_at, "d": self.delivered, "e": self.envelope.to_wire()}

    @classmethod
    def from_row(cls, row: dict) -> "RoutedRecord":
        return cls(row["o"], Envelope.from_wire(row["e"]), row["t"], row.get("d", False))

    def to_dict(self) -> dict:
        return {"offset": self.offset, "appendedAt": self.appended_at, "envelope": self.envelope.to_wire()}


class TopicSection:
    def __init__(self, topic: str, section_id: str, receiver_id: str, path: Path | None, fsync: bool = False):
        self.topic = topic
        self.section_id = section_id
        self.receiver_id = receiver_id
        self.path = path
        self.fsync = fsync
        self.records: list[RoutedRecord] = []
        self.offsets: list[int] = []
        self.next_offset = 0
        self.lock = threading.Lock()
        self.closed = False
        self._fh = None
        self._file_rows = 0

    def meta(self) -> dict:
        return {"meta": {"section": self.section_id, "receiver": self.receiver_id, "nextOffset": self.next_offset}}

    def load(self) -> None:
        if self.path is None or not self.path.exists():
            self.rewrite()
            return
        by_offset: dict[int, RoutedRecord] = {}
        next_offset = 0
        for row in read_jsonl(self.path):
            if "meta" in row:
                next_offset = max(next_offset, row["meta"]["nextOffset"])
                continue
            rec = RoutedRecord.from_row(row)
            by_offset[rec.offset] = rec
            next_offset = max(next_offset, rec.offset + 1)
        self.records = [by_offset[o] for o in sorted(by_offset)]
        self.offsets = [r.offset for r in self.records]
        self.next_offset = next_offset
        self.rewrite()

    def rewrite(self) -> None:
        """Compact the log file down to the surviving records."""
        if self.path is None:
            return
        if self._fh is not None:
            self._fh.close()
        rows = [self.meta()] + [r.to_row() for r in self.records]
        atomic_write_jsonl(self.path, rows)
        self._file_rows = len(rows)
        self._fh = open(self.path, "a", encoding="utf-8")

    def write(self, rec: RoutedRecord) -> None:
        if self._fh is None:
            return
        self._fh.write(json.dumps(rec.to_row(), separators=(",", ":")) + "\n")
        self._fh.flush()
        if self.fsync:
            os.fsync(self._fh.fileno())
        self._file_rows += 1

    def drop(self, keep: Callable[[RoutedRecord], bool]) -> int:
        survivors = [r for r in self.records if keep(r)]
        dropped = len(self.records) - len(survivors)
        if dropped:
            self.records = survivors
            self.offsets = [r.offset for r in survivors]
        return dropped

    def close(self) -> None:
        self.closed = True
        if self._fh is not None:
            self._fh.close()
            self._fh = None


@dataclass
class Topic:
    name: str
    policy: str
    schema_ref: tuple[str, int]
    config: dict
    status: str = CREATED
    sections: dict[str, TopicSection] = field(default_factory=dict)
    section_seq: int = 0

    def section_for(self, receiver_id: str) -> TopicSection | None:
        for sec in self.sections.values():
            if sec.receiver_id == receiver_id:
                return sec
        return None

    def to_meta(self) -> dict:
        return {
            "name": self.name,
            "policy": self.policy,
            "schema": {"name": self.schema_ref[0], "version": self.schema_ref[1]},
            "config": self.config,
            "status": self.status,
            "sectionSeq": self.section_seq,
            "sections": [
                {"sectionId": s.section_id, "receiverId": s.receiver_id}
                for s in sorted(self.sections.values(), key=lambda s: s.section_id)
            ],
        }

    def describe(self, with_receivers: bool = True) -> dict:
        doc = self.to_meta()
        del doc["sectionSeq"]
        if not with_receivers:
            doc["sections"] = [{"sectionId": s["sectionId"]} for s in doc["sections"]]
        return doc


class Broker:
    def __init__(
        self,
        data_dir=None,
        clock: Callable[[], int] = now_ms,
        schema_exists: Callable[[str, int], bool] | None = None,
        fsync: bool = False,
    ):
        self.data_dir = Path(data_dir) if data_dir else None
        self.clock = clock
        self.schema_exists = schema_exists
        self.fsync = fsync
        self._lock = threading.RLock()
        self._topics: dict[str, Topic] = {}
        if self.data_dir is not None:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            self._load()

    # -- persistence --------------------------------------------------------

    def _topic_dir(self, name: str) -> Path | None:
        return self.data_dir / name if self.data_dir is not None else None

    def _load(self) -> None:
        for meta_path in sorted(self.data_dir.glob("*/topic.json")):
            meta = read_json(meta_path)
            if not meta:
                continue
            topic = Topic(
                name=meta["name"],
                policy=meta["policy"],
                schema_ref=(meta["schema"]["name"], meta["schema"]["version"]),
                config=meta["config"],
                status=meta["status"],
                section_seq=meta.get("sectionSeq", 0),
            )
            for s in meta["sections"]:
                sec = self._new_section(topic, s["sectionId"], s["receiverId"])
                sec.load()
                if topic.policy == REALTIME:
                    sec.drop(_newest(sec, topic.config["bufferSize"]))
                topic.sections[sec.section_id] = sec
            self._topics[topic.name] = topic
            log.info("loaded topic %s with %d sections", topic.name, len(topic.sections))

    def _new_section(self, topic: Topic, section_id: str, receiver_id: str) -> TopicSection:
        tdir = self._topic_dir(topic.name)
        path = tdir / f"{section_id}.log" if tdir is not None else None
        return TopicSection(topic.name, section_id, receiver_id, path, self.fsync)

    def _save_topic(self, topic: Topic) -> None:
        tdir = self._topic_dir(topic.name)
        if tdir is not None:
            atomic_write_json(tdir / "topic.json", topic.to_meta())

    def close(self) -> None:
        with self._lock:
            for topic in self._topics.values():
                for sec in topic.sections.values():
                    sec.close()

    # -- topics ---------------------------------------------------------------

    def create_topic(self, name: str, policy: str, schema_ref: tuple[str, int], config: dict | None = None) -> Topic:
        if not isinstance(name, str) or not TOPIC_NAME.match(name):
            raise ValidationError(f"topic name must match [a-z0-9-]{{1,64}}, got {name!r}")
        if policy not in POLICIES:
            raise ValidationError(f"unknown policy {policy!r}")
        config = normalize_config(policy, config)
        schema_ref = (schema_ref[0], int(schema_ref[1]))
        with self._lock:
            if name in self._topics:
                raise DuplicateName(f"topic {name} exists")
            if self.schema_exists is not None and not self.schema_exists(*schema_ref):
                raise UnknownSchema(f"schema {schema_ref[0]} v{schema_ref[1]} is not registered")
            topic = Topic(name, policy, schema_ref, config)
            tdir = self._topic_dir(name)
            if tdir is not None:
                tdir.mkdir(parents=True, exist_ok=True)
            self._save_topic(topic)
            self._topics[name] = topic
            log.info("created topic %s (%s)", name, policy)
            return topic

    def delete_topic(self, name: str) -> None:
        with self._lock:
            topic = self.get_topic(name)
            for sec in topic.sections.values():
                with sec.lock:
                    sec.close()
            del self._topics[name]
            tdir = self._topic_dir(name)
            if tdir is not None:
                shutil.rmtree(tdir, ignore_errors=True)
            log.info("deleted topic %s", name)

    def get_topic(self, name: str) -> Topic:
        try:
            return self._topics[name]
        except KeyError:
            raise UnknownTopic(f"unknown topic {name!r}") from None

    def topics(self) -> list[Topic]:
        with self._lock:
            return [self._topics[n] for n in sorted(self._topics)]

    def set_topic_status(self, name: str, status: str) -> None:
        with self._lock:
            topic = self.get_topic(name)
            if status not in _STATUS_ORDER:
                raise ValidationError(f"unknown topic status {status!r}")
            if _STATUS_ORDER[status] <= _STATUS_ORDER[topic.status]:
                raise IllegalTransition(f"topic {name}: {topic.status} -> {status}")
            topic.status = status
            self._save_topic(topic)

    # -- sections -------------------------------------------------------------

    def allocate_section(self, topic_name: str, receiver_id: str) -> str:
        with self._lock:
            topic = self.get_topic(topic_name)
            if topic.status == RETIRED:
                raise TopicRetired(f"topic {topic_name} is retired")
            existing = topic.section_for(receiver_id)
            if existing is not None:
                return existing.section_id
            topic.section_seq += 1
            section_id = f"s{topic.section_seq:04d}"
            sec = self._new_section(topic, section_id, receiver_id)
            sec.rewrite()
            topic.sections[section_id] = sec
            self._save_topic(topic)
            return section_id

    def remove_section(self, topic_name: str, section_id: str) -> None:
        with self._lock:
            topic = self.get_topic(topic_name)
            sec = self._section(topic, section_id)
            with sec.lock:
                sec.close()
            del topic.sections[section_id]
            self._save_topic(topic)
            if sec.path is not None:
                sec.path.unlink(missing_ok=True)

    def sections(self, topic_name: str) -> list[tuple[str, str]]:
        topic = self.get_topic(topic_name)
        return sorted((s.section_id, s.receiver_id) for s in list(topic.sections.values()))

    def section_owner(self, topic_name: str, section_id: str) -> str | None:
        topic = self._topics.get(topic_name)
        if topic is None:
            return None
        sec = topic.sections.get(section_id)
        return sec.receiver_id if sec is not None else None

    def _section(self, topic: Topic, section_id: str) -> TopicSection:
        try:
            return topic.sections[section_id]
        except KeyError:
            raise UnknownSection(f"unknown section {topic.name}/{section_id}") from None

    # -- records -------------------------------------------------------------

    def append(self, topic_name: str, section_id: str, envelope: Envelope) -> int:
        topic = self.get_topic(topic_name)
        if topic.status == RETIRED:
            raise TopicRetired(f"topic {topic_name} is retired")
        if topic.status != READY:
            raise TopicNotReady(f"topic {topic_name} is {topic.status}")
        sec = self._section(topic, section_id)
        if envelope.topic != topic_name or envelope.section != section_id:
            raise EnvelopeMismatch(
                f"envelope addressed to {envelope.topic}/{envelope.section}, appended to {topic_name}/{section_id}"
            )
        if envelope.schema_ref != topic.schema_ref:
            raise EnvelopeMismatch(f"envelope schema {envelope.schema_ref} != topic schema {topic.schema_ref}")
        with sec.lock:
            if sec.closed:
                raise UnknownTopic(f"topic {topic_name} was deleted")
            rec = RoutedRecord(sec.next_offset, envelope, self.clock())
            sec.write(rec)
            sec.records.append(rec)
            sec.offsets.append(rec.offset)
            sec.next_offset += 1
            if topic.policy == REALTIME:
                size = topic.config["bufferSize"]
                if len(sec.records) > size:
                    del sec.records[: len(sec.records) - size]
                    del sec.offsets[: len(sec.offsets) - size]
                    if sec._file_rows > 2 * size + 64:
                        sec.rewrite()
            return rec.offset

    def fetch(self, topic_name: str, section_id: str, from_offset: int = 0,
              max_count: int = 100, receiver_id: str | None = None) -> list[RoutedRecord]:
        topic = self.get_topic(topic_name)
        sec = self._section(topic, section_id)
        if receiver_id is not None and receiver_id != sec.receiver_id:
            raise NotSectionOwner(f"{receiver_id} does not own {topic_name}/{section_id}")
        max_count = max(0, min(int(max_count), MAX_FETCH))
        with sec.lock:
            if sec.closed:
                raise UnknownTopic(f"topic {topic_name} was deleted")
            start = bisect.bisect_left(sec.offsets, from_offset)
            out = sec.records[start:start + max_count]
            if topic.policy == TRANSIENT and out:
                out = [replace(r, delivered=True) for r in out]
                done = {r.offset for r in out}
                sec.drop(lambda r: r.offset not in done)
                sec.rewrite()
            return out

    def enforce_retention(self, topic_name: str, now: int | None = None) -> int:
        topic = self.get_topic(topic_name)
        now = self.clock() if now is None else now
        purged = 0
        for sec in list(topic.sections.values()):
            with sec.lock:
                if sec.closed:
                    continue
                if topic.policy == REALTIME:
                    keep = _newest(sec, topic.config["bufferSize"])
                elif topic.policy == RETAINED:
                    age = topic.config["maxAgeSeconds"]
                    if age is None:
                        continue
                    cutoff = now - age * 1000
                    keep = lambda r, c=cutoff: r.appended_at >= c
                else:
                    cutoff = now - topic.config["maxAgeSeconds"] * 1000
                    keep = lambda r, c=cutoff: not r.delivered and r.appended_at >= c
                dropped = sec.drop(keep)
                if dropped:
                    sec.rewrite()
                purged += dropped
        return purged


def _newest(sec: TopicSection, size: int):
    keep = set(sec.offsets[-size:]) if size else set()
    return lambda r: r.offset in keep

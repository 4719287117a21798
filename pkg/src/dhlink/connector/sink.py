"""Sink connector and a read-only REST reader sharing its record decoding."""

from __future__ import annotations

import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from dhlink._io import atomic_write_json, read_json
from dhlink.broker import RoutedRecord
from dhlink.connector.keycache import PRIVATE, KeyCache
from dhlink.connector.source import payload_aad
from dhlink.connector.trace import null_tracer
from dhlink.errors import (
    AccessDenied,
    DecryptFailure,
    DHLinkError,
    EncodingError,
    KeyNotFound,
    KeyUnavailable,
    Unauthorized,
)
from dhlink.schema import DataSchema, canonical_decode, validate_instance
from dhlink.security.acl import ALLOW, RECEIVE
from dhlink.security.crypto import decrypt_payload

log = logging.getLogger(__name__)

DEDUP_WINDOW = 4096


@dataclass(frozen=True)
class Delivery:
    offset: int
    value: Any
    message_id: str
    sender: str
    sent_at: int
    encrypted: bool


@dataclass
class SinkReport:
    delivered: int = 0
    duplicates: int = 0
    decrypt_failures: int = 0
    invalid: int = 0
    errors: list[dict] = field(default_factory=list)

    def note(self, offset: int, kind: str, detail: str) -> None:
        self.errors.append({"offset": offset, "kind": kind, "detail": detail})
        del self.errors[:-100]


class _KeyUnavailableHere(Exception):
    pass


class _RecordOpener:
    """Turns routed records back into validated values."""

    def __init__(self, security, topic: str, section: str, schema: DataSchema,
                 key_cache: KeyCache, trace):
        self.security = security
        self.topic = topic
        self.section = section
        self.schema = schema
        self.key_cache = key_cache
        self.trace = trace

    def _lookup(self) -> tuple[str, bytes] | None:
        try:
            key_id, key = self.security.get_private_key(self.topic, self.section)
        except KeyNotFound:
            self.trace("key-lookup", "not-found", self.section)
            return None
        except AccessDenied:
            self.trace("key-lookup", "deny", self.section)
            return None
        self.key_cache.put(self.topic, self.section, PRIVATE, key_id, key)
        self.trace("key-lookup", "found", self.section, keyId=key_id)
        return key_id, key

    def private_key(self, wanted_key_id: str) -> bytes:
        entry = self.key_cache.get(self.topic, self.section, PRIVATE)
        if entry is not None and entry.key_id == wanted_key_id:
            self.trace("key-cache", "hit", self.section, keyId=entry.key_id)
            return entry.key_bytes
        self.trace("key-cache", "miss" if entry is None else "stale", self.section)
        found = self._lookup()
        if found is None or found[0] != wanted_key_id:
            self.trace("key-unavailable", "error", self.section, keyId=wanted_key_id)
            raise _KeyUnavailableHere(wanted_key_id)
        return found[1]

    def open(self, rec: RoutedRecord) -> Any:
        """Raises DecryptFailure, a validation DHLinkError, or _KeyUnavailableHere."""
        env = rec.envelope
        if env.encrypted:
            key = self.private_key(env.key_id)
            try:
                data = decrypt_payload(key, env.payload, payload_aad(env.topic, env.section, env.key_id))
            except DecryptFailure:
                self.trace("decrypt", "failure", self.section, offset=rec.offset)
                raise
            self.trace("decrypt", "ok", self.section, offset=rec.offset)
        else:
            data = env.payload
            self.trace("decrypt", "plaintext", self.section, offset=rec.offset)
        try:
            value = canonical_decode(data)
        except ValueError as exc:
            self.trace("validate", "undecodable", self.section, offset=rec.offset)
            raise EncodingError(f"payload at offset {rec.offset} is not a structured value: {exc}") from None
        report = validate_instance(self.schema, value)
        if not report.ok:
            self.trace("validate", "violation", self.section, offset=rec.offset)
            report.raise_for_violations()
        self.trace("validate", "ok", self.section, offset=rec.offset)
        return value


class SinkConnector:
    """Attaches a receiving microservice to its section of one topic.

    Cursor and the de-duplication window are persisted to ``state_path``
    after every poll, so a restarted sink never re-delivers an offset.
    """

    def __init__(self, core, security, topic: str, section: str, schema: DataSchema, *,
                 key_cache: KeyCache | None = None, state_path=None,
                 dedup_window: int = DEDUP_WINDOW, tracer=None):
        self.core = core
        self.security = security
        self.topic = topic
        self.section = section
        self.schema = schema
        self.key_cache = key_cache if key_cache is not None else KeyCache()
        self.state_path = Path(state_path) if state_path else None
        self.dedup_window = dedup_window
        self.trace = tracer or null_tracer
        self.receiver_id = core.cred.service_id
        self.report = SinkReport()
        self.cursor = 0
        self._seen: OrderedDict[str, None] = OrderedDict()
        self._lock = threading.Lock()
        self._opener = _RecordOpener(security, topic, section, schema, self.key_cache, self.trace)
        self._load_state()

    def _load_state(self) -> None:
        if self.state_path is None:
            return
        doc = read_json(self.state_path)
        if doc:
            self.cursor = int(doc.get("cursor", 0))
            self._seen = OrderedDict((m, None) for m in doc.get("seen", []))

    def _save_state(self) -> None:
        if self.state_path is not None:
            atomic_write_json(self.state_path, {
                "topic": self.topic,
                "section": self.section,
                "cursor": self.cursor,
                "seen": list(self._seen),
            })

    def _remember(self, message_id: str) -> None:
        self._seen[message_id] = None
        while len(self._seen) > self.dedup_window:
            self._seen.popitem(last=False)

    def poll(self, max_count: int = 100) -> list[Delivery]:
        with self._lock:
            return self._poll(max_count)

    def _poll(self, max_count: int) -> list[Delivery]:
        decision = self.security.check(self.topic, RECEIVE, self.section)
        self.trace("authorize-receive", decision, self.section)
        if decision != ALLOW:
            self.trace("reject", "receive-rejected", self.section)
            raise Unauthorized(f"{self.receiver_id} may not receive from {self.topic}/{self.section}")
        records = self.core.fetch(self.topic, self.section, self.cursor, max_count)
        self.trace("fetch", "ok", self.section, count=len(records), cursor=self.cursor)

        out: list[Delivery] = []
        blocked: str | None = None
        cursor = self.cursor
        for rec in records:
            env = rec.envelope
            if env.message_id in self._seen:
                self.report.duplicates += 1
                self.trace("dedup", "duplicate", self.section, offset=rec.offset)
                cursor = rec.offset + 1
                continue
            try:
                value = self._opener.open(rec)
            except _KeyUnavailableHere as exc:
                blocked = str(exc)
                break
            except DecryptFailure as exc:
                self.report.decrypt_failures += 1
                self.report.note(rec.offset, "decrypt-failure", str(exc))
                cursor = rec.offset + 1
                continue
            except DHLinkError as exc:
                self.report.invalid += 1
                self.report.note(rec.offset, exc.code, str(exc))
                cursor = rec.offset + 1
                continue
            self._remember(env.message_id)
            out.append(Delivery(rec.offset, value, env.message_id, env.sender, env.sent_at, env.encrypted))
            cursor = rec.offset + 1

        self.cursor = cursor
        self.report.delivered += len(out)
        self._save_state()
        if blocked is not None and not out:
            raise KeyUnavailable(
                f"no private key {blocked} for {self.topic}/{self.section} at offset {self.cursor}"
            )
        return out

    def run(self, handler: Callable[[Delivery], None], stop: threading.Event,
            interval_ms: int = 100, max_count: int = 100) -> None:
        """Poll until ``stop`` is set; errors are logged and retried next round."""
        while not stop.is_set():
            try:
                for d in self.poll(max_count):
                    handler(d)
            except DHLinkError as exc:
                log.warning("sink %s on %s/%s: %s", self.receiver_id, self.topic, self.section, exc)
            stop.wait(interval_ms / 1000)


class RestReader:
    """Read-only access to a section over the broker REST API, with decrypt and validate.

    Keeps no cursor; callers pass offsets themselves.
    """

    def __init__(self, core, security, topic: str, section: str, schema: DataSchema,
                 key_cache: KeyCache | None = None):
        self.core = core
        self.topic = topic
        self.section = section
        self._opener = _RecordOpener(security, topic, section, schema,
                                     key_cache if key_cache is not None else KeyCache(), null_tracer)

    def read(self, offset: int = 0, max_count: int = 100) -> list[Delivery]:
        out = []
        for rec in self.core.fetch(self.topic, self.section, offset, max_count):
            try:
                value = self._opener.open(rec)
            except _KeyUnavailableHere as exc:
                raise KeyUnavailable(f"no private key {exc} for offset {rec.offset}") from None
            env = rec.envelope
            out.append(Delivery(rec.offset, value, env.message_id, env.sender, env.sent_at, env.encrypted))
        return out

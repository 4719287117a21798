"""Source connector: validate, encrypt per section, authorize, append."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

from dhlink.connector.keycache import PUBLIC, KeyCache
from dhlink.connector.trace import null_tracer
from dhlink.envelope import Envelope, MessageIdGenerator, shared_message_ids
from dhlink.errors import (
    AccessDenied,
    BrokerUnreachable,
    ConnectivityError,
    KeyNotFound,
    SchemaViolation,
    Unauthorized,
    UnknownTopic,
)
from dhlink.schema import DataSchema, canonical_encode, validate_instance
from dhlink.security.acl import ALLOW, SEND
from dhlink.security.crypto import encrypt_payload
from dhlink.security.keys import now_ms

log = logging.getLogger(__name__)

SENT = "sent"
KEY_UNAVAILABLE = "key-unavailable"


def payload_aad(topic: str, section: str, key_id: str) -> bytes:
    """Associated data binding a ciphertext to its section and key."""
    return f"{topic}/{section}/{key_id}".encode("utf-8")


@dataclass(frozen=True)
class SendOutcome:
    section: str
    offset: int | None
    encrypted: bool
    status: str = SENT


class SourceConnector:
    """Attaches a sending microservice to one topic.

    ``core`` and ``security`` are clients already bound to the sender's
    credentials (HTTP or in-process, same surface).
    """

    def __init__(self, core, security, topic: str, schema: DataSchema, *,
                 plaintext_fallback: bool = False, key_cache: KeyCache | None = None,
                 clock=now_ms, tracer=None, message_ids: MessageIdGenerator | None = None):
        self.core = core
        self.security = security
        self.topic = topic
        self.schema = schema
        self.plaintext_fallback = plaintext_fallback
        self.key_cache = key_cache if key_cache is not None else KeyCache()
        self.clock = clock
        self.trace = tracer or null_tracer
        self.sender_id = core.cred.service_id
        # one counter per sender in this process, starting at clock-ms * 1000 so a
        # restarted sender never reuses ids still inside a sink's de-duplication window
        self.message_ids = message_ids or shared_message_ids(self.sender_id, int(clock()) * 1000)
        self.send_count = 0
        self.last_message_id: str | None = None

    def _sections(self) -> list[str] | None:
        """Section ids in order, or None when the topic does not exist."""
        try:
            doc = self.core.describe_topic(self.topic)
        except UnknownTopic:
            return None
        except ConnectivityError as exc:
            raise BrokerUnreachable(str(exc)) from exc
        return sorted(s["sectionId"] for s in doc["sections"])

    def _public_key(self, section: str) -> tuple[str, bytes] | None:
        entry = self.key_cache.get(self.topic, section, PUBLIC)
        if entry is not None:
            self.trace("key-cache", "hit", section, keyId=entry.key_id)
            return entry.key_id, entry.key_bytes
        self.trace("key-cache", "miss", section)
        try:
            key_id, key = self.security.get_public_key(self.topic, section)
        except KeyNotFound:
            self.trace("key-lookup", "not-found", section)
            return None
        except AccessDenied:
            self.trace("key-lookup", "deny", section)
            return None
        self.key_cache.put(self.topic, section, PUBLIC, key_id, key)
        self.trace("key-lookup", "found", section, keyId=key_id)
        return key_id, key

    def send(self, value: Any) -> list[SendOutcome]:
        report = validate_instance(self.schema, value)
        if not report.ok:
            self.trace("validate", "violation", count=len(report.violations))
            raise SchemaViolation(report.violations)
        self.trace("validate", "ok")
        plaintext = canonical_encode(value)
        message_id = self.message_ids()
        self.last_message_id = message_id
        sent_at = self.clock()

        sections = self._sections()
        planned: list[Envelope | SendOutcome] = []
        for section in sections or ():
            found = self._public_key(section)
            common = dict(topic=self.topic, section=section, schema=self.schema.name,
                          schema_version=self.schema.version, sender=self.sender_id,
                          message_id=message_id, sent_at=sent_at)
            if found is not None:
                key_id, key = found
                payload = encrypt_payload(key, plaintext, payload_aad(self.topic, section, key_id))
                planned.append(Envelope(encrypted=True, key_id=key_id, payload=payload, **common))
                self.trace("encrypt", "encrypted", section, keyId=key_id)
            elif self.plaintext_fallback:
                planned.append(Envelope(encrypted=False, payload=plaintext, **common))
                self.trace("encrypt", "plaintext-fallback", section)
            else:
                planned.append(SendOutcome(section, None, False, KEY_UNAVAILABLE))
                self.trace("encrypt", "key-unavailable", section)

        try:
            decision = self.security.check(self.topic, SEND)
        except ConnectivityError as exc:
            raise BrokerUnreachable(str(exc)) from exc
        self.trace("authorize-send", decision)
        if decision != ALLOW:
            self.trace("reject", "send-rejected")
            raise Unauthorized(f"{self.sender_id} may not send on {self.topic}")
        if sections is None:
            # authorized, yet the broker has no such topic
            raise UnknownTopic(f"unknown topic {self.topic!r}")

        outcomes = []
        for item in planned:
            if isinstance(item, SendOutcome):
                outcomes.append(item)
                continue
            try:
                offset = self.core.append(self.topic, item.section, item)
            except ConnectivityError as exc:
                raise BrokerUnreachable(str(exc)) from exc
            self.trace("append", "ok", item.section, offset=offset, encrypted=item.encrypted)
            outcomes.append(SendOutcome(item.section, offset, item.encrypted))
        self.send_count += 1
        return outcomes

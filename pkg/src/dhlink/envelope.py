"""The routed message unit and its JSON wire form."""

from __future__ import annotations

import base64
import binascii
import itertools
import json
import re
import threading
from dataclasses import dataclass

from dhlink.errors import MalformedEnvelope

_WIRE_FIELDS = {
    "topic": str,
    "section": str,
    "schema": str,
    "schemaVersion": int,
    "sender": str,
    "messageId": str,
    "sentAt": int,
    "encrypted": bool,
    "payload": str,
}


_B64URL = re.compile(r"^[A-Za-z0-9_-]*={0,2}$")


def b64url_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64url_decode(text: str) -> bytes:
    if not isinstance(text, str):
        raise ValueError("base64url value must be a string")
    if not _B64URL.match(text):
        raise ValueError("invalid base64url alphabet")
    padded = text + "=" * (-len(text) % 4)
    return base64.b64decode(padded.encode("ascii"), altchars=b"-_", validate=True)


@dataclass(frozen=True)
class Envelope:
    topic: str
    section: str
    schema: str
    schema_version: int
    sender: str
    message_id: str
    sent_at: int
    encrypted: bool
    payload: bytes
    key_id: str | None = None

    def __post_init__(self):
        if self.encrypted and not self.key_id:
            raise MalformedEnvelope("encrypted envelope requires keyId")
        if not self.encrypted and self.key_id is not None:
            raise MalformedEnvelope("plaintext envelope must not carry keyId")
        if not isinstance(self.payload, (bytes, bytearray)) or not self.payload:
            raise MalformedEnvelope("payload must be non-empty bytes")

    @property
    def schema_ref(self) -> tuple[str, int]:
        return (self.schema, self.schema_version)

    def to_wire(self) -> dict:
        doc = {
            "topic": self.topic,
            "section": self.section,
            "schema": self.schema,
            "schemaVersion": self.schema_version,
            "sender": self.sender,
            "messageId": self.message_id,
            "sentAt": self.sent_at,
            "encrypted": self.encrypted,
            "payload": b64url_encode(bytes(self.payload)),
        }
        if self.key_id is not None:
            doc["keyId"] = self.key_id
        return doc

    @classmethod
    def from_wire(cls, doc) -> "Envelope":
        if not isinstance(doc, dict):
            raise MalformedEnvelope("envelope must be a JSON object")
        for name, typ in _WIRE_FIELDS.items():
            if name not in doc:
                raise MalformedEnvelope(f"missing field {name!r}")
            value = doc[name]
            if typ is int and (isinstance(value, bool) or not isinstance(value, int)):
                raise MalformedEnvelope(f"field {name!r} must be an integer")
            if not isinstance(value, typ):
                raise MalformedEnvelope(f"field {name!r} must be {typ.__name__}")
        extra = set(doc) - set(_WIRE_FIELDS) - {"keyId"}
        if extra:
            raise MalformedEnvelope(f"unknown fields {sorted(extra)}")
        key_id = doc.get("keyId")
        if key_id is not None and not isinstance(key_id, str):
            raise MalformedEnvelope("keyId must be a string")
        try:
            payload = b64url_decode(doc["payload"])
        except (binascii.Error, ValueError) as exc:
            raise MalformedEnvelope(f"invalid base64 payload: {exc}") from None
        return cls(
            topic=doc["topic"],
            section=doc["section"],
            schema=doc["schema"],
            schema_version=doc["schemaVersion"],
            sender=doc["sender"],
            message_id=doc["messageId"],
            sent_at=doc["sentAt"],
            encrypted=doc["encrypted"],
            key_id=key_id,
            payload=payload,
        )


def encode_envelope(env: Envelope) -> bytes:
    return json.dumps(env.to_wire(), sort_keys=True, separators=(",", ":")).encode("utf-8")


def parse_envelope(data: bytes | str) -> Envelope:
    try:
        doc = json.loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedEnvelope(f"not JSON: {exc}") from None
    return Envelope.from_wire(doc)


class MessageIdGenerator:
    """``<sender>-<n>`` ids from a monotonic counter."""

    def __init__(self, sender: str, start: int = 0):
        self.sender = sender
        self._counter = itertools.count(start)
        self._lock = threading.Lock()
        self.last = start - 1

    def __call__(self) -> str:
        with self._lock:
            self.last = next(self._counter)
            return f"{self.sender}-{self.last}"


_shared: dict[str, MessageIdGenerator] = {}
_shared_lock = threading.Lock()


def shared_message_ids(sender: str, start: int) -> MessageIdGenerator:
    """The process-wide generator for ``sender``, created at ``start`` on first use.

    Connectors of one sender draw from it so their ids never collide.
    """
    with _shared_lock:
        gen = _shared.get(sender)
        if gen is None:
            gen = _shared[sender] = MessageIdGenerator(sender, start)
        return gen

"""Encryption management: custody of section-scoped keypairs."""

from __future__ import annotations

import base64
import logging
import secrets
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path

from dhlink._io import atomic_write_jsonl, read_jsonl
from dhlink.errors import ActiveKeyExists, KeyNotFound
from dhlink.security.crypto import SUITE, generate_keypair

log = logging.getLogger(__name__)

ACTIVE = "active"
REVOKED = "revoked"


def now_ms() -> int:
    return int(time.time() * 1000)


@dataclass(frozen=True)
class KeyPairRecord:
    key_id: str
    topic: str
    section: str
    public_key: bytes
    private_key: bytes
    created_at: int
    status: str = ACTIVE
    suite: str = SUITE

    def public_info(self) -> dict:
        return {
            "keyId": self.key_id,
            "topic": self.topic,
            "section": self.section,
            "publicKey": base64.b64encode(self.public_key).decode(),
            "createdAt": self.created_at,
            "status": self.status,
            "suite": self.suite,
        }

    def to_row(self) -> dict:
        row = self.public_info()
        row["privateKey"] = base64.b64encode(self.private_key).decode()
        return row

    @classmethod
    def from_row(cls, row: dict) -> "KeyPairRecord":
        return cls(
            key_id=row["keyId"],
            topic=row["topic"],
            section=row["section"],
            public_key=base64.b64decode(row["publicKey"]),
            private_key=base64.b64decode(row["privateKey"]),
            created_at=row["createdAt"],
            status=row["status"],
            suite=row.get("suite", SUITE),
        )


class KeyStore:
    """Keypair registry. At most one active key per (topic, section).

    The file at ``path`` is the only place private keys are persisted; it is
    rewritten atomically with owner-only permissions on every change.
    Readers see an immutable (records, active-index) snapshot that writers
    swap in one assignment, so a rotation is never observed half done.
    """

    def __init__(self, path=None, clock=now_ms):
        self.path = Path(path) if path else None
        self.clock = clock
        self._lock = threading.Lock()
        records: dict[str, KeyPairRecord] = {}
        if self.path is not None:
            for row in read_jsonl(self.path):
                rec = KeyPairRecord.from_row(row)
                records[rec.key_id] = rec
        self._swap(records)

    def _swap(self, records: dict[str, KeyPairRecord]) -> None:
        active = {(r.topic, r.section): r.key_id for r in records.values() if r.status == ACTIVE}
        self._state = (records, active)

    def _commit(self, records: dict[str, KeyPairRecord]) -> None:
        if self.path is not None:
            rows = [r.to_row() for r in records.values()]
            atomic_write_jsonl(self.path, rows, mode=0o600)
        self._swap(records)

    def generate(self, topic: str, section: str, rotate: bool = False) -> KeyPairRecord:
        with self._lock:
            records, active = self._state
            old_id = active.get((topic, section))
            if old_id is not None and not rotate:
                raise ActiveKeyExists(f"active key {old_id} exists for {topic}/{section}")
            pair = generate_keypair()
            rec = KeyPairRecord(
                key_id="k-" + secrets.token_hex(8),
                topic=topic,
                section=section,
                public_key=pair.public_key,
                private_key=pair.private_key,
                created_at=self.clock(),
            )
            records = dict(records)
            if old_id is not None:
                records[old_id] = replace(records[old_id], status=REVOKED)
            records[rec.key_id] = rec
            self._commit(records)
            log.info("generated key %s for %s/%s (replaces %s)", rec.key_id, topic, section, old_id)
            return rec

    def active(self, topic: str, section: str) -> KeyPairRecord:
        records, active = self._state
        key_id = active.get((topic, section))
        if key_id is None:
            raise KeyNotFound(f"no active key for {topic}/{section}")
        return records[key_id]

    def get(self, key_id: str) -> KeyPairRecord:
        try:
            return self._state[0][key_id]
        except KeyError:
            raise KeyNotFound(f"unknown key {key_id}") from None

    def revoke(self, key_id: str) -> KeyPairRecord:
        with self._lock:
            rec = self.get(key_id)
            if rec.status == REVOKED:
                return rec
            rec = replace(rec, status=REVOKED)
            records = dict(self._state[0])
            records[key_id] = rec
            self._commit(records)
            return rec

    def delete(self, key_id: str) -> None:
        with self._lock:
            rec = self.get(key_id)
            if rec.status == ACTIVE:
                raise ActiveKeyExists(f"revoke {key_id} before deleting it")
            records = dict(self._state[0])
            del records[key_id]
            self._commit(records)

    def records(self, topic: str | None = None) -> list[KeyPairRecord]:
        recs = list(self._state[0].values())
        if topic is not None:
            recs = [r for r in recs if r.topic == topic]
        return sorted(recs, key=lambda r: (r.topic, r.section, r.created_at, r.key_id))

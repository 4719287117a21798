"""Microservice profiles and the access-control authorizer."""

from __future__ import annotations

import hashlib
import hmac
import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

from dhlink._io import atomic_write_json, atomic_write_jsonl, read_json, read_jsonl
from dhlink.errors import (
    BadCredential,
    DuplicateEntry,
    DuplicateName,
    UnknownEntry,
    UnknownService,
    ValidationError,
)
from dhlink.security.keys import now_ms

log = logging.getLogger(__name__)

SEND = "send"
RECEIVE = "receive"
OPERATIONS = (SEND, RECEIVE)
ALLOW = "allow"
DENY = "deny"


def fingerprint(api_key: str) -> str:
    """Fixed-length hex digest stored instead of the api key."""
    return hashlib.sha256(api_key.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class MicroserviceProfile:
    service_id: str
    credential_fingerprint: str
    owner_app_id: str = ""

    def __post_init__(self):
        fp = self.credential_fingerprint
        if len(fp) != 64 or any(c not in "0123456789abcdef" for c in fp):
            raise ValidationError("credential fingerprint must be 64 lowercase hex characters")

    def to_dict(self) -> dict:
        return {
            "serviceId": self.service_id,
            "fingerprint": self.credential_fingerprint,
            "ownerAppId": self.owner_app_id,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MicroserviceProfile":
        return cls(doc["serviceId"], doc["fingerprint"], doc.get("ownerAppId", ""))


@dataclass(frozen=True, order=True)
class AccessControlEntry:
    service_id: str
    topic: str
    operation: str
    section: str | None = None

    def __post_init__(self):
        if self.operation not in OPERATIONS:
            raise ValidationError(f"operation must be send or receive, got {self.operation!r}")
        if self.operation == RECEIVE and not self.section:
            raise ValidationError("receive entries require a section")
        if self.operation == SEND and self.section is not None:
            raise ValidationError("send entries must not name a section")

    def to_dict(self) -> dict:
        doc = {"serviceId": self.service_id, "topic": self.topic, "operation": self.operation}
        if self.section is not None:
            doc["section"] = self.section
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "AccessControlEntry":
        try:
            return cls(doc["serviceId"], doc["topic"], doc["operation"], doc.get("section"))
        except KeyError as exc:
            raise ValidationError(f"ACL entry missing {exc.args[0]!r}") from None


class Authorizer:
    """Admin-maintained ACL plus the profile table it authenticates against.

    Every ``authorize`` decision is appended to the audit log.
    """

    def __init__(
        self,
        data_dir=None,
        clock=now_ms,
        section_owner: Callable[[str, str], str | None] | None = None,
    ):
        self.data_dir = Path(data_dir) if data_dir else None
        self.clock = clock
        # optional hook to check that receive entries name the receiver's own section
        self.section_owner = section_owner
        self._lock = threading.Lock()
        self._audit_lock = threading.Lock()
        self._profiles: dict[str, MicroserviceProfile] = {}
        self._entries: frozenset[AccessControlEntry] = frozenset()
        self._audit = None
        if self.data_dir is not None:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            for doc in read_json(self.data_dir / "profiles.json", []):
                p = MicroserviceProfile.from_dict(doc)
                self._profiles[p.service_id] = p
            self._entries = frozenset(
                AccessControlEntry.from_dict(r) for r in read_jsonl(self.data_dir / "acl.jsonl")
            )
            self._audit = open(self.data_dir / "audit.jsonl", "a", encoding="utf-8")

    def close(self) -> None:
        if self._audit is not None:
            self._audit.close()
            self._audit = None

    # -- profiles ---------------------------------------------------------

    def register_profile(self, profile: MicroserviceProfile) -> None:
        with self._lock:
            if profile.service_id in self._profiles:
                raise DuplicateName(f"service {profile.service_id} already registered")
            profiles = dict(self._profiles)
            profiles[profile.service_id] = profile
            self._save_profiles(profiles)

    def remove_profile(self, service_id: str) -> None:
        with self._lock:
            if service_id not in self._profiles:
                raise UnknownService(service_id)
            profiles = dict(self._profiles)
            del profiles[service_id]
            self._save_profiles(profiles)

    def _save_profiles(self, profiles) -> None:
        if self.data_dir is not None:
            atomic_write_json(
                self.data_dir / "profiles.json",
                [p.to_dict() for p in sorted(profiles.values(), key=lambda p: p.service_id)],
            )
        self._profiles = profiles

    def profiles(self) -> list[MicroserviceProfile]:
        return sorted(self._profiles.values(), key=lambda p: p.service_id)

    def get_profile(self, service_id: str) -> MicroserviceProfile:
        try:
            return self._profiles[service_id]
        except KeyError:
            raise UnknownService(f"unknown service {service_id!r}") from None

    def authenticate(self, service_id: str, api_key: str) -> MicroserviceProfile:
        profile = self.get_profile(service_id)
        if not hmac.compare_digest(fingerprint(api_key or ""), profile.credential_fingerprint):
            raise BadCredential(f"credential mismatch for {service_id!r}")
        return profile

    # -- ACL --------------------------------------------------------------

    def add_entry(self, entry: AccessControlEntry) -> None:
        with self._lock:
            if entry in self._entries:
                raise DuplicateEntry(f"ACL entry exists: {entry.to_dict()}")
            if entry.operation == RECEIVE and self.section_owner is not None:
                owner = self.section_owner(entry.topic, entry.section)
                if owner != entry.service_id:
                    raise ValidationError(
                        f"section {entry.topic}/{entry.section} is not assigned to {entry.service_id}"
                    )
            self._save_entries(self._entries | {entry})

    def remove_entry(self, entry: AccessControlEntry) -> None:
        with self._lock:
            if entry not in self._entries:
                raise UnknownEntry(f"no ACL entry {entry.to_dict()}")
            self._save_entries(self._entries - {entry})

    def _save_entries(self, entries: frozenset) -> None:
        if self.data_dir is not None:
            atomic_write_jsonl(self.data_dir / "acl.jsonl", [e.to_dict() for e in sorted(entries, key=_entry_key)])
        self._entries = entries

    def entries(self, service_id: str | None = None, topic: str | None = None) -> list[AccessControlEntry]:
        return sorted(
            (e for e in self._entries
             if (service_id is None or e.service_id == service_id)
             and (topic is None or e.topic == topic)),
            key=_entry_key,
        )

    def is_allowed(self, service_id: str, topic: str, operation: str, section: str | None = None) -> bool:
        if operation == SEND:
            entry = AccessControlEntry(service_id, topic, SEND)
        elif operation == RECEIVE and section:
            entry = AccessControlEntry(service_id, topic, RECEIVE, section)
        else:
            return False
        return entry in self._entries

    def authorize(
        self, profile: MicroserviceProfile, topic: str, operation: str, section: str | None = None
    ) -> str:
        decision = ALLOW if self.is_allowed(profile.service_id, topic, operation, section) else DENY
        self._log_decision(profile.service_id, topic, operation, section, decision)
        return decision

    def _log_decision(self, service_id, topic, operation, section, decision) -> None:
        row = {
            "ts": self.clock(),
            "serviceId": service_id,
            "topic": topic,
            "operation": operation,
            "section": section,
            "decision": decision,
        }
        if decision == DENY:
            log.info("deny %s %s on %s/%s", service_id, operation, topic, section)
        if self._audit is not None:
            line = json.dumps(row, separators=(",", ":")) + "\n"
            with self._audit_lock:
                self._audit.write(line)
                self._audit.flush()


def _entry_key(e: AccessControlEntry):
    return (e.service_id, e.topic, e.operation, e.section or "")


def entries_from(docs: Iterable[dict]) -> list[AccessControlEntry]:
    return [AccessControlEntry.from_dict(d) for d in docs]

"""The security service: authentication, authorization and key custody.

Runs behind its own listener with its own admin token and persistence
directory, separate from the broker and discovery.
"""

from __future__ import annotations

import threading
from collections import Counter
from pathlib import Path

from dhlink.auth import Credentials, require_admin
from dhlink.errors import AccessDenied, AuthenticationFailed, ValidationError
from dhlink.security.acl import (
    ALLOW,
    RECEIVE,
    SEND,
    AccessControlEntry,
    Authorizer,
    MicroserviceProfile,
    fingerprint,
)
from dhlink.security.keys import KeyStore, now_ms


class SecurityService:
    def __init__(self, data_dir=None, admin_token: str | None = None, clock=now_ms, section_owner=None):
        self.data_dir = Path(data_dir) if data_dir else None
        self.admin_token = admin_token
        self.authorizer = Authorizer(self.data_dir, clock=clock, section_owner=section_owner)
        keys_path = self.data_dir / "keys.jsonl" if self.data_dir else None
        self.keys = KeyStore(keys_path, clock=clock)
        self._counts: Counter = Counter()
        self._count_lock = threading.Lock()

    def close(self) -> None:
        self.authorizer.close()

    def _count(self, name: str) -> None:
        with self._count_lock:
            self._counts[name] += 1

    def stats(self) -> dict[str, int]:
        with self._count_lock:
            out = dict(self._counts)
        out.setdefault("key_lookups", 0)
        out.setdefault("authz_checks", 0)
        return out

    # -- identity ---------------------------------------------------------

    def authenticate(self, cred: Credentials) -> MicroserviceProfile:
        if not cred.service_id:
            raise AuthenticationFailed("missing service identity")
        return self.authorizer.authenticate(cred.service_id, cred.api_key or "")

    def check(self, cred: Credentials, topic: str, operation: str, section: str | None = None) -> str:
        """Authenticate the caller, then decide its own access."""
        profile = self.authenticate(cred)
        self._count("authz_checks")
        return self.authorizer.authorize(profile, topic, operation, section)

    def register_profile(self, cred: Credentials, service_id: str, *, api_key: str | None = None,
                         fingerprint_hex: str | None = None, owner_app_id: str = "") -> MicroserviceProfile:
        require_admin(cred, self.admin_token)
        if (api_key is None) == (fingerprint_hex is None):
            raise ValidationError("give exactly one of api_key or fingerprint")
        fp = fingerprint(api_key) if api_key is not None else fingerprint_hex
        profile = MicroserviceProfile(service_id, fp, owner_app_id)
        self.authorizer.register_profile(profile)
        return profile

    def remove_profile(self, cred: Credentials, service_id: str) -> None:
        require_admin(cred, self.admin_token)
        self.authorizer.remove_profile(service_id)

    def list_profiles(self, cred: Credentials) -> list[MicroserviceProfile]:
        require_admin(cred, self.admin_token)
        return self.authorizer.profiles()

    # -- ACL ----------------------------------------------------------------

    def add_acl(self, cred: Credentials, entry: AccessControlEntry) -> None:
        require_admin(cred, self.admin_token)
        self.authorizer.add_entry(entry)

    def remove_acl(self, cred: Credentials, entry: AccessControlEntry) -> None:
        require_admin(cred, self.admin_token)
        self.authorizer.remove_entry(entry)

    def list_acl(self, cred: Credentials, service_id: str | None = None,
                 topic: str | None = None) -> list[AccessControlEntry]:
        require_admin(cred, self.admin_token)
        return self.authorizer.entries(service_id, topic)

    # -- keys ---------------------------------------------------------------

    def generate_key(self, cred: Credentials, topic: str, section: str, rotate: bool = False) -> dict:
        require_admin(cred, self.admin_token)
        return self.keys.generate(topic, section, rotate=rotate).public_info()

    def list_keys(self, cred: Credentials, topic: str | None = None) -> list[dict]:
        require_admin(cred, self.admin_token)
        return [r.public_info() for r in self.keys.records(topic)]

    def revoke_key(self, cred: Credentials, key_id: str) -> dict:
        require_admin(cred, self.admin_token)
        return self.keys.revoke(key_id).public_info()

    def delete_key(self, cred: Credentials, key_id: str) -> None:
        require_admin(cred, self.admin_token)
        self.keys.delete(key_id)

    def get_public_key(self, cred: Credentials, topic: str, section: str) -> tuple[str, bytes]:
        profile = self.authenticate(cred)
        self._count("key_lookups")
        rec = self.keys.active(topic, section)
        if self.authorizer.authorize(profile, topic, SEND) != ALLOW:
            raise AccessDenied(f"{profile.service_id} may not send on {topic}")
        return rec.key_id, rec.public_key

    def get_private_key(self, cred: Credentials, topic: str, section: str) -> tuple[str, bytes]:
        # admin tokens are deliberately not honoured here
        profile = self.authenticate(cred)
        self._count("key_lookups")
        rec = self.keys.active(topic, section)
        if self.authorizer.authorize(profile, topic, RECEIVE, section) != ALLOW:
            raise AccessDenied(f"{profile.service_id} is not the receiver of {topic}/{section}")
        return rec.key_id, rec.private_key

"""User management with role checks and deidentification tokens."""

from __future__ import annotations

import hashlib
import hmac
import secrets
import threading
from dataclasses import dataclass
from pathlib import Path

from dhlink._io import atomic_write_json, read_json
from dhlink.errors import AccessDenied, BadCredential, DuplicateUser, UnknownName, ValidationError

DEFAULT_ITERATIONS = 200_000
TOKEN_HEX = 32


def deid_token(secret: bytes, user_id: str) -> str:
    """Keyed one-way token: HMAC-SHA256 of the user id, first 32 hex characters."""
    return hmac.new(secret, user_id.encode("utf-8"), hashlib.sha256).hexdigest()[:TOKEN_HEX]


def _hash_password(password: str, salt: bytes, iterations: int) -> str:
    return hashlib.pbkdf2_hmac("sha256", password.encode("utf-8"), salt, iterations).hex()


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    display_name: str
    credential: str  # "pbkdf2-sha256$<iterations>$<salt hex>$<hash hex>"
    roles: tuple[str, ...]
    deid_token: str

    def to_dict(self) -> dict:
        return {"userId": self.user_id, "displayName": self.display_name, "credential": self.credential,
                "roles": list(self.roles), "deidToken": self.deid_token}

    @classmethod
    def from_dict(cls, doc: dict) -> "UserRecord":
        return cls(doc["userId"], doc["displayName"], doc["credential"], tuple(doc["roles"]), doc["deidToken"])


@dataclass(frozen=True)
class Session:
    user_id: str
    deid_token: str
    roles: tuple[str, ...]
    session_id: str

    def require_role(self, role: str) -> None:
        if role not in self.roles:
            raise AccessDenied(f"role {role!r} required")


class UserService:
    """Profiles live only here; everything shared carries the deid token instead."""

    def __init__(self, secret: bytes, path=None, iterations: int = DEFAULT_ITERATIONS):
        if len(secret) < 16:
            raise ValidationError("deidentification secret must be at least 16 bytes")
        self._secret = secret
        self.path = Path(path) if path else None
        self.iterations = iterations
        self._lock = threading.Lock()
        self._users: dict[str, UserRecord] = {}
        if self.path is not None:
            for doc in read_json(self.path, []):
                rec = UserRecord.from_dict(doc)
                self._users[rec.user_id] = rec

    def _save(self) -> None:
        if self.path is not None:
            atomic_write_json(self.path, [self._users[k].to_dict() for k in sorted(self._users)], mode=0o600)

    def register_user(self, display_name: str, password: str, roles=("patient",),
                      user_id: str | None = None) -> str:
        if not display_name or not password:
            raise ValidationError("display name and credential are required")
        with self._lock:
            if any(u.display_name == display_name for u in self._users.values()):
                raise DuplicateUser(f"user {display_name!r} exists")
            uid = user_id or "u-" + secrets.token_hex(8)
            if uid in self._users:
                raise DuplicateUser(f"user id {uid!r} exists")
            salt = secrets.token_bytes(16)
            credential = f"pbkdf2-sha256${self.iterations}${salt.hex()}${_hash_password(password, salt, self.iterations)}"
            self._users[uid] = UserRecord(uid, display_name, credential, tuple(roles), deid_token(self._secret, uid))
            self._save()
            return uid

    def get(self, user_id: str) -> UserRecord:
        try:
            return self._users[user_id]
        except KeyError:
            raise UnknownName(f"unknown user {user_id!r}") from None

    def users(self) -> list[UserRecord]:
        return [self._users[k] for k in sorted(self._users)]

    def deidentify(self, user_id: str) -> str:
        self.get(user_id)
        return deid_token(self._secret, user_id)

    def authenticate_user(self, display_name: str, password: str) -> Session:
        for u in self._users.values():
            if u.display_name == display_name:
                break
        else:
            # same work either way so timing does not reveal which names exist
            _hash_password(password, b"\0" * 16, self.iterations)
            raise BadCredential("bad user name or password")
        _, iterations, salt_hex, expected = u.credential.split("$")
        actual = _hash_password(password, bytes.fromhex(salt_hex), int(iterations))
        if not hmac.compare_digest(actual, expected):
            raise BadCredential("bad user name or password")
        return Session(u.user_id, u.deid_token, u.roles, secrets.token_hex(16))

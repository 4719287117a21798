from __future__ import annotations

import hmac
from dataclasses import dataclass

from dhlink.errors import NotAdmin


@dataclass(frozen=True)
class Credentials:
    """Caller identity as carried by the X-DHLink-* request headers."""

    service_id: str | None = None
    api_key: str | None = None
    admin_token: str | None = None

    def headers(self) -> dict[str, str]:
        out = {}
        if self.service_id is not None:
            out["X-DHLink-Service-Id"] = self.service_id
        if self.api_key is not None:
            out["X-DHLink-Api-Key"] = self.api_key
        if self.admin_token is not None:
            out["X-DHLink-Admin-Token"] = self.admin_token
        return out

    @classmethod
    def from_headers(cls, headers) -> "Credentials":
        return cls(
            service_id=headers.get("x-dhlink-service-id"),
            api_key=headers.get("x-dhlink-api-key"),
            admin_token=headers.get("x-dhlink-admin-token"),
        )


ANONYMOUS = Credentials()


def is_admin(cred: Credentials, token: str | None) -> bool:
    if not token or not cred.admin_token:
        return False
    return hmac.compare_digest(cred.admin_token.encode(), token.encode())


def require_admin(cred: Credentials, token: str | None) -> None:
    if not is_admin(cred, token):
        raise NotAdmin("administrator token required")

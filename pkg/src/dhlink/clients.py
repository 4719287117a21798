"""Clients for the core and security services.

Two transports share one method surface: ``Http*Client`` talks JSON over
HTTP(S); ``Local*Client`` calls a service object in the same process (still
going through the same credential checks). Connectors, the admin tooling and
the scenario harness accept either.
"""

from __future__ import annotations

import base64
import ssl
from typing import Any

import httpx

from dhlink.auth import Credentials, require_admin
from dhlink.broker import RoutedRecord
from dhlink.discovery import MicroserviceInfo, TopicInfo
from dhlink.envelope import Envelope, encode_envelope
from dhlink.errors import ConnectivityError, DHLinkError, error_for
from dhlink.schema import DataSchema
from dhlink.security.acl import AccessControlEntry


class _HttpBase:
    def __init__(self, base_url: str, cred: Credentials | None = None, *,
                 verify: bool | str = True, timeout: float = 10.0, http: httpx.Client | None = None):
        self.base_url = base_url.rstrip("/")
        self.cred = cred or Credentials()
        if isinstance(verify, str):
            verify = ssl.create_default_context(cafile=verify)
        self._http = http or httpx.Client(base_url=self.base_url, verify=verify, timeout=timeout)
        self._headers = self.cred.headers()

    def with_credentials(self, cred: Credentials):
        clone = object.__new__(type(self))
        clone.base_url = self.base_url
        clone.cred = cred
        clone._http = self._http
        clone._headers = cred.headers()
        return clone

    def close(self) -> None:
        self._http.close()

    def _request(self, method: str, path: str, *, json: Any = None, content: bytes | None = None,
                 params: dict | None = None) -> Any:
        headers = dict(self._headers)
        if content is not None:
            headers["Content-Type"] = "application/json"
        try:
            resp = self._http.request(method, path, json=json, content=content, params=params, headers=headers)
        except httpx.TransportError as exc:
            raise ConnectivityError(f"{method} {self.base_url}{path}: {exc}") from exc
        if resp.status_code == 204:
            return None
        try:
            doc = resp.json()
        except ValueError:
            doc = None
        if resp.status_code >= 400:
            if isinstance(doc, dict) and "error" in doc:
                raise error_for(doc["error"], doc.get("detail", ""), resp.status_code)
            err = DHLinkError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            err.status = resp.status_code
            raise err
        return doc


class HttpCoreClient(_HttpBase):
    # topics
    def create_topic(self, name: str, policy: str, schema_ref, config: dict | None = None) -> dict:
        body = {"name": name, "policy": policy,
                "schema": {"name": schema_ref[0], "version": schema_ref[1]}, "config": config or {}}
        return self._request("POST", "/v1/topics", json=body)

    def delete_topic(self, name: str) -> None:
        self._request("DELETE", f"/v1/topics/{name}")

    def set_topic_status(self, name: str, status: str) -> None:
        self._request("PUT", f"/v1/topics/{name}/status", json={"status": status})

    def list_topics(self) -> list[dict]:
        return self._request("GET", "/v1/topics")["topics"]

    def describe_topic(self, name: str) -> dict:
        return self._request("GET", f"/v1/topics/{name}")

    def allocate_section(self, topic: str, receiver_id: str) -> str:
        return self._request("POST", f"/v1/topics/{topic}/sections", json={"receiverId": receiver_id})["sectionId"]

    def remove_section(self, topic: str, section: str) -> None:
        self._request("DELETE", f"/v1/topics/{topic}/sections/{section}")

    def enforce_retention(self, topic: str, now: int | None = None) -> int:
        return self._request("POST", f"/v1/topics/{topic}/retention", json={"now": now})["purged"]

    # records
    def append(self, topic: str, section: str, envelope: Envelope) -> int:
        doc = self._request("POST", f"/v1/topics/{topic}/sections/{section}/records",
                            content=encode_envelope(envelope))
        return doc["offset"]

    def fetch(self, topic: str, section: str, offset: int = 0, max_count: int = 100) -> list[RoutedRecord]:
        doc = self._request("GET", f"/v1/topics/{topic}/sections/{section}/records",
                            params={"offset": offset, "max": max_count})
        return [
            RoutedRecord(r["offset"], Envelope.from_wire(r["envelope"]), r["appendedAt"])
            for r in doc["records"]
        ]

    # discovery
    def register_schema(self, schema: DataSchema) -> None:
        self._request("POST", "/v1/discovery/schemas", json=schema.to_dict())

    def get_schema(self, name: str, version: int) -> DataSchema:
        return DataSchema.from_dict(self._request("GET", f"/v1/discovery/schemas/{name}/{version}"))

    def register_topic_info(self, info: TopicInfo) -> None:
        self._request("POST", f"/v1/discovery/topics/{info.name}", json=info.to_dict())

    def register_service_info(self, info: MicroserviceInfo) -> None:
        self._request("POST", f"/v1/discovery/services/{info.name}", json=info.to_dict())

    def set_status(self, kind: str, name: str, status: str) -> None:
        self._request("PUT", f"/v1/discovery/{kind}s/{name}", json={"status": status})

    def remove_info(self, kind: str, name: str) -> None:
        self._request("DELETE", f"/v1/discovery/{kind}s/{name}")

    def get_info(self, kind: str, name: str):
        doc = self._request("GET", f"/v1/discovery/{kind}s/{name}")
        return TopicInfo.from_dict(doc) if kind == "topic" else MicroserviceInfo.from_dict(doc)

    def query_topics(self, query: str = "") -> list[TopicInfo]:
        doc = self._request("GET", "/v1/discovery/topics", params={"query": query})
        return [TopicInfo.from_dict(t) for t in doc["topics"]]

    def query_services(self, query: str = "") -> list[MicroserviceInfo]:
        doc = self._request("GET", "/v1/discovery/services", params={"query": query})
        return [MicroserviceInfo.from_dict(s) for s in doc["services"]]


class HttpSecurityClient(_HttpBase):
    def authenticate(self) -> dict:
        return self._request("POST", "/v1/authn")

    def check(self, topic: str, operation: str, section: str | None = None) -> str:
        body = {"topic": topic, "operation": operation}
        if section is not None:
            body["section"] = section
        return self._request("POST", "/v1/authz/check", json=body)["decision"]

    def register_profile(self, service_id: str, api_key: str | None = None,
                         fingerprint_hex: str | None = None, owner_app_id: str = "") -> dict:
        body = {"serviceId": service_id, "ownerAppId": owner_app_id}
        if api_key is not None:
            body["apiKey"] = api_key
        if fingerprint_hex is not None:
            body["fingerprint"] = fingerprint_hex
        return self._request("POST", "/v1/profiles", json=body)

    def remove_profile(self, service_id: str) -> None:
        self._request("DELETE", f"/v1/profiles/{service_id}")

    def list_profiles(self) -> list[dict]:
        return self._request("GET", "/v1/profiles")["profiles"]

    def add_acl(self, entry: AccessControlEntry) -> None:
        self._request("POST", "/v1/acl", json=entry.to_dict())

    def remove_acl(self, entry: AccessControlEntry) -> None:
        self._request("DELETE", "/v1/acl", json=entry.to_dict())

    def list_acl(self, service_id: str | None = None, topic: str | None = None) -> list[AccessControlEntry]:
        params = {k: v for k, v in (("serviceId", service_id), ("topic", topic)) if v is not None}
        doc = self._request("GET", "/v1/acl", params=params)
        return [AccessControlEntry.from_dict(e) for e in doc["entries"]]

    def generate_key(self, topic: str, section: str, rotate: bool = False) -> dict:
        return self._request("POST", "/v1/keys", params={"rotate": str(rotate).lower()},
                             json={"topic": topic, "section": section})

    def list_keys(self, topic: str | None = None) -> list[dict]:
        params = {"topic": topic} if topic else None
        return self._request("GET", "/v1/keys", params=params)["keys"]

    def revoke_key(self, key_id: str) -> dict:
        return self._request("POST", f"/v1/keys/{key_id}/revoke")

    def delete_key(self, key_id: str) -> None:
        self._request("DELETE", f"/v1/keys/{key_id}")

    def get_public_key(self, topic: str, section: str) -> tuple[str, bytes]:
        doc = self._request("GET", "/v1/keys/public", params={"topic": topic, "section": section})
        return doc["keyId"], base64.b64decode(doc["publicKey"])

    def get_private_key(self, topic: str, section: str) -> tuple[str, bytes]:
        doc = self._request("GET", "/v1/keys/private", params={"topic": topic, "section": section})
        return doc["keyId"], base64.b64decode(doc["privateKey"])

    def stats(self) -> dict:
        return self._request("GET", "/v1/stats")


class LocalCoreClient:
    """Binds credentials to an in-process ``CoreService``."""

    def __init__(self, service, cred: Credentials | None = None):
        self.service = service
        self.cred = cred or Credentials()

    def with_credentials(self, cred: Credentials) -> "LocalCoreClient":
        return LocalCoreClient(self.service, cred)

    def close(self) -> None:
        pass

    def __getattr__(self, name: str):
        method = getattr(self.service, name)
        if not callable(method) or name.startswith("_"):
            raise AttributeError(name)

        def bound(*args, **kwargs):
            return method(self.cred, *args, **kwargs)
        return bound


class LocalSecurityClient:
    """Binds credentials to an in-process ``SecurityService``."""

    def __init__(self, service, cred: Credentials | None = None):
        self.service = service
        self.cred = cred or Credentials()

    def with_credentials(self, cred: Credentials) -> "LocalSecurityClient":
        return LocalSecurityClient(self.service, cred)

    def close(self) -> None:
        pass

    def authenticate(self) -> dict:
        p = self.service.authenticate(self.cred)
        return {"serviceId": p.service_id, "ownerAppId": p.owner_app_id}

    def check(self, topic, operation, section=None) -> str:
        return self.service.check(self.cred, topic, operation, section)

    def register_profile(self, service_id, api_key=None, fingerprint_hex=None, owner_app_id="") -> dict:
        return self.service.register_profile(self.cred, service_id, api_key=api_key,
                                             fingerprint_hex=fingerprint_hex, owner_app_id=owner_app_id).to_dict()

    def remove_profile(self, service_id) -> None:
        self.service.remove_profile(self.cred, service_id)

    def list_profiles(self) -> list[dict]:
        return [p.to_dict() for p in self.service.list_profiles(self.cred)]

    def add_acl(self, entry) -> None:
        self.service.add_acl(self.cred, entry)

    def remove_acl(self, entry) -> None:
        self.service.remove_acl(self.cred, entry)

    def list_acl(self, service_id=None, topic=None):
        return self.service.list_acl(self.cred, service_id, topic)

    def generate_key(self, topic, section, rotate=False) -> dict:
        return self.service.generate_key(self.cred, topic, section, rotate)

    def list_keys(self, topic=None) -> list[dict]:
        return self.service.list_keys(self.cred, topic)

    def revoke_key(self, key_id) -> dict:
        return self.service.revoke_key(self.cred, key_id)

    def delete_key(self, key_id) -> None:
        self.service.delete_key(self.cred, key_id)

    def get_public_key(self, topic, section):
        return self.service.get_public_key(self.cred, topic, section)

    def get_private_key(self, topic, section):
        return self.service.get_private_key(self.cred, topic, section)

    def stats(self) -> dict:
        require_admin(self.cred, self.service.admin_token)
        return self.service.stats()

"""Request-level enforcement for the broker and discovery components.

``CoreService`` is what the HTTP layer and the in-process client call. It
authenticates every caller against the security service, enforces admin
tokens and ACL decisions, and then hands the vetted request to the broker or
the discovery registry.
"""

from __future__ import annotations

from pathlib import Path

from dhlink.auth import Credentials, is_admin, require_admin
from dhlink.broker import Broker, RoutedRecord
from dhlink.discovery import READY, RETIRED, SERVICE, TOPIC, Discovery, MicroserviceInfo, TopicInfo
from dhlink.envelope import Envelope
from dhlink.errors import AuthenticationFailed, EnvelopeMismatch, UnknownName, Unauthorized, ValidationError
from dhlink.schema import DataSchema
from dhlink.security.acl import ALLOW, RECEIVE, SEND
from dhlink.security.keys import now_ms


class LocalAccess:
    """Access decisions from a SecurityService in the same process."""

    def __init__(self, security):
        self.security = security

    def authenticate(self, cred: Credentials) -> str:
        return self.security.authenticate(cred).service_id

    def check(self, cred: Credentials, topic: str, operation: str, section: str | None = None) -> str:
        return self.security.check(cred, topic, operation, section)

    def may_send(self, cred: Credentials, topic: str) -> bool:
        return self.security.authorizer.is_allowed(cred.service_id, topic, SEND)


class RemoteAccess:
    """Access decisions from a remote security service; caller credentials are forwarded."""

    def __init__(self, security_client_factory):
        # factory(cred) -> HttpSecurityClient bound to those credentials
        self.factory = security_client_factory

    def authenticate(self, cred: Credentials) -> str:
        return self.factory(cred).authenticate()["serviceId"]

    def check(self, cred: Credentials, topic: str, operation: str, section: str | None = None) -> str:
        return self.factory(cred).check(topic, operation, section)

    def may_send(self, cred: Credentials, topic: str) -> bool:
        return self.check(cred, topic, SEND) == ALLOW


class CoreService:
    def __init__(self, data_dir=None, admin_token: str | None = None, access=None,
                 clock=now_ms, fsync: bool = False):
        self.data_dir = Path(data_dir) if data_dir else None
        self.admin_token = admin_token
        self.access = access
        self.discovery = Discovery(self.data_dir / "discovery.json" if self.data_dir else None)
        self.broker = Broker(
            self.data_dir / "topics" if self.data_dir else None,
            clock=clock,
            schema_exists=self.discovery.has_schema,
            fsync=fsync,
        )

    def close(self) -> None:
        self.broker.close()

    def _identify(self, cred: Credentials) -> str:
        if self.access is None:
            raise AuthenticationFailed("no security service configured")
        return self.access.authenticate(cred)

    def _check(self, cred: Credentials, topic: str, operation: str, section: str | None = None) -> str:
        if self.access is None:
            raise AuthenticationFailed("no security service configured")
        if not cred.service_id:
            raise AuthenticationFailed("missing service identity")
        return self.access.check(cred, topic, operation, section)

    def _authenticated(self, cred: Credentials) -> bool:
        """True for admins; authenticates services; raises for anyone else."""
        if is_admin(cred, self.admin_token):
            return True
        self._identify(cred)
        return False

    # -- topics ---------------------------------------------------------------

    def create_topic(self, cred: Credentials, name: str, policy: str, schema_ref, config=None) -> dict:
        require_admin(cred, self.admin_token)
        return self.broker.create_topic(name, policy, tuple(schema_ref), config).describe()

    def delete_topic(self, cred: Credentials, name: str) -> None:
        require_admin(cred, self.admin_token)
        self.broker.delete_topic(name)

    def set_topic_status(self, cred: Credentials, name: str, status: str) -> None:
        require_admin(cred, self.admin_token)
        self.broker.set_topic_status(name, status)

    def list_topics(self, cred: Credentials) -> list[dict]:
        require_admin(cred, self.admin_token)
        return [t.describe() for t in self.broker.topics()]

    def describe_topic(self, cred: Credentials, name: str) -> dict:
        admin = self._authenticated(cred)
        return self.broker.get_topic(name).describe(with_receivers=admin)

    def allocate_section(self, cred: Credentials, topic: str, receiver_id: str) -> str:
        require_admin(cred, self.admin_token)
        return self.broker.allocate_section(topic, receiver_id)

    def remove_section(self, cred: Credentials, topic: str, section: str) -> None:
        require_admin(cred, self.admin_token)
        self.broker.remove_section(topic, section)

    def enforce_retention(self, cred: Credentials, topic: str, now: int | None = None) -> int:
        require_admin(cred, self.admin_token)
        return self.broker.enforce_retention(topic, now)

    # -- records ------------------------------------------------------------------

    def append(self, cred: Credentials, topic: str, section: str, envelope: Envelope) -> int:
        # check authenticates the caller too, so one round trip covers both
        service_id = cred.service_id
        if self._check(cred, topic, SEND) != ALLOW:
            raise Unauthorized(f"{service_id} may not send on {topic}")
        if envelope.sender != service_id:
            raise EnvelopeMismatch(f"envelope sender {envelope.sender} is not the caller {service_id}")
        return self.broker.append(topic, section, envelope)

    def fetch(self, cred: Credentials, topic: str, section: str, offset: int = 0, max_count: int = 100) -> list[RoutedRecord]:
        service_id = cred.service_id
        if self._check(cred, topic, RECEIVE, section) != ALLOW:
            raise Unauthorized(f"{service_id} may not receive from {topic}/{section}")
        return self.broker.fetch(topic, section, offset, max_count, receiver_id=service_id)

    # -- discovery ----------------------------------------------------------------

    def register_schema(self, cred: Credentials, schema: DataSchema) -> None:
        require_admin(cred, self.admin_token)
        self.discovery.register_schema(schema)

    def get_schema(self, cred: Credentials, name: str, version: int) -> DataSchema:
        self._authenticated(cred)
        return self.discovery.get_schema(name, int(version))

    def register_topic_info(self, cred: Credentials, info: TopicInfo) -> None:
        require_admin(cred, self.admin_token)
        self._check_ready_topic(info.name, info.status)
        self.discovery.register_topic_info(info)

    def register_service_info(self, cred: Credentials, info: MicroserviceInfo) -> None:
        require_admin(cred, self.admin_token)
        self.discovery.register_service_info(info)

    def set_status(self, cred: Credentials, kind: str, name: str, status: str) -> None:
        require_admin(cred, self.admin_token)
        if kind == TOPIC:
            self._check_ready_topic(name, status)
        self.discovery.set_status(kind, name, status)

    def _check_ready_topic(self, name: str, status: str) -> None:
        if status in (READY, RETIRED):
            # raises unknown-topic when no broker topic backs the entry
            self.broker.get_topic(name)

    def remove_info(self, cred: Credentials, kind: str, name: str) -> None:
        require_admin(cred, self.admin_token)
        self.discovery.remove(kind, name)

    def get_info(self, cred: Credentials, kind: str, name: str):
        if kind == TOPIC:
            self._authenticated(cred)
            return self.discovery.get(TOPIC, name)
        if kind != SERVICE:
            raise ValidationError(f"unknown kind {kind!r}")
        matches = [s for s in self.query_services(cred, "") if s.name == name]
        if not matches:
            raise UnknownName(f"unknown service {name!r}")
        return matches[0]

    def query_topics(self, cred: Credentials, query: str = "") -> list[TopicInfo]:
        self._authenticated(cred)
        return self.discovery.query_topics(query)

    def query_services(self, cred: Credentials, query: str = "") -> list[MicroserviceInfo]:
        if self._authenticated(cred):
            return self.discovery.query_services(query)
        return self.discovery.query_services(query, visible=self.visible_receivers(cred))

    def visible_receivers(self, cred: Credentials) -> set[str]:
        """Receivers holding sections on topics the caller may send to."""
        visible: set[str] = set()
        for topic in self.broker.topics():
            if not topic.sections:
                continue
            if self.access.may_send(cred, topic.name):
                visible.update(receiver for _, receiver in self.broker.sections(topic.name))
        return visible

from __future__ import annotations

import secrets
from dataclasses import dataclass, field

import pytest

from dhlink.auth import Credentials
from dhlink.connector import KeyCache, SinkConnector, SourceConnector
from dhlink.envelope import Envelope
from dhlink.errors import NotFound
from dhlink.platform import DeskPlatform
from dhlink.schema import DataSchema
from dhlink.security.acl import RECEIVE, SEND, AccessControlEntry

SCORE = DataSchema.from_dict({
    "name": "Score", "version": 1,
    "fields": [
        {"name": "userToken", "kind": "string", "required": True},
        {"name": "score", "kind": "integer", "required": True},
    ],
})


@pytest.fixture
def platform(tmp_path):
    with DeskPlatform(tmp_path / "platform") as p:
        yield p


@pytest.fixture(scope="module")
def http_platform(tmp_path_factory):
    with DeskPlatform(tmp_path_factory.mktemp("http-platform"), transport="http") as p:
        yield p


@dataclass
class Wired:
    """One topic provisioned directly through the admin clients."""

    platform: object
    topic: str
    schema: DataSchema
    api_keys: dict = field(default_factory=dict)
    sections: dict = field(default_factory=dict)

    def cred(self, service: str) -> Credentials:
        return Credentials(service, self.api_keys[service])

    def clients(self, service: str):
        return self.platform.service_clients(service, self.api_keys[service])

    def source(self, service: str, **kw) -> SourceConnector:
        core, sec = self.clients(service)
        return SourceConnector(core, sec, self.topic, self.schema, **kw)

    def sink(self, receiver: str, **kw) -> SinkConnector:
        core, sec = self.clients(receiver)
        return SinkConnector(core, sec, self.topic, self.sections[receiver], self.schema, **kw)


def wire_topic(platform, topic: str = "scores", senders=("src",), receivers=("r1", "r2"),
               policy: str = "retained", config: dict | None = None, keys: bool = True,
               schema: DataSchema = SCORE, api_keys: dict | None = None) -> Wired:
    core = platform.admin_core()
    sec = platform.admin_security()
    try:
        core.get_schema(schema.name, schema.version)
    except NotFound:
        core.register_schema(schema)
    w = Wired(platform, topic, schema)
    known = {p["serviceId"] for p in sec.list_profiles()}
    for name in dict.fromkeys(tuple(senders) + tuple(receivers)):
        key = (api_keys or {}).get(name) or secrets.token_urlsafe(16)
        if name not in known:
            sec.register_profile(name, api_key=key)
        w.api_keys[name] = key
    core.create_topic(topic, policy, schema.ref, config)
    for r in receivers:
        w.sections[r] = core.allocate_section(topic, r)
    for s in senders:
        sec.add_acl(AccessControlEntry(s, topic, SEND))
    for r in receivers:
        sec.add_acl(AccessControlEntry(r, topic, RECEIVE, w.sections[r]))
        if keys:
            sec.generate_key(topic, w.sections[r])
    core.set_topic_status(topic, "ready")
    return w


def make_envelope(topic: str, section: str, n: int, sender: str = "src", payload: bytes | None = None,
                  schema: DataSchema = SCORE) -> Envelope:
    return Envelope(topic=topic, section=section, schema=schema.name, schema_version=schema.version,
                    sender=sender, message_id=f"{sender}-{n}", sent_at=1_000 + n, encrypted=False,
                    payload=payload or f'{{"n":{n}}}'.encode())


class FakeClock:
    """Seconds for key caches, settable by hand."""

    def __init__(self, t: float = 0.0):
        self.t = t

    def __call__(self) -> float:
        return self.t


@pytest.fixture
def key_clock():
    return FakeClock(1000.0)


def cache_with(clock, ttl: float = 60.0) -> KeyCache:
    return KeyCache(ttl_seconds=ttl, clock=clock)

"""Platform wiring and app provisioning shared by the scenarios."""

from __future__ import annotations

import json
import secrets
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from dhlink.admin.lifecycle import WORKING, Administrator
from dhlink.auth import Credentials
from dhlink.clients import HttpCoreClient, HttpSecurityClient
from dhlink.connector import SinkConnector, SourceConnector
from dhlink.envelope import MessageIdGenerator
from dhlink.errors import ConnectivityError, PartialFailure, SetupIncomplete
from dhlink.platform import DeskPlatform
from dhlink.schema import DataSchema
from dhlink.scenarios.config import ScenarioConfig
from dhlink.security.acl import fingerprint


def data_file(*parts: str) -> Path:
    return Path(str(resources.files("dhlink").joinpath("data", *parts)))


def load_schema(filename: str) -> DataSchema:
    return DataSchema.load(data_file("schemas", filename))


def questionnaire_dir() -> Path:
    return data_file("questionnaires")


class SimClock:
    """Simulated time in ms; connectors stamp envelopes with it."""

    def __init__(self, start_ms: int):
        self.now = start_ms

    def __call__(self) -> int:
        return self.now


class RemotePlatform:
    """Client side of already-running core and security services."""

    def __init__(self, cfg: ScenarioConfig, data_dir: Path):
        verify = cfg.ca_file or True
        self.data_dir = data_dir
        self._core = HttpCoreClient(cfg.core_url, verify=verify)
        self._sec = HttpSecurityClient(cfg.security_url or cfg.core_url, verify=verify)
        self.admin_token = cfg.admin_token
        self.security_admin_token = cfg.security_admin_token

    def core_client(self, cred: Credentials):
        return self._core.with_credentials(cred)

    def security_client(self, cred: Credentials):
        return self._sec.with_credentials(cred)

    def service_clients(self, service_id: str, api_key: str):
        cred = Credentials(service_id, api_key)
        return self.core_client(cred), self.security_client(cred)

    def admin_core(self):
        return self.core_client(Credentials(admin_token=self.admin_token))

    def admin_security(self):
        return self.security_client(Credentials(admin_token=self.security_admin_token))

    def administrator(self, path=None) -> Administrator:
        path = path if path is not None else self.data_dir / "admin" / "applications.json"
        return Administrator(self.admin_core(), self.admin_security(), path,
                             security_factory=self.security_client)

    def close(self) -> None:
        self._core.close()
        self._sec.close()


class PlatformHandle:
    """The platform a scenario runs on, owned (and torn down) by the scenario or lent by the caller."""

    def __init__(self, cfg: ScenarioConfig, platform=None):
        self._tmp = None
        self.owned = platform is None
        if platform is not None:
            self.platform = platform
            return
        if cfg.data_dir:
            data_dir = Path(cfg.data_dir)
        else:
            self._tmp = tempfile.mkdtemp(prefix="dhlink-scenario-")
            data_dir = Path(self._tmp)
        if cfg.core_url:
            self.platform = RemotePlatform(cfg, data_dir)
        else:
            self.platform = DeskPlatform(data_dir, transport=cfg.transport, admin_token=cfg.admin_token,
                                         security_admin_token=cfg.security_admin_token)

    def close(self) -> None:
        if self.owned:
            self.platform.close()
        if self._tmp:
            shutil.rmtree(self._tmp, ignore_errors=True)


@dataclass
class AppHandle:
    app_id: str
    api_keys: dict
    sections: dict
    schemas: dict
    message_ids: dict = field(default_factory=dict)

    def source(self, platform, service: str, topic: str, clock, **kw) -> SourceConnector:
        core, sec = platform.service_clients(service, self.api_keys[service])
        # one id sequence per service and run keeps transcripts reproducible
        ids = self.message_ids.setdefault(service, MessageIdGenerator(service, int(clock()) * 1000))
        return SourceConnector(core, sec, topic, self.schemas[topic], clock=clock, message_ids=ids, **kw)

    def sink(self, platform, service: str, topic: str) -> SinkConnector:
        core, sec = platform.service_clients(service, self.api_keys[service])
        return SinkConnector(core, sec, topic, self.sections[(topic, service)], self.schemas[topic])


def provision_app(platform, app_id: str, services: dict[str, str], topics: list[dict],
                  schema_files: list[str], admin_id: str = "scenario-admin") -> AppHandle:
    """Walk the app through proposal, initialisation and the working transition."""
    api_keys = {name: secrets.token_urlsafe(24) for name in services}
    schemas = [load_schema(f) for f in schema_files]
    by_ref = {s.ref: s for s in schemas}
    proposal = {
        "description": app_id,
        "microservices": [{"name": n, "description": d, "url": f"scenario://{app_id}/{n}",
                           "apiKeyFingerprint": fingerprint(api_keys[n])} for n, d in services.items()],
        "schemas": [s.to_dict() for s in schemas],
        "topics": topics,
    }
    admin = platform.administrator()
    try:
        admin.propose(app_id, json.loads(json.dumps(proposal)))
        admin.approve_and_initialise(app_id, admin_id)
        admin.mark_ready(app_id, api_keys, admin_id)
    except PartialFailure as exc:
        if isinstance(exc.__cause__, ConnectivityError):
            raise exc.__cause__ from None  # an unreachable platform is not a setup fault
        raise SetupIncomplete(f"{app_id}: initialisation stopped: {exc.detail}") from exc
    if admin.get(app_id).state != WORKING:
        raise SetupIncomplete(f"{app_id} is not in the working phase")
    core = platform.admin_core()
    sections = {}
    topic_schemas = {}
    for t in topics:
        for s in core.describe_topic(t["name"])["sections"]:
            sections[(t["name"], s["receiverId"])] = s["sectionId"]
        topic_schemas[t["name"]] = by_ref[(t["schema"]["name"], t["schema"]["version"])]
    return AppHandle(app_id, api_keys, sections, topic_schemas)


def drain(sink: SinkConnector, batch: int = 500) -> list:
    """Everything currently readable from one section."""
    out = []
    while True:
        before = sink.cursor
        out.extend(sink.poll(batch))
        if sink.cursor == before:
            return out


class WallTimer:
    def __init__(self):
        self.t0 = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self.t0


def send_logged(transcript, source: SourceConnector, actor: str, now: int, value) -> str:
    """Send ``value`` and record the hop; returns the message id."""
    outcomes = source.send(value)
    message_id = source.last_message_id
    transcript.mark_sent(message_id, time.perf_counter())
    transcript.record(now, actor, "send", value, topic=source.topic, messageId=message_id,
                      sections=sum(1 for o in outcomes if o.offset is not None))
    transcript.bump("messagesSent")
    return message_id


def receive_logged(transcript, sink: SinkConnector, actor: str, now: int) -> list:
    """Drain the sink and record each delivery."""
    got = drain(sink)
    wall = time.perf_counter()
    for d in got:
        transcript.mark_received(d.message_id, wall)
        transcript.record(now, actor, "receive", d.value, topic=sink.topic, messageId=d.message_id,
                          encrypted=d.encrypted)
    transcript.bump("messagesReceived", len(got))
    return got

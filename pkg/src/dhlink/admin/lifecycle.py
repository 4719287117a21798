"""Application lifecycle: proposal, initialisation, working, decommission.

``Administrator`` drives broker, discovery and security through admin-bound
clients. Every step of initialisation checks current state before acting, so
a failed run can simply be repeated.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

from dhlink._io import atomic_write_json, read_json
from dhlink.auth import Credentials
from dhlink.broker import POLICIES
from dhlink.broker import READY as TOPIC_READY
from dhlink.discovery import INITIALISING, READY, SERVICE, TOPIC, MicroserviceInfo, TopicInfo
from dhlink.errors import (
    ConnectivityCheckFailed,
    DHLinkError,
    DuplicateApp,
    DuplicateName,
    MalformedProposal,
    NotConfirmed,
    NotFound,
    PartialFailure,
    UnknownName,
    WrongState,
)
from dhlink.schema import DataSchema
from dhlink.security.acl import ALLOW, RECEIVE, SEND, AccessControlEntry
from dhlink.security.keys import ACTIVE, now_ms

PROPOSED = "proposed"
INITIALISING_APP = "initialising"
WORKING = "working"
DECOMMISSIONED = "decommissioned"
APP_STATES = (PROPOSED, INITIALISING_APP, WORKING, DECOMMISSIONED)

_HEX64 = re.compile(r"^[0-9a-f]{64}$")


@dataclass(frozen=True)
class ServiceDecl:
    name: str
    description: str
    url: str
    fingerprint: str


@dataclass(frozen=True)
class TopicDecl:
    name: str
    description: str
    policy: str
    config: dict
    schema_ref: tuple[str, int]
    senders: tuple[str, ...]
    receivers: tuple[str, ...]


@dataclass(frozen=True)
class Proposal:
    services: tuple[ServiceDecl, ...]
    topics: tuple[TopicDecl, ...]
    schemas: tuple[DataSchema, ...]
    description: str = ""


def parse_proposal(doc) -> Proposal:
    """Check proposal structure; every problem is reported at once."""
    if not isinstance(doc, dict):
        raise MalformedProposal("proposal must be a JSON object")
    problems: list[str] = []
    services: list[ServiceDecl] = []
    for i, s in enumerate(doc.get("microservices") or []):
        if not isinstance(s, dict) or not isinstance(s.get("name"), str) or not s.get("name"):
            problems.append(f"microservices[{i}]: name required")
            continue
        fp = s.get("apiKeyFingerprint", "")
        if not isinstance(fp, str) or not _HEX64.match(fp):
            problems.append(f"microservices[{i}]: apiKeyFingerprint must be 64 lowercase hex")
        if not isinstance(s.get("url"), str) or not s["url"]:
            problems.append(f"microservices[{i}]: url required")
        services.append(ServiceDecl(s["name"], s.get("description", ""), s.get("url") or "", fp))
    if not services:
        problems.append("at least one microservice required")
    names = [s.name for s in services]
    if len(set(names)) != len(names):
        problems.append("microservice names must be unique")

    schemas: list[DataSchema] = []
    for i, sdoc in enumerate(doc.get("schemas") or []):
        try:
            schemas.append(DataSchema.from_dict(sdoc))
        except (DHLinkError, KeyError, TypeError, AttributeError) as exc:
            problems.append(f"schemas[{i}]: {exc}")

    topics: list[TopicDecl] = []
    for i, t in enumerate(doc.get("topics") or []):
        if not isinstance(t, dict) or not isinstance(t.get("name"), str):
            problems.append(f"topics[{i}]: name required")
            continue
        ref = t.get("schema")
        if not isinstance(ref, dict) or not isinstance(ref.get("name"), str) \
                or not isinstance(ref.get("version"), int):
            problems.append(f"topics[{i}]: schema reference {{name, version}} required")
            continue
        policy = t.get("policy", "retained")
        if policy not in POLICIES:
            problems.append(f"topics[{i}]: unknown policy {policy!r}")
        senders = tuple(t.get("senders") or ())
        receivers = tuple(t.get("receivers") or ())
        for who in senders + receivers:
            if who not in names:
                problems.append(f"topics[{i}]: {who!r} is not a declared microservice")
        if not senders and not receivers:
            problems.append(f"topics[{i}]: needs at least one sender or receiver")
        topics.append(TopicDecl(t["name"], t.get("description", ""), policy, dict(t.get("config") or {}),
                                (ref["name"], ref["version"]), senders, receivers))
    if not topics:
        problems.append("at least one topic required")
    if problems:
        raise MalformedProposal("; ".join(problems))
    return Proposal(tuple(services), tuple(topics), tuple(schemas), doc.get("description", ""))


@dataclass(frozen=True)
class ApplicationRecord:
    app_id: str
    state: str
    proposal_doc: dict
    microservice_ids: tuple[str, ...]
    topic_names: tuple[str, ...]
    history: tuple[tuple[int, str, str], ...] = ()
    created_topics: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "appId": self.app_id,
            "state": self.state,
            "proposal": self.proposal_doc,
            "microserviceIds": list(self.microservice_ids),
            "topicNames": list(self.topic_names),
            "createdTopics": list(self.created_topics),
            "history": [{"ts": ts, "transition": tr, "adminId": who} for ts, tr, who in self.history],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ApplicationRecord":
        return cls(
            doc["appId"], doc["state"], doc["proposal"], tuple(doc["microserviceIds"]),
            tuple(doc["topicNames"]),
            tuple((h["ts"], h["transition"], h["adminId"]) for h in doc.get("history", [])),
            tuple(doc.get("createdTopics", [])),
        )


@dataclass
class Report:
    app_id: str
    created: dict[str, list] = field(default_factory=dict)
    removed: dict[str, list] = field(default_factory=dict)
    retained: list[str] = field(default_factory=list)

    def add(self, kind: str, item) -> None:
        self.created.setdefault(kind, []).append(item)

    def drop(self, kind: str, item) -> None:
        self.removed.setdefault(kind, []).append(item)

    def count(self, kind: str) -> int:
        return len(self.created.get(kind, []))

    def total_created(self) -> int:
        return sum(len(v) for v in self.created.values())

    def to_dict(self) -> dict:
        return {"appId": self.app_id, "created": self.created, "removed": self.removed,
                "retained": self.retained}


class Administrator:
    """Lifecycle commands. ``core`` and ``security`` must carry admin tokens."""

    def __init__(self, core, security, path=None, clock=now_ms, security_factory=None):
        self.core = core
        self.security = security
        self.path = Path(path) if path else None
        self.clock = clock
        # builds a security client for a service's own credentials (self-test)
        self.security_factory = security_factory or security.with_credentials
        self._lock = threading.Lock()
        self._apps: dict[str, ApplicationRecord] = {}
        if self.path is not None:
            for doc in read_json(self.path, {"applications": []})["applications"]:
                rec = ApplicationRecord.from_dict(doc)
                self._apps[rec.app_id] = rec

    # -- persistence ------------------------------------------------------

    def _save(self, rec: ApplicationRecord) -> ApplicationRecord:
        apps = dict(self._apps)
        apps[rec.app_id] = rec
        if self.path is not None:
            atomic_write_json(self.path, {"applications": [apps[k].to_dict() for k in sorted(apps)]})
        self._apps = apps
        return rec

    def get(self, app_id: str) -> ApplicationRecord:
        try:
            return self._apps[app_id]
        except KeyError:
            raise UnknownName(f"unknown application {app_id!r}") from None

    def applications(self) -> list[ApplicationRecord]:
        return [self._apps[k] for k in sorted(self._apps)]

    def _transition(self, rec: ApplicationRecord, state: str, admin_id: str, **changes) -> ApplicationRecord:
        entry = (self.clock(), f"{rec.state}->{state}", admin_id)
        return self._save(replace(rec, state=state, history=rec.history + (entry,), **changes))

    @staticmethod
    def _require(rec: ApplicationRecord, *states: str) -> None:
        if rec.state not in states:
            raise WrongState(f"application {rec.app_id} is {rec.state}, expected {' or '.join(states)}")

    # -- pre-lifecycle ----------------------------------------------------

    def propose(self, app_id: str, proposal_doc: dict, admin_id: str = "developer") -> ApplicationRecord:
        with self._lock:
            if app_id in self._apps:
                raise DuplicateApp(f"application {app_id} exists")
            prop = parse_proposal(proposal_doc)
            rec = ApplicationRecord(
                app_id, PROPOSED, proposal_doc,
                tuple(s.name for s in prop.services), tuple(t.name for t in prop.topics),
                ((self.clock(), f"->{PROPOSED}", admin_id),),
            )
            return self._save(rec)

    # -- initialisation ---------------------------------------------------

    def approve_and_initialise(self, app_id: str, admin_id: str) -> Report:
        with self._lock:
            rec = self.get(app_id)
            self._require(rec, PROPOSED, INITIALISING_APP)
            prop = parse_proposal(rec.proposal_doc)
            report = Report(app_id)
            created_topics = list(rec.created_topics)
            steps = [
                ("schemas", lambda: self._init_schemas(prop, report)),
                ("profiles", lambda: self._init_profiles(app_id, prop, report)),
                ("topics", lambda: self._init_topics(prop, report, created_topics)),
                ("sections", lambda: self._init_sections(prop, report)),
                ("acl", lambda: self._init_acl(prop, report)),
                ("keys", lambda: self._init_keys(prop, report)),
                ("discovery", lambda: self._init_discovery(app_id, prop, report)),
            ]
            for name, step in steps:
                try:
                    step()
                except DHLinkError as exc:
                    if created_topics != list(rec.created_topics):
                        rec = self._save(replace(rec, created_topics=tuple(created_topics)))
                    detail = f"initialisation of {app_id} failed at step {name}: {exc}"
                    raise PartialFailure(detail, {"failedStep": name, "error": exc.to_dict(),
                                                  **report.to_dict()}) from exc
            if rec.state == PROPOSED:
                self._transition(rec, INITIALISING_APP, admin_id, created_topics=tuple(created_topics))
            elif tuple(created_topics) != rec.created_topics:
                self._save(replace(rec, created_topics=tuple(created_topics)))
            return report

    def _init_schemas(self, prop: Proposal, report: Report) -> None:
        for schema in prop.schemas:
            try:
                existing = self.core.get_schema(schema.name, schema.version)
            except NotFound:
                self.core.register_schema(schema)
                report.add("schemas", f"{schema.name}/v{schema.version}")
                continue
            if existing != schema:
                raise MalformedProposal(f"schema {schema.name} v{schema.version} differs from the registered one")

    def _init_profiles(self, app_id: str, prop: Proposal, report: Report) -> None:
        existing = {p["serviceId"]: p for p in self.security.list_profiles()}
        for s in prop.services:
            if s.name in existing:
                if existing[s.name]["ownerAppId"] != app_id:
                    raise DuplicateName(f"service {s.name} belongs to {existing[s.name]['ownerAppId']}")
                continue
            self.security.register_profile(s.name, fingerprint_hex=s.fingerprint, owner_app_id=app_id)
            report.add("profiles", s.name)

    def _init_topics(self, prop: Proposal, report: Report, created_topics: list) -> None:
        for t in prop.topics:
            try:
                self.core.describe_topic(t.name)
            except NotFound:
                self.core.create_topic(t.name, t.policy, t.schema_ref, t.config)
                report.add("topics", t.name)
                if t.name not in created_topics:
                    created_topics.append(t.name)

    def _init_sections(self, prop: Proposal, report: Report) -> None:
        for t in prop.topics:
            have = {s["receiverId"] for s in self.core.describe_topic(t.name)["sections"]}
            for r in t.receivers:
                sid = self.core.allocate_section(t.name, r)
                if r not in have:
                    report.add("sections", f"{t.name}/{sid}")

    def _sections_of(self, topic: str) -> dict[str, str]:
        return {s["receiverId"]: s["sectionId"] for s in self.core.describe_topic(topic)["sections"]}

    def _init_acl(self, prop: Proposal, report: Report) -> None:
        for t in prop.topics:
            have = set(self.security.list_acl(topic=t.name))
            sections = self._sections_of(t.name)
            wanted = [AccessControlEntry(s, t.name, SEND) for s in t.senders]
            wanted += [AccessControlEntry(r, t.name, RECEIVE, sections[r]) for r in t.receivers]
            for entry in wanted:
                if entry not in have:
                    self.security.add_acl(entry)
                    report.add("acl", entry.to_dict())

    def _init_keys(self, prop: Proposal, report: Report) -> None:
        for t in prop.topics:
            active = {k["section"] for k in self.security.list_keys(t.name) if k["status"] == ACTIVE}
            sections = self._sections_of(t.name)
            for r in t.receivers:
                sid = sections[r]
                if sid not in active:
                    info = self.security.generate_key(t.name, sid)
                    report.add("keys", {"topic": t.name, "section": sid, "keyId": info["keyId"]})

    def _init_discovery(self, app_id: str, prop: Proposal, report: Report) -> None:
        for t in prop.topics:
            try:
                self.core.get_info(TOPIC, t.name)
            except NotFound:
                schema = self.core.get_schema(*t.schema_ref)
                self.core.register_topic_info(TopicInfo(t.name, t.description, INITIALISING, schema))
                report.add("discovery", f"topic:{t.name}")
        for s in prop.services:
            try:
                self.core.get_info(SERVICE, s.name)
            except NotFound:
                self.core.register_service_info(MicroserviceInfo(s.name, s.description, s.url, INITIALISING, app_id))
                report.add("discovery", f"service:{s.name}")

    # -- working ------------------------------------------------------------

    def _self_test(self, prop: Proposal, service: str, api_key: str | None) -> None:
        if api_key is None:
            raise ConnectivityCheckFailed(f"{service}: no credentials supplied for the self-test")
        client = self.security_factory(Credentials(service, api_key))
        probes = [(t.name, SEND, None) for t in prop.topics if service in t.senders]
        probes += [(t.name, RECEIVE, self._sections_of(t.name)[service])
                   for t in prop.topics if service in t.receivers]
        try:
            client.authenticate()
            if probes and client.check(*probes[0]) != ALLOW:
                raise ConnectivityCheckFailed(f"{service}: authorization self-test denied")
        except ConnectivityCheckFailed:
            raise
        except DHLinkError as exc:
            raise ConnectivityCheckFailed(f"{service}: {exc}") from exc

    def mark_ready(self, app_id: str, credentials: dict[str, str], admin_id: str = "admin") -> ApplicationRecord:
        """``credentials`` maps each declared service id to its api key for the self-test."""
        with self._lock:
            rec = self.get(app_id)
            self._require(rec, INITIALISING_APP)
            prop = parse_proposal(rec.proposal_doc)
            for s in prop.services:
                self._self_test(prop, s.name, credentials.get(s.name))
            for t in prop.topics:
                if self.core.describe_topic(t.name)["status"] != TOPIC_READY:
                    self.core.set_topic_status(t.name, TOPIC_READY)
                if self.core.get_info(TOPIC, t.name).status == INITIALISING:
                    self.core.set_status(TOPIC, t.name, READY)
            for s in prop.services:
                if self.core.get_info(SERVICE, s.name).status == INITIALISING:
                    self.core.set_status(SERVICE, s.name, READY)
            return self._transition(rec, WORKING, admin_id)

    # -- end of lifecycle ---------------------------------------------------

    def decommission(self, app_id: str, admin_id: str, confirm: bool = False) -> Report:
        with self._lock:
            rec = self.get(app_id)
            self._require(rec, WORKING)
            if not confirm:
                raise NotConfirmed("decommission needs explicit confirmation from developer and administrator")
            services = set(rec.microservice_ids)
            report = Report(app_id)
            for topic in rec.topic_names:
                self._decommission_topic(topic, services, report)
            for name in sorted(services):
                try:
                    self.core.remove_info(SERVICE, name)
                    report.drop("discovery", f"service:{name}")
                except NotFound:
                    pass
            self._transition(rec, DECOMMISSIONED, admin_id)
            return report

    def _decommission_topic(self, topic: str, services: set[str], report: Report) -> None:
        try:
            sections = self._sections_of(topic)
        except NotFound:
            return
        for entry in self.security.list_acl(topic=topic):
            if entry.service_id in services:
                self.security.remove_acl(entry)
                report.drop("acl", entry.to_dict())
        ours = {sid for receiver, sid in sections.items() if receiver in services}
        for key in self.security.list_keys(topic):
            if key["section"] not in ours:
                continue
            if key["status"] == ACTIVE:
                self.security.revoke_key(key["keyId"])
            self.security.delete_key(key["keyId"])
            report.drop("keys", key["keyId"])
        if self.security.list_acl(topic=topic):
            for sid in sorted(ours):
                self.core.remove_section(topic, sid)
                report.drop("sections", f"{topic}/{sid}")
            report.retained.append(topic)
            return
        self.core.delete_topic(topic)
        report.drop("topics", topic)
        try:
            self.core.remove_info(TOPIC, topic)
            report.drop("discovery", f"topic:{topic}")
        except NotFound:
            pass

"""JSON configuration block for a connector and a builder over HTTP clients."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from dhlink.auth import Credentials
from dhlink.clients import HttpCoreClient, HttpSecurityClient
from dhlink.connector.keycache import KeyCache
from dhlink.connector.sink import SinkConnector
from dhlink.connector.source import SourceConnector
from dhlink.errors import ValidationError

SOURCE = "source"
SINK = "sink"


@dataclass(frozen=True)
class ConnectorConfig:
    service_id: str
    api_key: str
    topic: str
    role: str
    broker_url: str
    security_url: str
    section_id: str | None = None
    plaintext_fallback: bool = False
    cache_ttl_seconds: float = 300.0
    poll_interval_ms: int = 100
    state_path: str | None = None
    ca_file: str | None = None

    def __post_init__(self):
        if self.role not in (SOURCE, SINK):
            raise ValidationError(f"role must be source or sink, got {self.role!r}")
        if self.role == SINK and not self.section_id:
            raise ValidationError("a sink connector needs sectionId")

    @classmethod
    def from_dict(cls, doc: dict) -> "ConnectorConfig":
        try:
            return cls(
                service_id=doc["serviceId"],
                api_key=doc["apiKey"],
                topic=doc["topic"],
                role=doc["role"],
                broker_url=doc["brokerUrl"],
                security_url=doc["securityUrl"],
                section_id=doc.get("sectionId"),
                plaintext_fallback=bool(doc.get("plaintextFallback", False)),
                cache_ttl_seconds=float(doc.get("cacheTtlSeconds", 300.0)),
                poll_interval_ms=int(doc.get("pollIntervalMs", 100)),
                state_path=doc.get("statePath"),
                ca_file=doc.get("caFile"),
            )
        except KeyError as exc:
            raise ValidationError(f"connector config missing {exc.args[0]!r}") from None

    @classmethod
    def load(cls, path) -> "ConnectorConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        doc = {
            "serviceId": self.service_id,
            "apiKey": self.api_key,
            "topic": self.topic,
            "role": self.role,
            "brokerUrl": self.broker_url,
            "securityUrl": self.security_url,
            "plaintextFallback": self.plaintext_fallback,
            "cacheTtlSeconds": self.cache_ttl_seconds,
            "pollIntervalMs": self.poll_interval_ms,
        }
        for key, value in (("sectionId", self.section_id), ("statePath", self.state_path),
                           ("caFile", self.ca_file)):
            if value is not None:
                doc[key] = value
        return doc

    def credentials(self) -> Credentials:
        return Credentials(self.service_id, self.api_key)


def build_connector(cfg: ConnectorConfig, tracer=None):
    """Create HTTP clients and the connector; the schema comes from discovery."""
    verify = cfg.ca_file or True
    cred = cfg.credentials()
    core = HttpCoreClient(cfg.broker_url, cred, verify=verify)
    security = HttpSecurityClient(cfg.security_url, cred, verify=verify)
    info = core.get_info("topic", cfg.topic)
    cache = KeyCache(ttl_seconds=cfg.cache_ttl_seconds)
    if cfg.role == SOURCE:
        return SourceConnector(core, security, cfg.topic, info.schema,
                               plaintext_fallback=cfg.plaintext_fallback, key_cache=cache, tracer=tracer)
    return SinkConnector(core, security, cfg.topic, cfg.section_id, info.schema,
                         key_cache=cache, state_path=cfg.state_path, tracer=tracer)

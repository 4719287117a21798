"""Client-side pipelines that attach microservices to topics."""

from dhlink.connector.config import ConnectorConfig, build_connector
from dhlink.connector.keycache import PRIVATE, PUBLIC, KeyCache, KeyCacheEntry
from dhlink.connector.sink import Delivery, RestReader, SinkConnector, SinkReport
from dhlink.connector.source import KEY_UNAVAILABLE, SENT, SendOutcome, SourceConnector, payload_aad
from dhlink.connector.trace import StageEvent, StageTrace

__all__ = [
    "ConnectorConfig",
    "Delivery",
    "KEY_UNAVAILABLE",
    "KeyCache",
    "KeyCacheEntry",
    "PRIVATE",
    "PUBLIC",
    "RestReader",
    "SENT",
    "SendOutcome",
    "SinkConnector",
    "SinkReport",
    "SourceConnector",
    "StageEvent",
    "StageTrace",
    "build_connector",
    "payload_aad",
]

"""Per-connector cache of section keys fetched from encryption management."""

from __future__ import annotations

import threading
import time
from collections import OrderedDict
from dataclasses import dataclass

PUBLIC = "public"
PRIVATE = "private"

DEFAULT_CAPACITY = 1024
DEFAULT_TTL_SECONDS = 300.0


@dataclass(frozen=True)
class KeyCacheEntry:
    topic: str
    section: str
    kind: str
    key_id: str
    key_bytes: bytes
    fetched_at: float
    ttl_seconds: float

    def fresh(self, now: float) -> bool:
        return self.fetched_at + self.ttl_seconds > now


class KeyCache:
    """Bounded LRU with a TTL. ``clock`` returns seconds."""

    def __init__(self, capacity: int = DEFAULT_CAPACITY, ttl_seconds: float = DEFAULT_TTL_SECONDS,
                 clock=time.monotonic):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = capacity
        self.ttl_seconds = ttl_seconds
        self.clock = clock
        self._entries: OrderedDict[tuple[str, str, str], KeyCacheEntry] = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, topic: str, section: str, kind: str, now: float | None = None) -> KeyCacheEntry | None:
        now = self.clock() if now is None else now
        key = (topic, section, kind)
        with self._lock:
            entry = self._entries.get(key)
            if entry is None or not entry.fresh(now):
                if entry is not None:
                    del self._entries[key]
                self.misses += 1
                return None
            self._entries.move_to_end(key)
            self.hits += 1
            return entry

    def put(self, topic: str, section: str, kind: str, key_id: str, key_bytes: bytes,
            now: float | None = None, ttl_seconds: float | None = None) -> KeyCacheEntry:
        now = self.clock() if now is None else now
        ttl = self.ttl_seconds if ttl_seconds is None else ttl_seconds
        entry = KeyCacheEntry(topic, section, kind, key_id, bytes(key_bytes), now, ttl)
        key = (topic, section, kind)
        with self._lock:
            self._entries[key] = entry
            self._entries.move_to_end(key)
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)
        return entry

    def invalidate(self, topic: str, section: str | None = None) -> int:
        with self._lock:
            doomed = [k for k in self._entries if k[0] == topic and (section is None or k[1] == section)]
            for k in doomed:
                del self._entries[k]
        return len(doomed)

    def keys(self) -> list[tuple[str, str, str]]:
        """Cached (topic, section, kind) triples, least recently used first."""
        with self._lock:
            return list(self._entries)

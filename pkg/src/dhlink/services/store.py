"""Real-time store: an ordered key-value map with a JSON-lines write-ahead log and watchers."""

from __future__ import annotations

import json
import logging
import os
import queue
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator

from dhlink._io import atomic_write_jsonl, read_jsonl
from dhlink.errors import ValidationError

log = logging.getLogger(__name__)

PUT = "put"
DELETE = "delete"
DEFAULT_WATCH_CAPACITY = 10_000


@dataclass(frozen=True)
class Change:
    seq: int
    op: str
    key: str
    value: Any = None

    def to_row(self) -> dict:
        row = {"seq": self.seq, "op": self.op, "key": self.key}
        if self.op == PUT:
            row["value"] = self.value
        return row


class WatcherOverflow(Exception):
    pass


class Watcher:
    """Ordered change feed for one key prefix.

    The store never blocks on a slow watcher: when the queue is full the
    watcher is marked failed and detached, other watchers carry on.
    """

    def __init__(self, store: "RealtimeStore", prefix: str, capacity: int):
        self.store = store
        self.prefix = prefix
        self._queue: queue.Queue[Change] = queue.Queue(maxsize=capacity)
        self.error: str | None = None

    def _offer(self, change: Change) -> bool:
        try:
            self._queue.put_nowait(change)
            return True
        except queue.Full:
            self.error = f"overflow after {self._queue.maxsize} undelivered changes"
            return False

    def get(self, timeout: float | None = None) -> Change | None:
        """Next change, or None on timeout. Raises WatcherOverflow once failed and drained."""
        try:
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            if self.error:
                raise WatcherOverflow(self.error) from None
            return None

    def drain(self) -> list[Change]:
        out = []
        while True:
            try:
                out.append(self._queue.get_nowait())
            except queue.Empty:
                break
        if self.error and not out:
            raise WatcherOverflow(self.error)
        return out

    def close(self) -> None:
        self.store.unwatch(self)


class RealtimeStore:
    def __init__(self, path=None, fsync: bool = False, watch_capacity: int = DEFAULT_WATCH_CAPACITY):
        self.path = Path(path) if path else None
        self.fsync = fsync
        self.watch_capacity = watch_capacity
        self._data: dict[str, Any] = {}
        self._seq = 0
        self._lock = threading.Lock()
        self._watchers: list[Watcher] = []
        self._wal = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            for row in read_jsonl(self.path):
                self._apply(Change(row["seq"], row["op"], row["key"], row.get("value")))
            self._wal = open(self.path, "a", encoding="utf-8")

    def _apply(self, change: Change) -> None:
        if change.op == PUT:
            self._data[change.key] = change.value
        else:
            self._data.pop(change.key, None)
        self._seq = max(self._seq, change.seq)

    def close(self) -> None:
        with self._lock:
            if self._wal is not None:
                self._wal.close()
                self._wal = None

    @property
    def seq(self) -> int:
        return self._seq

    def _commit(self, op: str, key: str, value: Any = None) -> int:
        if not isinstance(key, str) or not key:
            raise ValidationError("store keys are non-empty strings")
        with self._lock:
            change = Change(self._seq + 1, op, key, value)
            if self._wal is not None:
                self._wal.write(json.dumps(change.to_row(), separators=(",", ":"), sort_keys=True) + "\n")
                self._wal.flush()
                if self.fsync:
                    os.fsync(self._wal.fileno())
            self._apply(change)
            failed = [w for w in self._watchers if key.startswith(w.prefix) and not w._offer(change)]
            for w in failed:
                log.warning("watcher on %r detached: %s", w.prefix, w.error)
                self._watchers.remove(w)
            return change.seq

    def put(self, key: str, value: Any) -> int:
        """Store ``value`` (JSON-serialisable) under ``key``; durable on return."""
        json.dumps(value)  # reject unserialisable values before logging
        return self._commit(PUT, key, value)

    def delete(self, key: str) -> bool:
        if key not in self._data:
            return False
        self._commit(DELETE, key)
        return True

    def get(self, key: str, default: Any = None) -> Any:
        return self._data.get(key, default)

    def __contains__(self, key: str) -> bool:
        return key in self._data

    def keys(self, prefix: str = "") -> list[str]:
        return sorted(k for k in list(self._data) if k.startswith(prefix))

    def items(self, prefix: str = "") -> Iterator[tuple[str, Any]]:
        for k in self.keys(prefix):
            if k in self._data:
                yield k, self._data[k]

    def watch(self, prefix: str = "", capacity: int | None = None) -> Watcher:
        w = Watcher(self, prefix, capacity or self.watch_capacity)
        with self._lock:
            self._watchers.append(w)
        return w

    def unwatch(self, watcher: Watcher) -> None:
        with self._lock:
            if watcher in self._watchers:
                self._watchers.remove(watcher)

    def compact(self) -> None:
        """Rewrite the log as one put per live key."""
        if self.path is None:
            return
        with self._lock:
            self._wal.close()
            rows = [Change(self._seq, PUT, k, v).to_row() for k, v in sorted(self._data.items())]
            atomic_write_jsonl(self.path, rows)
            self._wal = open(self.path, "a", encoding="utf-8")

"""Shared-data plane: the repository at the center of the twin.

One in-memory ordered map guarded by a lock, with an optional
append-only JSON-lines journal for persistence and replay. Producers
and consumers never talk to each other directly; everything flows
through here (shared-data style). Per-key operations are atomic and
linearizable; subscribers observe commits in commit order.

Journal line format, one JSON object per line:

    {"key": {"namespace", "entity_id", "name", "observed_at"},
     "body": ..., "revision": n, "committed_at": "..."}

Deletions add `"op": "delete"` to the same shape; lines without `op`
are writes.
"""

from __future__ import annotations

import fnmatch
import json
import queue
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

from .clock import format_rfc3339, parse_rfc3339
from .errors import DuplicateKey, InvalidQuery, NotFound


class Namespace(Enum):
    MEASUREMENTS = "Measurements"
    SHADOWS = "Shadows"
    SIM_RESULTS = "SimResults"
    STATES = "States"
    PLANS = "Plans"
    FEEDBACK = "Feedback"


@dataclass(frozen=True)
class RecordKey:
    namespace: Namespace
    entity_id: str
    name: str                 # attribute or record name within the entity
    observed_at: datetime

    def to_json(self) -> dict:
        return {"namespace": self.namespace.value,
                "entity_id": self.entity_id,
                "name": self.name,
                "observed_at": format_rfc3339(self.observed_at)}

    @classmethod
    def from_json(cls, doc: dict) -> "RecordKey":
        return cls(namespace=Namespace(doc["namespace"]),
                   entity_id=doc["entity_id"],
                   name=doc["name"],
                   observed_at=parse_rfc3339(doc["observed_at"]))


@dataclass(frozen=True)
class Record:
    key: RecordKey
    body: object              # canonical JSON value
    revision: int


@dataclass(frozen=True)
class Query:
    namespace: Namespace
    entity_id: str | None = None
    attribute: str | None = None
    time_from: datetime | None = None   # inclusive
    time_to: datetime | None = None     # exclusive
    limit: int | None = None

    def __post_init__(self) -> None:
        if (self.time_from is not None and self.time_to is not None
                and self.time_from >= self.time_to):
            raise InvalidQuery(
                f"empty range: {self.time_from} >= {self.time_to}")
        if self.limit is not None and self.limit < 1:
            raise InvalidQuery(f"limit must be >= 1, got {self.limit}")

    def matches(self, key: RecordKey) -> bool:
        if key.namespace is not self.namespace:
            return False
        if self.entity_id is not None and key.entity_id != self.entity_id:
            return False
        if self.attribute is not None and key.name != self.attribute:
            return False
        if self.time_from is not None and key.observed_at < self.time_from:
            return False
        if self.time_to is not None and key.observed_at >= self.time_to:
            return False
        return True


# Records tie-broken beyond observed_at so reads are fully deterministic.
def _read_order(record: Record) -> tuple:
    k = record.key
    return (k.observed_at, k.entity_id, k.name)


@dataclass
class Subscription:
    """Live feed of committed records for one namespace/entity pattern."""

    namespace: Namespace
    entity_pattern: str
    _queue: "queue.Queue[Record]" = field(default_factory=queue.Queue)

    def matches(self, key: RecordKey) -> bool:
        return (key.namespace is self.namespace
                and fnmatch.fnmatchcase(key.entity_id, self.entity_pattern))

    def get(self, timeout: float | None = None) -> Record:
        return self._queue.get(timeout=timeout)

    def drain(self) -> list[Record]:
        out = []
        while True:
            try:
                out.append(self._queue.get_nowait())
            except queue.Empty:
                return out


class SharedStorage:
    """In-memory record store with journal, revisions, and pub/sub."""

    def __init__(self, journal_path: str | Path | None = None,
                 clock: Callable[[], datetime] | None = None,
                 namespace_caps: dict[Namespace, int] | None = None) -> None:
        self._lock = threading.RLock()
        self._records: dict[RecordKey, Record] = {}
        self._insertion: dict[Namespace, list[RecordKey]] = {
            ns: [] for ns in Namespace}
        self._subscriptions: list[Subscription] = []
        self._clock = clock or (lambda: datetime.now(timezone.utc))
        self._caps = dict(namespace_caps or {})
        self._journal_path = Path(journal_path) if journal_path else None
        self._journal_file = None
        if self._journal_path is not None:
            self._journal_path.parent.mkdir(parents=True, exist_ok=True)
            self._journal_file = self._journal_path.open("a", encoding="utf-8")

    # -- journal ------------------------------------------------------------

    def _journal(self, record: Record, op: str | None = None) -> None:
        if self._journal_file is None:
            return
        line: dict = {"key": record.key.to_json(), "body": record.body,
                      "revision": record.revision,
                      "committed_at": format_rfc3339(self._clock())}
        if op is not None:
            line["op"] = op
        self._journal_file.write(json.dumps(line, sort_keys=True) + "\n")
        self._journal_file.flush()

    @classmethod
    def replay(cls, journal_path: str | Path,
               clock: Callable[[], datetime] | None = None) -> "SharedStorage":
        """Rebuild a store from its journal. The copy does not re-journal."""
        store = cls(journal_path=None, clock=clock)
        with open(journal_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                doc = json.loads(line)
                key = RecordKey.from_json(doc["key"])
                if doc.get("op") == "delete":
                    store._records.pop(key, None)
                    ins = store._insertion[key.namespace]
                    if key in ins:
                        ins.remove(key)
                    continue
                if key not in store._records:
                    store._insertion[key.namespace].append(key)
                store._records[key] = Record(key=key, body=doc["body"],
                                             revision=doc["revision"])
        return store

    def close(self) -> None:
        if self._journal_file is not None:
            self._journal_file.close()
            self._journal_file = None

    # -- CRUD ---------------------------------------------------------------

    def _commit(self, record: Record, op: str | None = None) -> None:
        # caller holds the lock
        self._journal(record, op=op)
        if op is None:
            for sub in self._subscriptions:
                if sub.matches(record.key):
                    sub._queue.put(record)

    def crud_create(self, key: RecordKey, body: object) -> int:
        with self._lock:
            if key in self._records:
                raise DuplicateKey(f"key already present: {key}")
            record = Record(key=key, body=body, revision=1)
            self._records[key] = record
            self._insertion[key.namespace].append(key)
            self._commit(record)
            self._evict(key.namespace)
            return record.revision

    def crud_read(self, query: Query) -> list[Record]:
        with self._lock:
            hits = [r for r in self._records.values() if query.matches(r.key)]
        hits.sort(key=_read_order)
        if query.limit is not None:
            hits = hits[:query.limit]
        return hits

    def crud_update(self, key: RecordKey, body: object) -> int:
        with self._lock:
            current = self._records.get(key)
            if current is None:
                raise NotFound(f"no record under key: {key}")
            record = Record(key=key, body=body, revision=current.revision + 1)
            self._records[key] = record
            self._commit(record)
            return record.revision

    def crud_delete(self, key: RecordKey) -> None:
        with self._lock:
            current = self._records.pop(key, None)
            if current is None:
                raise NotFound(f"no record under key: {key}")
            self._insertion[key.namespace].remove(key)
            self._commit(current, op="delete")

    def upsert(self, key: RecordKey, body: object) -> int:
        """Create-or-update; convenience wrapper used by writers."""
        with self._lock:
            if key in self._records:
                return self.crud_update(key, body)
            return self.crud_create(key, body)

    def _evict(self, namespace: Namespace) -> None:
        cap = self._caps.get(namespace)
        if cap is None:
            return
        ins = self._insertion[namespace]
        while len(ins) > cap:
            oldest = ins[0]
            record = self._records.pop(oldest)
            ins.pop(0)
            self._commit(record, op="delete")

    # -- pub/sub ------------------------------------------------------------

    def subscribe(self, namespace: Namespace,
                  entity_pattern: str = "*") -> Subscription:
        sub = Subscription(namespace=namespace, entity_pattern=entity_pattern)
        with self._lock:
            self._subscriptions.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            if sub in self._subscriptions:
                self._subscriptions.remove(sub)

    # -- inspection ----------------------------------------------------------

    def all_records(self) -> list[Record]:
        with self._lock:
            return list(self._records.values())

    def count(self, namespace: Namespace | None = None) -> int:
        with self._lock:
            if namespace is None:
                return len(self._records)
            return len(self._insertion[namespace])

    def dump(self, namespace: Namespace) -> Iterable[dict]:
        """Namespace contents as JSON-ready dicts, in read order."""
        records = self.crud_read(Query(namespace=namespace))
        for r in records:
            yield {"key": r.key.to_json(), "body": r.body,
                   "revision": r.revision}

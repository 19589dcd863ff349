"""Digital shadows: temporal traces of the physical twin's attributes.

A shadow type names a set of attributes for one entity type; a shadow
is the time-ordered trace of those attributes for one entity. Trace
points live in the Shadows namespace of shared storage under the key
name `<type>.<attribute>`; the manager itself holds only an index, so
a journal replay reconstructs every trace bit-identically.

Out-of-order telemetry is inserted at its timestamp position and
flagged `late`; consumers that want "current" values read the latest
point by timestamp.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from datetime import datetime

from .errors import DuplicateShadow, InvalidQuery, NotFound
from .storage import Namespace, Query, RecordKey, SharedStorage
from .wire.common import Measurement, Scalar


@dataclass(frozen=True)
class ShadowType:
    name: str
    attribute_set: frozenset[str]
    entity_type: str

    def __post_init__(self) -> None:
        if not isinstance(self.attribute_set, frozenset):
            object.__setattr__(self, "attribute_set",
                               frozenset(self.attribute_set))
        if not self.attribute_set:
            raise ValueError(f"shadow type {self.name!r} has no attributes")

    def covers(self, m: Measurement) -> bool:
        return (m.entity_type == self.entity_type
                and m.attribute in self.attribute_set)


@dataclass(frozen=True)
class TracePoint:
    observed_at: datetime
    attribute: str
    value: Scalar
    late: bool = False


@dataclass
class Shadow:
    shadow_id: str
    type: ShadowType
    entity_id: str
    trace: list[TracePoint] = field(default_factory=list)
    created_at: datetime | None = None

    @property
    def updated_at(self) -> datetime | None:
        if not self.trace:
            return self.created_at
        return max(p.observed_at for p in self.trace)

    def latest(self, attribute: str) -> TracePoint | None:
        best = None
        for p in self.trace:
            if p.attribute == attribute:
                if best is None or p.observed_at >= best.observed_at:
                    best = p
        return best

    def series(self, attribute: str) -> list[tuple[datetime, Scalar]]:
        return [(p.observed_at, p.value) for p in self.trace
                if p.attribute == attribute]


class ShadowManager:
    """Lifecycle and query surface over storage-backed shadow traces."""

    def __init__(self, storage: SharedStorage) -> None:
        self.storage = storage
        self._lock = threading.RLock()
        # (type name, entity_id) -> shadow_id; at most one per pair
        self._index: dict[tuple[str, str], str] = {}
        self._types: dict[str, ShadowType] = {}
        self._meta: dict[str, tuple[ShadowType, str, datetime]] = {}

    def register_type(self, shadow_type: ShadowType) -> None:
        with self._lock:
            self._types[shadow_type.name] = shadow_type

    def rebuild_index(self) -> int:
        """Re-attach to shadows already present in storage (e.g. after
        journal replay). Reads descriptors only; writes nothing."""
        count = 0
        with self._lock:
            for record in self.storage.crud_read(Query(namespace=Namespace.SHADOWS)):
                if not record.key.name.endswith(".__descriptor__"):
                    continue
                body = record.body if isinstance(record.body, dict) else {}
                shadow_type = ShadowType(
                    name=body["type"],
                    attribute_set=frozenset(body["attributes"]),
                    entity_type=body["entity_type"])
                pair = (shadow_type.name, record.key.entity_id)
                if pair in self._index:
                    continue
                self._types.setdefault(shadow_type.name, shadow_type)
                self._index[pair] = body["shadow_id"]
                self._meta[body["shadow_id"]] = (
                    shadow_type, record.key.entity_id, record.key.observed_at)
                count += 1
        return count

    # -- lifecycle ------------------------------------------------------------

    def create_shadow(self, shadow_type: ShadowType, entity_id: str,
                      created_at: datetime) -> str:
        """Register a shadow and backfill its trace from measurements."""
        with self._lock:
            self.register_type(shadow_type)
            pair = (shadow_type.name, entity_id)
            if pair in self._index:
                raise DuplicateShadow(
                    f"shadow for {pair} already exists: {self._index[pair]}")
            shadow_id = f"{shadow_type.name}:{entity_id}"
            self._index[pair] = shadow_id
            self._meta[shadow_id] = (shadow_type, entity_id, created_at)
            descriptor = RecordKey(
                namespace=Namespace.SHADOWS, entity_id=entity_id,
                name=f"{shadow_type.name}.__descriptor__",
                observed_at=created_at)
            self.storage.upsert(descriptor, {
                "shadow_id": shadow_id, "type": shadow_type.name,
                "entity_type": shadow_type.entity_type,
                "attributes": sorted(shadow_type.attribute_set)})
            self._backfill(shadow_type, entity_id)
            return shadow_id

    def _backfill(self, shadow_type: ShadowType, entity_id: str) -> None:
        prior = self.storage.crud_read(Query(
            namespace=Namespace.MEASUREMENTS, entity_id=entity_id))
        for record in prior:
            body = record.body
            if not isinstance(body, dict):
                continue
            if body.get("entity_type") != shadow_type.entity_type:
                continue
            if record.key.name not in shadow_type.attribute_set:
                continue
            self._put_point(shadow_type, entity_id, record.key.name,
                            record.key.observed_at, body.get("value"),
                            late=False)

    def delete_shadow(self, shadow_id: str) -> None:
        """Drop the shadow and tombstone all of its storage records."""
        with self._lock:
            meta = self._meta.pop(shadow_id, None)
            if meta is None:
                raise NotFound(f"no shadow {shadow_id!r}")
            shadow_type, entity_id, _ = meta
            del self._index[(shadow_type.name, entity_id)]
            prefix = f"{shadow_type.name}."
            for record in self.storage.crud_read(Query(
                    namespace=Namespace.SHADOWS, entity_id=entity_id)):
                if record.key.name.startswith(prefix):
                    self.storage.crud_delete(record.key)

    # -- updates ---------------------------------------------------------------

    def _put_point(self, shadow_type: ShadowType, entity_id: str,
                   attribute: str, observed_at: datetime, value: object,
                   late: bool) -> None:
        key = RecordKey(namespace=Namespace.SHADOWS, entity_id=entity_id,
                        name=f"{shadow_type.name}.{attribute}",
                        observed_at=observed_at)
        self.storage.upsert(key, {"value": value, "late": late,
                                  "shadow_id": f"{shadow_type.name}:{entity_id}"})

    def update_from_measurement(self, m: Measurement) -> list[str]:
        """Append a trace point to every shadow covering the measurement."""
        updated = []
        with self._lock:
            for (type_name, entity_id), shadow_id in self._index.items():
                if entity_id != m.entity_id:
                    continue
                shadow_type = self._types[type_name]
                if not shadow_type.covers(m):
                    continue
                newest = self._newest_stamp(shadow_type, entity_id)
                late = newest is not None and m.observed_at < newest
                self._put_point(shadow_type, entity_id, m.attribute,
                                m.observed_at, m.value, late=late)
                updated.append(shadow_id)
        return updated

    def _newest_stamp(self, shadow_type: ShadowType,
                      entity_id: str) -> datetime | None:
        prefix = f"{shadow_type.name}."
        newest = None
        for record in self.storage.crud_read(Query(
                namespace=Namespace.SHADOWS, entity_id=entity_id)):
            name = record.key.name
            if not name.startswith(prefix) or name.endswith(".__descriptor__"):
                continue
            if newest is None or record.key.observed_at > newest:
                newest = record.key.observed_at
        return newest

    # -- queries -----------------------------------------------------------------

    def get_shadow(self, type_name: str | None = None,
                   entity_id: str | None = None,
                   name: str | None = None,
                   time_from: datetime | None = None,
                   time_to: datetime | None = None) -> list[Shadow]:
        """Matching shadows with traces sliced to the half-open range."""
        if time_from is not None and time_to is not None and time_from >= time_to:
            raise InvalidQuery(f"empty range: {time_from} >= {time_to}")
        with self._lock:
            hits = []
            for shadow_id, (shadow_type, owner, created_at) in sorted(
                    self._meta.items()):
                if type_name is not None and shadow_type.name != type_name:
                    continue
                if entity_id is not None and owner != entity_id:
                    continue
                if name is not None and shadow_id != name:
                    continue
                hits.append(self._materialize(shadow_type, owner, created_at,
                                              time_from, time_to))
            return hits

    def _materialize(self, shadow_type: ShadowType, entity_id: str,
                     created_at: datetime,
                     time_from: datetime | None,
                     time_to: datetime | None) -> Shadow:
        prefix = f"{shadow_type.name}."
        records = self.storage.crud_read(Query(
            namespace=Namespace.SHADOWS, entity_id=entity_id,
            time_from=time_from, time_to=time_to))
        points = []
        for record in records:
            record_name = record.key.name
            if not record_name.startswith(prefix):
                continue
            attribute = record_name[len(prefix):]
            if attribute == "__descriptor__":
                continue
            body = record.body if isinstance(record.body, dict) else {}
            points.append(TracePoint(
                observed_at=record.key.observed_at, attribute=attribute,
                value=body.get("value"), late=bool(body.get("late"))))
        points.sort(key=lambda p: (p.observed_at, p.attribute))
        return Shadow(shadow_id=f"{shadow_type.name}:{entity_id}",
                      type=shadow_type, entity_id=entity_id,
                      trace=points, created_at=created_at)

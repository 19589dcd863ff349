"""Canonical in-memory telemetry model shared by all wire formats."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum

from ..errors import SchemaViolation

# Value types every supported format can carry.
Scalar = int | float | str | bool


class Source(Enum):
    ULTRALIGHT = "ultralight"
    DITTO = "ditto"
    DTDL = "dtdl"
    NGSI_LD = "ngsi-ld"
    INTERNAL = "internal"


def check_scalar(value: object, context: str) -> Scalar:
    """Validate that a decoded value is a representable scalar."""
    # bool before int: bool is an int subclass
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, str)):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            raise SchemaViolation(f"{context}: non-finite number {value!r}")
        return value
    raise SchemaViolation(
        f"{context}: unsupported value type {type(value).__name__}")


@dataclass(frozen=True)
class Measurement:
    """One observed attribute value, normalized from any wire format."""

    entity_id: str
    entity_type: str
    attribute: str
    value: Scalar
    observed_at: datetime
    unit: str | None = None
    location: tuple[float, float] | None = None   # (lat, lon)
    source: Source = Source.INTERNAL

    def __post_init__(self) -> None:
        if self.observed_at.tzinfo is None:
            raise SchemaViolation(
                f"{self.entity_id}/{self.attribute}: naive observation timestamp")

    def body(self) -> dict:
        """Storage/journal body for this measurement."""
        doc: dict = {"value": self.value, "entity_type": self.entity_type,
                     "source": self.source.value}
        if self.unit is not None:
            doc["unit"] = self.unit
        if self.location is not None:
            doc["location"] = list(self.location)
        return doc

    def to_json(self) -> dict:
        """Full canonical document, including identity and timestamp."""
        from ..clock import format_rfc3339
        doc: dict = {"entity_id": self.entity_id,
                     "entity_type": self.entity_type,
                     "attribute": self.attribute,
                     "value": self.value,
                     "observed_at": format_rfc3339(self.observed_at),
                     "source": self.source.value}
        if self.unit is not None:
            doc["unit"] = self.unit
        if self.location is not None:
            doc["location"] = list(self.location)
        return doc


@dataclass(frozen=True)
class CanonicalEntity:
    """NGSI-LD-shaped view of one entity: id, type, attributes, location."""

    entity_id: str
    entity_type: str
    attributes: dict[str, Measurement] = field(default_factory=dict)
    location: tuple[float, float] | None = None

    @classmethod
    def from_measurements(cls, measurements: list[Measurement]) -> "CanonicalEntity":
        if not measurements:
            raise ValueError("cannot build an entity from zero measurements")
        first = measurements[0]
        attrs: dict[str, Measurement] = {}
        location = None
        for m in measurements:
            if m.entity_id != first.entity_id:
                raise ValueError(
                    f"mixed entities: {m.entity_id} vs {first.entity_id}")
            prev = attrs.get(m.attribute)
            if prev is None or m.observed_at >= prev.observed_at:
                attrs[m.attribute] = m
            if m.location is not None:
                location = m.location
        return cls(entity_id=first.entity_id, entity_type=first.entity_type,
                   attributes=attrs, location=location)

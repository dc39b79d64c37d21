"""EIDO-JSON document model: typed components, validation, canonical serialization.

Documents are immutable.  JSON keys follow the EIDO component naming
(``incidentComponent``, ``locationComponent`` ...); Python attributes are the
snake_case equivalents, and the mapping between the two lives in each
component's ``SCHEMA`` table so that other modules (templates, tabular export)
can walk fields mechanically.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime
from importlib import resources
from pathlib import Path
from typing import Any, ClassVar, Iterable, Mapping, NamedTuple

from .geo import Geometry, GeometryError, geometry_from_dict, geometry_to_dict

logger = logging.getLogger(__name__)

INCIDENT_STATUSES = ("open", "active", "closed", "unknown")
RESOURCE_STATUSES = ("Dispatched", "Enroute", "OnScene", "Cleared", "Available", "Unknown")


class EidoError(ValueError):
    """Base class for document errors."""


class MalformedJsonError(EidoError):
    pass


class SchemaError(EidoError):
    """A schema violation located at ``path`` (e.g. ``notesComponent[0].noteId``)."""

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class InvalidTimestampError(SchemaError):
    pass


class DanglingReferenceError(SchemaError):
    pass


class RegistryMissError(SchemaError):
    pass


# -- timestamps ----------------------------------------------------------------

def parse_instant(text: object, path: str = "") -> datetime:
    """Parse an ISO 8601 instant that carries an explicit UTC offset."""
    if not isinstance(text, str) or not text:
        raise InvalidTimestampError(path, f"expected ISO 8601 string, got {text!r}")
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    try:
        value = datetime.fromisoformat(raw)
    except ValueError as exc:
        raise InvalidTimestampError(path, f"invalid ISO 8601 instant {text!r}") from exc
    if value.tzinfo is None or value.utcoffset() is None:
        raise InvalidTimestampError(path, f"instant {text!r} has no UTC offset")
    return value


def format_instant(value: datetime) -> str:
    return value.isoformat()


# -- registry vocabulary -------------------------------------------------------

class Vocabulary:
    """Controlled incident-type vocabulary (``TERM<TAB>description`` lines)."""

    def __init__(self, terms: Mapping[str, str]):
        self.terms = dict(terms)

    def __contains__(self, term: object) -> bool:
        return term in self.terms

    def __len__(self) -> int:
        return len(self.terms)

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Vocabulary":
        terms: dict[str, str] = {}
        for line in lines:
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            term, _, desc = line.partition("\t")
            terms[term.strip()] = desc.strip()
        return cls(terms)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "Vocabulary":
        if path is None:
            text = resources.files("eidoflow.data").joinpath("incident_types.tsv").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        return cls.from_lines(text.splitlines())


_default_vocabulary: Vocabulary | None = None


def default_vocabulary() -> Vocabulary:
    global _default_vocabulary
    if _default_vocabulary is None:
        _default_vocabulary = Vocabulary.load()
    return _default_vocabulary


# -- field tables --------------------------------------------------------------

class FieldSpec(NamedTuple):
    attr: str
    key: str
    kind: str  # id | text | int | float | instant | geometry | enum | ref
    required: bool = False
    target: str = ""  # referenced component key for kind == "ref"


@dataclass(frozen=True)
class IncidentComponent:
    type_registry_text: str | None = None
    priority: int | None = None
    status: str | None = None
    disposition_text: str | None = None
    tracking_id: str | None = None
    extras: dict = field(default_factory=dict)

    SCHEMA: ClassVar[tuple[FieldSpec, ...]] = (
        FieldSpec("type_registry_text", "incidentTypeCommonRegistryText", "text"),
        FieldSpec("priority", "incidentCommonPriorityNumber", "int"),
        FieldSpec("status", "incidentStatus", "enum"),
        FieldSpec("disposition_text", "incidentDispositionText", "text"),
        FieldSpec("tracking_id", "incidentTrackingId", "text"),
    )


@dataclass(frozen=True)
class LocationComponent:
    location_id: str
    geometry: Geometry | None = None
    civic_address_text: str | None = None
    description_text: str | None = None
    confidence: float | None = None
    extras: dict = field(default_factory=dict)

    SCHEMA: ClassVar[tuple[FieldSpec, ...]] = (
        FieldSpec("location_id", "locationId", "id", True),
        FieldSpec("geometry", "geometry", "geometry"),
        FieldSpec("civic_address_text", "civicAddressText", "text"),
        FieldSpec("description_text", "locationDescriptionText", "text"),
        FieldSpec("confidence", "confidence", "float"),
    )


@dataclass(frozen=True)
class CallComponent:
    call_id: str
    start_timestamp: datetime
    source_text: str | None = None
    extras: dict = field(default_factory=dict)

    SCHEMA: ClassVar[tuple[FieldSpec, ...]] = (
        FieldSpec("call_id", "callId", "id", True),
        FieldSpec("start_timestamp", "callStartTimestamp", "instant", True),
        FieldSpec("source_text", "callSourceText", "text"),
    )


@dataclass(frozen=True)
class ResourceComponent:
    resource_id: str
    unit_identifier: str
    extras: dict = field(default_factory=dict)

    SCHEMA: ClassVar[tuple[FieldSpec, ...]] = (
        FieldSpec("resource_id", "resourceId", "id", True),
        FieldSpec("unit_identifier", "unitIdentifier", "text", True),
    )


@dataclass(frozen=True)
class ResourceStatusComponent:
    status_id: str
    resource_ref: str
    status_text: str
    status_time: datetime
    extras: dict = field(default_factory=dict)

    SCHEMA: ClassVar[tuple[FieldSpec, ...]] = (
        FieldSpec("status_id", "statusId", "id", True),
        FieldSpec("resource_ref", "referencedResourceId", "ref", True, "resourceComponent"),
        FieldSpec("status_text", "statusText", "enum", True),
        FieldSpec("status_time", "statusTime", "instant", True),
    )


@dataclass(frozen=True)
class NotesComponent:
    note_id: str
    comments: str
    timestamp: datetime
    location_ref: str | None = None
    extras: dict = field(default_factory=dict)

    SCHEMA: ClassVar[tuple[FieldSpec, ...]] = (
        FieldSpec("note_id", "noteId", "id", True),
        FieldSpec("comments", "notesActionComments", "text", True),
        FieldSpec("timestamp", "noteTimestamp", "instant", True),
        FieldSpec("location_ref", "locationReference", "ref", False, "locationComponent"),
    )


@dataclass(frozen=True)
class PersonComponent:
    person_id: str
    role_text: str
    name_text: str | None = None
    extras: dict = field(default_factory=dict)

    SCHEMA: ClassVar[tuple[FieldSpec, ...]] = (
        FieldSpec("person_id", "personId", "id", True),
        FieldSpec("role_text", "roleText", "text", True),
        FieldSpec("name_text", "nameText", "text"),
    )


_ENUMS = {"incidentStatus": INCIDENT_STATUSES, "statusText": RESOURCE_STATUSES}

# document attribute, JSON key, component class -- list-valued components only
COMPONENT_LISTS: tuple[tuple[str, str, type], ...] = (
    ("locations", "locationComponent", LocationComponent),
    ("calls", "callComponent", CallComponent),
    ("resources", "resourceComponent", ResourceComponent),
    ("resource_statuses", "resourceStatusComponent", ResourceStatusComponent),
    ("notes", "notesComponent", NotesComponent),
    ("persons", "personComponent", PersonComponent),
)

_DOC_KEYS = {"eidoId", "issuedTimestamp", "sourceDescriptor", "incidentComponent"} | {
    key for _, key, _ in COMPONENT_LISTS
}


@dataclass(frozen=True, eq=False)
class EidoDocument:
    eido_id: str
    issued: datetime
    incident: IncidentComponent = field(default_factory=IncidentComponent)
    locations: tuple[LocationComponent, ...] = ()
    calls: tuple[CallComponent, ...] = ()
    resources: tuple[ResourceComponent, ...] = ()
    resource_statuses: tuple[ResourceStatusComponent, ...] = ()
    notes: tuple[NotesComponent, ...] = ()
    persons: tuple[PersonComponent, ...] = ()
    source_descriptor: str | None = None
    extras: dict = field(default_factory=dict)

    # datetimes with different offsets compare equal, so structural equality
    # goes through the canonical dict where offsets are explicit.
    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EidoDocument):
            return NotImplemented
        return document_to_dict(self) == document_to_dict(other)

    __hash__ = None  # type: ignore[assignment]

    @property
    def unit_identifiers(self) -> frozenset[str]:
        return frozenset(r.unit_identifier for r in self.resources)

    def geometries(self) -> list[Geometry]:
        return [loc.geometry for loc in self.locations if loc.geometry is not None]


def template_field_paths() -> set[str]:
    """Every ``component.field`` path a template may name."""
    paths = {f"incidentComponent.{f.key}" for f in IncidentComponent.SCHEMA}
    for _, key, cls in COMPONENT_LISTS:
        paths.add(key)
        paths.update(f"{key}.{f.key}" for f in cls.SCHEMA)
    paths.update({"eidoId", "issuedTimestamp", "sourceDescriptor", "incidentComponent"})
    return paths


# -- dict <-> objects ----------------------------------------------------------

def _check_scalar(spec: FieldSpec, value: Any, path: str) -> Any:
    if spec.kind in ("id", "text", "ref", "enum"):
        if not isinstance(value, str):
            raise SchemaError(path, f"expected string, got {type(value).__name__}")
        if spec.kind in ("id", "ref") and not value:
            raise SchemaError(path, "identifier must be non-empty")
        if spec.key == "notesActionComments" and not value.strip():
            raise SchemaError(path, "notesActionComments must be non-empty")
        if spec.kind == "enum" and value not in _ENUMS[spec.key]:
            raise SchemaError(path, f"{value!r} not in {list(_ENUMS[spec.key])}")
        return value
    if spec.kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(path, f"expected integer, got {value!r}")
        if spec.key == "incidentCommonPriorityNumber" and not 1 <= value <= 5:
            raise SchemaError(path, f"priority {value} outside 1..5")
        return value
    if spec.kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise SchemaError(path, f"expected number, got {value!r}")
        if spec.key == "confidence" and not 0.0 <= value <= 1.0:
            raise SchemaError(path, f"confidence {value} outside [0, 1]")
        return value
    if spec.kind == "instant":
        return parse_instant(value, path)
    if spec.kind == "geometry":
        try:
            return geometry_from_dict(value)
        except GeometryError as exc:
            raise SchemaError(path, str(exc)) from None
    raise AssertionError(spec.kind)


def _component_from_dict(cls: type, data: Any, path: str):
    if not isinstance(data, dict):
        raise SchemaError(path, "expected object")
    kwargs: dict[str, Any] = {}
    known = set()
    for spec in cls.SCHEMA:
        known.add(spec.key)
        value = data.get(spec.key)
        if value is None:
            if spec.required:
                raise SchemaError(f"{path}.{spec.key}", "required field missing")
            continue
        kwargs[spec.attr] = _check_scalar(spec, value, f"{path}.{spec.key}")
    kwargs["extras"] = {k: v for k, v in data.items() if k not in known}
    obj = cls(**kwargs)
    if cls is LocationComponent and obj.geometry is None and obj.civic_address_text is None \
            and obj.description_text is None:
        raise SchemaError(path, "location needs geometry, civicAddressText or locationDescriptionText")
    return obj


def component_to_dict(obj: Any) -> dict:
    out: dict[str, Any] = dict(obj.extras)
    for spec in obj.SCHEMA:
        value = getattr(obj, spec.attr)
        if value is None:
            continue
        if spec.kind == "instant":
            value = format_instant(value)
        elif spec.kind == "geometry":
            value = geometry_to_dict(value)
        out[spec.key] = value
    return out


def _check_references(doc: EidoDocument) -> None:
    ids: dict[str, set[str]] = {}
    for attr, key, cls in COMPONENT_LISTS:
        id_spec = cls.SCHEMA[0]
        seen: set[str] = set()
        for i, comp in enumerate(getattr(doc, attr)):
            cid = getattr(comp, id_spec.attr)
            if cid in seen:
                raise SchemaError(f"{key}[{i}].{id_spec.key}", f"duplicate identifier {cid!r}")
            seen.add(cid)
        ids[key] = seen
    for attr, key, cls in COMPONENT_LISTS:
        for spec in cls.SCHEMA:
            if spec.kind != "ref":
                continue
            for i, comp in enumerate(getattr(doc, attr)):
                ref = getattr(comp, spec.attr)
                if ref is not None and ref not in ids[spec.target]:
                    raise DanglingReferenceError(
                        f"{key}[{i}]", f"{spec.key} {ref!r} does not resolve to any {spec.target}")


def document_from_dict(
    data: Any,
    *,
    vocabulary: Vocabulary | None = None,
    strict: bool = False,
) -> EidoDocument:
    """Validate a decoded JSON object and build an :class:`EidoDocument`."""
    if not isinstance(data, dict):
        raise SchemaError("", "document must be a JSON object")
    eido_id = data.get("eidoId")
    if not isinstance(eido_id, str) or not eido_id:
        raise SchemaError("eidoId", "must be a non-empty string")
    issued = parse_instant(data.get("issuedTimestamp"), "issuedTimestamp")
    source = data.get("sourceDescriptor")
    if source is not None and not isinstance(source, str):
        raise SchemaError("sourceDescriptor", "expected string")
    if "incidentComponent" not in data:
        raise SchemaError("incidentComponent", "required component missing")
    incident = _component_from_dict(IncidentComponent, data["incidentComponent"], "incidentComponent")

    lists: dict[str, tuple] = {}
    for attr, key, cls in COMPONENT_LISTS:
        raw = data.get(key, [])
        if raw is None:
            raw = []
        if not isinstance(raw, list):
            raise SchemaError(key, "expected array")
        lists[attr] = tuple(_component_from_dict(cls, item, f"{key}[{i}]") for i, item in enumerate(raw))

    doc = EidoDocument(
        eido_id=eido_id,
        issued=issued,
        incident=incident,
        source_descriptor=source,
        extras={k: v for k, v in data.items() if k not in _DOC_KEYS},
        **lists,
    )
    _check_references(doc)

    term = incident.type_registry_text
    vocab = vocabulary if vocabulary is not None else default_vocabulary()
    if term is not None and term not in vocab:
        path = "incidentComponent.incidentTypeCommonRegistryText"
        if strict:
            raise RegistryMissError(path, f"{term!r} is not a registry term")
        logger.warning("%s: %s: %r is not a registry term", eido_id, path, term)
    return doc


def document_to_dict(doc: EidoDocument) -> dict:
    out: dict[str, Any] = dict(doc.extras)
    out["eidoId"] = doc.eido_id
    out["issuedTimestamp"] = format_instant(doc.issued)
    if doc.source_descriptor is not None:
        out["sourceDescriptor"] = doc.source_descriptor
    out["incidentComponent"] = component_to_dict(doc.incident)
    for attr, key, _ in COMPONENT_LISTS:
        items = getattr(doc, attr)
        if items:
            out[key] = [component_to_dict(c) for c in items]
    return out


def canonical_json(data: Any) -> str:
    """Sorted keys, no insignificant whitespace, UTF-8 characters kept literal."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def parse_document(
    text: str | bytes,
    *,
    vocabulary: Vocabulary | None = None,
    strict: bool = False,
) -> EidoDocument:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJsonError(f"input is not UTF-8: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedJsonError(f"malformed JSON: {exc}") from None
    return document_from_dict(data, vocabulary=vocabulary, strict=strict)


def serialize_document(doc: EidoDocument) -> str:
    return canonical_json(document_to_dict(doc))


def descriptive_text(doc: EidoDocument) -> str:
    """Text used for semantic comparison of a document against an incident."""
    parts: list[str | None] = [doc.incident.type_registry_text, doc.incident.disposition_text]
    parts.extend(n.comments for n in sorted(doc.notes, key=lambda n: n.timestamp))
    for loc in doc.locations:
        parts.extend((loc.civic_address_text, loc.description_text))
    return " ".join(p.strip() for p in parts if p and p.strip())


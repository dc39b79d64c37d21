"""Legacy CAD records to EIDO documents.

Code mappings, templates and column bindings are data files; nothing
agency-specific is hard-coded here.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import re
from calendar import month_abbr, month_name
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Protocol, Sequence

import yaml

from .model import (
    INCIDENT_STATUSES,
    CallComponent,
    EidoDocument,
    EidoError,
    IncidentComponent,
    LocationComponent,
    NotesComponent,
    PersonComponent,
    ResourceComponent,
    ResourceStatusComponent,
    Vocabulary,
    canonical_json,
    default_vocabulary,
    document_from_dict,
    document_to_dict,
    parse_instant,
    template_field_paths,
)

logger = logging.getLogger(__name__)

CadRecord = Mapping[str, str]

ROLES = frozenset({
    "trackingId", "incidentType", "priority", "disposition", "status",
    "year", "month", "day", "hour", "minute", "second", "utcOffset",
    "sectorBeat", "locationDescription", "civicAddress",
    "unitId", "firstUnitArrived", "timeOnScene",
    "problemDescription", "callSource",
})
CODE_KINDS = ("incidentType", "priority", "disposition")


class TransformError(ValueError):
    """A record cannot be turned into a valid document."""


class RegistryFileError(ValueError):
    pass


@dataclass(frozen=True)
class TransformWarning:
    code: str
    message: str
    field: str | None = None


@dataclass(frozen=True)
class Unmapped:
    """Marker for a code with no registry mapping; keeps the original text."""

    kind: str
    code: str


# -- mapping registry ------------------------------------------------------------

def _norm_code(code: str) -> str:
    return " ".join(code.split()).casefold()


@dataclass
class MappingRegistry:
    incident_types: dict[str, str] = field(default_factory=dict)
    priorities: dict[str, int] = field(default_factory=dict)
    dispositions: dict[str, str] = field(default_factory=dict)

    def table(self, kind: str) -> dict:
        if kind == "incidentType":
            return self.incident_types
        if kind == "priority":
            return self.priorities
        if kind == "disposition":
            return self.dispositions
        raise ValueError(f"unknown mapping kind {kind!r}")

    @classmethod
    def from_lines(cls, lines: Iterable[str], vocabulary: Vocabulary | None = None) -> "MappingRegistry":
        vocab = vocabulary if vocabulary is not None else default_vocabulary()
        reg = cls()
        for lineno, line in enumerate(lines, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise RegistryFileError(f"line {lineno}: expected KIND<TAB>CODE<TAB>TARGET")
            kind, code, target = (p.strip() for p in parts)
            if kind not in CODE_KINDS:
                raise RegistryFileError(f"line {lineno}: unknown kind {kind!r}")
            if kind == "priority":
                try:
                    value: Any = int(target)
                except ValueError:
                    raise RegistryFileError(f"line {lineno}: priority target {target!r} is not an integer") from None
                if not 1 <= value <= 5:
                    raise RegistryFileError(f"line {lineno}: priority target {value} outside 1..5")
            elif kind == "incidentType":
                if target not in vocab:
                    raise RegistryFileError(f"line {lineno}: {target!r} is not a registry term")
                value = target
            else:
                value = target
            reg.table(kind)[_norm_code(code)] = value
        return reg

    @classmethod
    def load(cls, path: str | Path | None = None, vocabulary: Vocabulary | None = None) -> "MappingRegistry":
        if path is None:
            text = resources.files("eidoflow.data").joinpath("code_mappings.tsv").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        return cls.from_lines(text.splitlines(), vocabulary)


def map_code(kind: str, code: str, registry: MappingRegistry) -> str | int | Unmapped:
    """Translate an agency code; unknown codes come back as :class:`Unmapped`."""
    key = _norm_code(code)
    if not key:
        raise ValueError("code is empty after trimming")
    table = registry.table(kind)
    if key in table:
        return table[key]
    return Unmapped(kind, code)


# -- templates -------------------------------------------------------------------

@dataclass(frozen=True)
class EidoTemplate:
    template_id: str
    applies_to: frozenset[str]
    required_fields: tuple[str, ...] = ()
    optional_fields: tuple[str, ...] = ()

    def applies(self, incident_type: str | None) -> bool:
        return "*" in self.applies_to or (incident_type is not None and incident_type in self.applies_to)

    def missing_fields(self, doc: EidoDocument) -> list[str]:
        data = document_to_dict(doc)
        return [path for path in self.required_fields if not _path_present(data, path)]


def _path_present(data: dict, path: str) -> bool:
    head, _, rest = path.partition(".")
    node = data.get(head)
    if node is None:
        return False
    if not rest:
        return node != [] and node != {}
    if isinstance(node, list):
        return any(item.get(rest) is not None for item in node)
    return node.get(rest) is not None


def load_templates(path: str | Path | None = None) -> list[EidoTemplate]:
    if path is None:
        raw = json.loads(resources.files("eidoflow.data").joinpath("templates.json").read_text("utf-8"))
    else:
        raw = json.loads(Path(path).read_text("utf-8"))
    known = template_field_paths()
    templates = []
    for i, item in enumerate(raw):
        required = tuple(item.get("requiredFields", ()))
        optional = tuple(item.get("optionalFields", ()))
        for p in required + optional:
            if p not in known:
                raise RegistryFileError(f"template {i} ({item.get('templateId')}): unknown field path {p!r}")
        templates.append(EidoTemplate(
            template_id=item["templateId"],
            applies_to=frozenset(item.get("appliesToTypes", ())),
            required_fields=required,
            optional_fields=optional,
        ))
    return templates


def load_bindings(path: str | Path | None = None) -> dict[str, str]:
    if path is None:
        text = resources.files("eidoflow.data").joinpath("bindings.yaml").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return validate_bindings(yaml.safe_load(text) or {})


def validate_bindings(bindings: Mapping[str, str]) -> dict[str, str]:
    out = {}
    for column, role in bindings.items():
        if role not in ROLES:
            raise RegistryFileError(f"column {column!r} bound to unknown role {role!r}")
        out[str(column)] = role
    return out


# -- entity extraction -----------------------------------------------------------

@dataclass(frozen=True)
class Entity:
    kind: str  # person | location | organization
    value: str
    start: int
    end: int


class Extractor(Protocol):
    def __call__(self, text: str) -> list[Entity]: ...


_PERSON_RE = re.compile(
    r"\b(?:Mr|Mrs|Ms|Dr|Officer|Sgt|Deputy|Capt|Captain|Chief)\.?\s+([A-Z][a-z]+(?:\s[A-Z][a-z]+)?)")
_ORG_RE = re.compile(
    r"\b((?:[A-Z][\w&'-]*\s){0,4}(?:Department|Service|Agency|Police|Patrol|Authority|Union-Tribune|"
    r"Utility|Utilities|Electric|Company|Office))\b")
_PLACE_RE = re.compile(
    r"\b(?:at|near|on|in|along|by)\s+(?:the\s+)?((?:[A-Z][\w'-]*\s){0,4}"
    r"(?:St|Street|Ave|Avenue|Rd|Road|Blvd|Boulevard|Dr|Drive|Hwy|Highway|Park|Plaza|Market|River|Creek|"
    r"School|Mall|Center|Station|Bridge|Beach))\b")


class RuleBasedExtractor:
    """Deterministic keyword/pattern extractor.

    Known place names (e.g. gazetteer names and aliases) are matched as whole
    words, case-insensitively; regexes cover titled persons, organization
    suffixes and "near <Proper Name> <place noun>" phrases.
    """

    def __init__(self, place_names: Iterable[str] = ()):
        names = sorted({n for n in place_names if n.strip()}, key=lambda n: (-len(n), n))
        self._place_res = [re.compile(rf"(?<!\w){re.escape(n)}(?!\w)", re.IGNORECASE) for n in names]

    def __call__(self, text: str) -> list[Entity]:
        found: list[Entity] = []
        for rx in self._place_res:
            for m in rx.finditer(text):
                found.append(Entity("location", m.group(0), m.start(), m.end()))
        for kind, rx in (("location", _PLACE_RE), ("person", _PERSON_RE), ("organization", _ORG_RE)):
            for m in rx.finditer(text):
                found.append(Entity(kind, m.group(1), m.start(1), m.end(1)))
        found.sort(key=lambda e: (e.start, -(e.end - e.start), e.kind))
        kept: list[Entity] = []
        for ent in found:
            if kept and ent.start < kept[-1].end:
                continue
            kept.append(ent)
        return kept


# -- temporal parsing ------------------------------------------------------------

class TimestampSynthesisError(TransformError):
    pass


_OFFSET_RE = re.compile(r"^([+-])(\d{2}):?(\d{2})$")
_MONTHS = {name.casefold(): i for i, name in enumerate(month_name) if name}
_MONTHS.update({name.casefold(): i for i, name in enumerate(month_abbr) if name})


def parse_offset(text: str) -> timezone:
    raw = text.strip()
    if raw.upper() in ("Z", "UTC"):
        return timezone.utc
    m = _OFFSET_RE.match(raw)
    if not m:
        raise TimestampSynthesisError(f"bad UTC offset {text!r}")
    sign, hh, mm = m.groups()
    delta = timedelta(hours=int(hh), minutes=int(mm))
    if delta >= timedelta(hours=24):
        raise TimestampSynthesisError(f"UTC offset {text!r} out of range")
    return timezone(-delta if sign == "-" else delta)


def _as_int(name: str, value: Any) -> int:
    if isinstance(value, bool):
        raise TimestampSynthesisError(f"{name}: expected integer, got {value!r}")
    if isinstance(value, int):
        return value
    text = str(value).strip()
    if name == "month" and text.casefold() in _MONTHS:
        return _MONTHS[text.casefold()]
    try:
        return int(text)
    except ValueError:
        raise TimestampSynthesisError(f"{name}: {value!r} is not an integer") from None


def synthesize_timestamp(parts: Mapping[str, Any]) -> datetime:
    """Combine split calendar fields into an offset-aware instant.

    ``year``, ``month``, ``day`` and ``utcOffset`` are mandatory; hour, minute
    and second default to 0.
    """
    for key in ("year", "month", "day", "utcOffset"):
        if parts.get(key) in (None, ""):
            raise TimestampSynthesisError(f"missing mandatory part {key!r}")
    values = {k: _as_int(k, parts[k]) for k in ("year", "month", "day")}
    for k in ("hour", "minute", "second"):
        v = parts.get(k)
        values[k] = 0 if v in (None, "") else _as_int(k, v)
    tz = parse_offset(str(parts["utcOffset"]))
    try:
        return datetime(tzinfo=tz, **values)
    except ValueError as exc:
        raise TimestampSynthesisError(f"invalid calendar value: {exc}") from None


_HMS_RE = re.compile(r"^(\d+):([0-5]\d):([0-5]\d)$")
_MIN_RE = re.compile(r"^(\d+)\s*min(?:ute)?s?$", re.IGNORECASE)


def parse_duration(text: str) -> timedelta:
    """Accepts ``H:MM:SS``, ``MM min`` or a bare integer number of minutes."""
    raw = text.strip()
    m = _HMS_RE.match(raw)
    if m:
        h, mi, s = (int(g) for g in m.groups())
        return timedelta(hours=h, minutes=mi, seconds=s)
    m = _MIN_RE.match(raw)
    if m:
        return timedelta(minutes=int(m.group(1)))
    if raw.isdigit():
        return timedelta(minutes=int(raw))
    raise TransformError(f"unrecognized duration {text!r}")


_CLOCK_RE = re.compile(r"^(\d{1,2}):(\d{2})(?::(\d{2}))?$")


def _parse_clock(text: str) -> tuple[int, int, int] | None:
    m = _CLOCK_RE.match(text.strip())
    if not m:
        return None
    return int(m.group(1)), int(m.group(2)), int(m.group(3) or 0)


def _parse_arrival(text: str, call_start: datetime) -> datetime:
    clock = _parse_clock(text)
    if clock is not None:
        h, mi, s = clock
        try:
            value = call_start.replace(hour=h, minute=mi, second=s, microsecond=0)
        except ValueError:
            raise TransformError(f"bad arrival time {text!r}") from None
        if value < call_start:
            value += timedelta(days=1)
        return value
    raw = text.strip()
    try:
        return parse_instant(raw)
    except EidoError:
        pass
    try:
        naive = datetime.fromisoformat(raw.replace(" ", "T", 1))
    except ValueError:
        raise TransformError(f"unparseable arrival timestamp {text!r}") from None
    if naive.tzinfo is not None:
        return naive
    return naive.replace(tzinfo=call_start.tzinfo)


# -- record transformation -------------------------------------------------------

@dataclass
class TransformOptions:
    default_year: int | None = None
    utc_offset: str = "+00:00"
    source_descriptor: str = "legacy CAD"
    strict: bool = False


@dataclass
class TransformResult:
    document: EidoDocument
    warnings: list[TransformWarning]


def _record_id(rec: CadRecord) -> str:
    digest = hashlib.sha256(canonical_json(list(rec.items())).encode("utf-8")).hexdigest()
    return f"eido-{digest[:16]}"


def transform_record(
    rec: CadRecord,
    registry: MappingRegistry,
    templates: Sequence[EidoTemplate],
    extractor: Extractor,
    bindings: Mapping[str, str],
    options: TransformOptions | None = None,
    *,
    vocabulary: Vocabulary | None = None,
) -> TransformResult:
    opts = options or TransformOptions()
    warnings: list[TransformWarning] = []
    role_values: dict[str, str] = {}
    role_columns: dict[str, str] = {}
    legacy: dict[str, str] = {}
    for column, value in rec.items():
        text = "" if value is None else str(value).strip()
        role = bindings.get(column)
        if role is None:
            if text:
                legacy[column] = text
            continue
        role_columns[role] = column
        if text:
            role_values[role] = text

    # call start
    hour = role_values.get("hour")
    minute = role_values.get("minute")
    second = role_values.get("second")
    if hour is not None and (clock := _parse_clock(hour)) is not None:
        hour, minute, second = clock[0], minute or clock[1], second or clock[2]
    year = role_values.get("year", opts.default_year)
    try:
        call_start = synthesize_timestamp({
            "year": year, "month": role_values.get("month"), "day": role_values.get("day"),
            "hour": hour, "minute": minute, "second": second,
            "utcOffset": role_values.get("utcOffset", opts.utc_offset),
        })
    except TimestampSynthesisError as exc:
        raise TransformError(f"cannot build call start timestamp: {exc}") from None

    unmapped: dict[str, str] = {}
    mapped: dict[str, Any] = {}
    for kind in CODE_KINDS:
        code = role_values.get(kind)
        if code is None:
            continue
        result = map_code(kind, code, registry)
        if isinstance(result, Unmapped):
            if opts.strict:
                raise TransformError(f"unmapped {kind} code {code!r}")
            unmapped[kind] = result.code
            warnings.append(TransformWarning("unmapped-code", f"no {kind} mapping for {code!r}", kind))
        else:
            mapped[kind] = result

    status = None
    if "status" in role_values:
        candidate = role_values["status"].casefold()
        if candidate in INCIDENT_STATUSES:
            status = candidate
        else:
            warnings.append(TransformWarning("bad-status", f"status {role_values['status']!r} not recognized", "status"))

    incident_extras = {"unmappedCodes": unmapped} if unmapped else {}
    incident = IncidentComponent(
        type_registry_text=mapped.get("incidentType"),
        priority=mapped.get("priority"),
        status=status,
        disposition_text=mapped.get("disposition"),
        tracking_id=role_values.get("trackingId"),
        extras=incident_extras,
    )

    # narrative + entity extraction
    problem = role_values.get("problemDescription")
    entities: list[Entity] = extractor(problem) if problem else []
    for ent in entities:
        if not (0 <= ent.start <= ent.end <= len(problem or "")):
            raise TransformError(f"extractor returned span {ent.start}:{ent.end} outside the input text")
    notes: list[NotesComponent] = []
    persons: list[PersonComponent] = []
    if problem:
        note_extras = {}
        if entities:
            note_extras["extractedEntities"] = [
                {"kind": e.kind, "value": e.value, "span": [e.start, e.end]} for e in entities]
        notes.append(NotesComponent("note-1", problem, call_start, extras=note_extras))
        for i, ent in enumerate((e for e in entities if e.kind == "person"), 1):
            persons.append(PersonComponent(f"person-{i}", "Mentioned", ent.value))

    # location
    description = role_values.get("locationDescription")
    if description is None:
        description = next((e.value for e in entities if e.kind == "location"), None)
    beat = role_values.get("sectorBeat")
    if beat is not None:
        label = f"{role_columns['sectorBeat']}: {beat}"
        description = f"{description}; {label}" if description else label
    civic = role_values.get("civicAddress")
    locations = []
    if description or civic:
        locations.append(LocationComponent("loc-1", civic_address_text=civic, description_text=description))

    # units
    resources_: list[ResourceComponent] = []
    statuses: list[ResourceStatusComponent] = []
    unit = role_values.get("unitId")
    arrived = role_values.get("firstUnitArrived")
    on_scene = role_values.get("timeOnScene")
    if unit is None and arrived is not None:
        unit = "UNKNOWN"
        warnings.append(TransformWarning("missing-unit", "arrival time given without a unit identifier", "unitId"))
    if unit is not None:
        resources_.append(ResourceComponent("res-1", unit))
    if arrived is not None:
        start = _parse_arrival(arrived, call_start)
        statuses.append(ResourceStatusComponent("status-1", "res-1", "OnScene", start))
        if on_scene is not None:
            end = start + parse_duration(on_scene)
            statuses.append(ResourceStatusComponent("status-2", "res-1", "Cleared", end))
    elif on_scene is not None:
        warnings.append(TransformWarning(
            "orphan-duration", "time on scene given without an arrival time", "timeOnScene"))

    doc = EidoDocument(
        eido_id=_record_id(rec),
        issued=call_start,
        incident=incident,
        locations=tuple(locations),
        calls=(CallComponent("call-1", call_start, role_values.get("callSource", opts.source_descriptor)),),
        resources=tuple(resources_),
        resource_statuses=tuple(statuses),
        notes=tuple(notes),
        persons=tuple(persons),
        source_descriptor=opts.source_descriptor,
        extras={"legacyFields": legacy} if legacy else {},
    )
    try:
        doc = document_from_dict(document_to_dict(doc), vocabulary=vocabulary, strict=opts.strict)
    except EidoError as exc:
        raise TransformError(f"generated document failed validation: {exc}") from exc

    for template in templates:
        if template.applies(incident.type_registry_text):
            for path in template.missing_fields(doc):
                warnings.append(TransformWarning(
                    "missing-required-field", f"template {template.template_id} requires {path}", path))
            break
    return TransformResult(doc, warnings)


@dataclass
class StreamItem:
    position: int
    document: EidoDocument | None = None
    warnings: list[TransformWarning] = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def transform_stream(records: Iterable[CadRecord], *args: Any, **kwargs: Any) -> Iterator[StreamItem]:
    """Order-preserving :func:`transform_record` over many records; failures become error items."""
    for position, rec in enumerate(records):
        try:
            result = transform_record(rec, *args, **kwargs)
        except (TransformError, ValueError) as exc:
            logger.warning("record %d: %s", position, exc)
            yield StreamItem(position, error=str(exc))
            continue
        yield StreamItem(position, result.document, result.warnings)


# -- CAD input files -------------------------------------------------------------

def read_cad_csv(path: str | Path) -> Iterator[dict[str, str]]:
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return
        header = [h.strip() for h in header]
        dupes = sorted({h for h in header if header.count(h) > 1})
        if dupes:
            raise TransformError(f"{path}: duplicate column names {dupes}")
        for row in reader:
            if not any(cell.strip() for cell in row):
                continue
            yield {h: (row[i] if i < len(row) else "") for i, h in enumerate(header)}


def read_cad_jsonl(path: str | Path) -> Iterator[dict[str, str]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise TransformError(f"{path}:{lineno}: expected a flat JSON object")
            yield {str(k): "" if v is None else str(v) for k, v in obj.items()}

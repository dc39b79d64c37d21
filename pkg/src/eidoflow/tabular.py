"""Flatten documents into typed feature rows and compose documents back from rows.

One row per component plus one incident row per document.  Cells hold
strings copied from the document: timestamps in ISO 8601, geometry as WKT,
unknown fields as a canonical-JSON ``extras`` cell.  Links between components
stay as identifier columns.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Iterable, Sequence

from .geo import GeometryError, from_wkt, geometry_to_dict, to_wkt
from .model import (
    COMPONENT_LISTS,
    EidoDocument,
    EidoError,
    FieldSpec,
    IncidentComponent,
    canonical_json,
    document_from_dict,
    format_instant,
)

INCIDENT = "incident"
INCIDENT_COMPONENT_ID = "incident"

# feature kind -> (document attribute, JSON key, component class)
_KIND_NAMES = {
    "locations": "location",
    "calls": "call",
    "resources": "resource",
    "resource_statuses": "resourceStatus",
    "notes": "note",
    "persons": "person",
}
_LIST_KINDS = {_KIND_NAMES[attr]: (attr, key, cls) for attr, key, cls in COMPONENT_LISTS}
FEATURE_KINDS = (INCIDENT,) + tuple(_LIST_KINDS)
_KIND_OF_KEY = {key: kind for kind, (_, key, _) in _LIST_KINDS.items()}

_DOC_COLUMNS = (
    FieldSpec("issued", "issuedTimestamp", "instant", True),
    FieldSpec("source_descriptor", "sourceDescriptor", "text"),
)


class TabularError(ValueError):
    pass


class DanglingLinkError(TabularError):
    def __init__(self, eido_id: str, kind: str, component_id: str, column: str, value: str):
        self.column = column
        super().__init__(
            f"{eido_id}/{kind}/{component_id}: link column {column!r} references missing component {value!r}")


class ConflictError(TabularError):
    def __init__(self, eido_id: str, kind: str, component_id: str, column: str, first: str, second: str):
        self.column = column
        self.values = (first, second)
        super().__init__(
            f"{eido_id}/{kind}/{component_id}: conflicting values for {column!r}: {first!r} vs {second!r}")


def _value_specs(kind: str) -> tuple[FieldSpec, ...]:
    if kind == INCIDENT:
        return _DOC_COLUMNS + IncidentComponent.SCHEMA
    return _LIST_KINDS[kind][2].SCHEMA[1:]


def kind_columns(kind: str) -> list[str]:
    """Attribute columns of a feature kind, in export order."""
    cols = [spec.key for spec in _value_specs(kind)]
    if kind == INCIDENT:
        cols.append("documentExtras")
    cols.append("extras")
    return cols


def link_targets(kind: str) -> dict[str, str]:
    """Link column -> referenced feature kind."""
    if kind == INCIDENT:
        return {}
    return {s.key: _KIND_OF_KEY[s.target] for s in _value_specs(kind) if s.kind == "ref"}


@dataclass(frozen=True)
class FeatureRow:
    feature_kind: str
    eido_id: str
    component_id: str | None
    attributes: dict[str, str] = field(default_factory=dict)

    @property
    def link_columns(self) -> tuple[str, ...]:
        return tuple(c for c in link_targets(self.feature_kind) if c in self.attributes)

    def to_flat(self) -> dict[str, str]:
        out = {"featureKind": self.feature_kind, "eidoId": self.eido_id}
        if self.component_id is not None:
            out["componentId"] = self.component_id
        out.update(self.attributes)
        return out

    @classmethod
    def from_flat(cls, data: dict[str, Any], kind: str | None = None) -> "FeatureRow":
        data = dict(data)
        kind = kind or data.pop("featureKind", None)
        data.pop("featureKind", None)
        if kind not in FEATURE_KINDS:
            raise TabularError(f"unknown feature kind {kind!r}")
        eido_id = data.pop("eidoId", None)
        if not eido_id:
            raise TabularError(f"{kind} row without eidoId")
        cid = data.pop("componentId", None) or None
        attrs = {}
        for k, v in data.items():
            if v is None or v == "":
                continue
            if not isinstance(v, str):
                raise TabularError(f"{eido_id}/{kind}: cell {k!r} must be a string, got {type(v).__name__}")
            attrs[k] = v
        return cls(kind, eido_id, cid, attrs)


# -- flatten -----------------------------------------------------------------------

def _cell(spec: FieldSpec, value: Any) -> str:
    if spec.kind == "instant":
        return format_instant(value)
    if spec.kind == "geometry":
        return to_wkt(value)
    if spec.kind == "float":
        return repr(value)
    return str(value)


def _attributes(obj: Any, specs: Sequence[FieldSpec]) -> dict[str, str]:
    attrs = {}
    for spec in specs:
        value = getattr(obj, spec.attr)
        if value is not None:
            attrs[spec.key] = _cell(spec, value)
    return attrs


def flatten(doc: EidoDocument) -> list[FeatureRow]:
    incident_attrs = _attributes(doc, _DOC_COLUMNS)
    incident_attrs.update(_attributes(doc.incident, IncidentComponent.SCHEMA))
    if doc.extras:
        incident_attrs["documentExtras"] = canonical_json(doc.extras)
    if doc.incident.extras:
        incident_attrs["extras"] = canonical_json(doc.incident.extras)
    rows = [FeatureRow(INCIDENT, doc.eido_id, INCIDENT_COMPONENT_ID, incident_attrs)]
    for kind, (attr, _, cls) in _LIST_KINDS.items():
        id_spec = cls.SCHEMA[0]
        for comp in getattr(doc, attr):
            attrs = _attributes(comp, cls.SCHEMA[1:])
            if comp.extras:
                attrs["extras"] = canonical_json(comp.extras)
            rows.append(FeatureRow(kind, doc.eido_id, getattr(comp, id_spec.attr), attrs))
    return rows


# -- compose -----------------------------------------------------------------------

def _typed(spec: FieldSpec, text: str, where: str) -> Any:
    try:
        if spec.kind == "int":
            return int(text)
        if spec.kind == "float":
            return float(text)
        if spec.kind == "geometry":
            return geometry_to_dict(from_wkt(text))
    except (ValueError, GeometryError) as exc:
        raise TabularError(f"{where}: bad {spec.key} value {text!r} ({exc})") from None
    return text  # strings and ISO timestamps are validated by the document model


def _json_cell(text: str, where: str) -> dict:
    try:
        value = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TabularError(f"{where}: extras cell is not JSON ({exc})") from None
    if not isinstance(value, dict):
        raise TabularError(f"{where}: extras cell must hold a JSON object")
    return value


def compose(rows: Iterable[FeatureRow]) -> list[EidoDocument]:
    """Merge rows by eidoId into validated documents, in first-appearance order."""
    groups: dict[str, dict[str, dict[str, dict[str, str]]]] = {}
    for row in rows:
        if row.feature_kind not in FEATURE_KINDS:
            raise TabularError(f"unknown feature kind {row.feature_kind!r}")
        group = groups.setdefault(row.eido_id, {k: {} for k in FEATURE_KINDS})
        comps = group[row.feature_kind]
        if row.feature_kind == INCIDENT:
            cid = INCIDENT_COMPONENT_ID
        elif row.component_id:
            cid = row.component_id
        else:
            ordinal = len(comps) + 1
            while f"{row.feature_kind}-{ordinal}" in comps:
                ordinal += 1
            cid = f"{row.feature_kind}-{ordinal}"
        merged = comps.setdefault(cid, {})
        for column, value in row.attributes.items():
            if column in merged and merged[column] != value:
                raise ConflictError(row.eido_id, row.feature_kind, cid, column, merged[column], value)
            merged[column] = value

    docs = []
    for eido_id, group in groups.items():
        for kind in _LIST_KINDS:
            for cid, attrs in group[kind].items():
                for column, target in link_targets(kind).items():
                    value = attrs.get(column)
                    if value is not None and value not in group[target]:
                        raise DanglingLinkError(eido_id, kind, cid, column, value)
        docs.append(_build(eido_id, group))
    return docs


def _build(eido_id: str, group: dict[str, dict[str, dict[str, str]]]) -> EidoDocument:
    if INCIDENT_COMPONENT_ID not in group[INCIDENT]:
        raise TabularError(f"{eido_id}: no incident row (issuedTimestamp is required)")
    inc_attrs = dict(group[INCIDENT][INCIDENT_COMPONENT_ID])
    where = f"{eido_id}/incident"
    data: dict[str, Any] = {}
    if "documentExtras" in inc_attrs:
        data.update(_json_cell(inc_attrs.pop("documentExtras"), where))
    data["eidoId"] = eido_id
    incident: dict[str, Any] = {}
    if "extras" in inc_attrs:
        incident.update(_json_cell(inc_attrs.pop("extras"), where))
    for spec in _DOC_COLUMNS:
        if spec.key in inc_attrs:
            data[spec.key] = inc_attrs.pop(spec.key)
    for spec in IncidentComponent.SCHEMA:
        if spec.key in inc_attrs:
            incident[spec.key] = _typed(spec, inc_attrs.pop(spec.key), where)
    if inc_attrs:
        raise TabularError(f"{where}: unknown columns {sorted(inc_attrs)}")
    data["incidentComponent"] = incident

    for kind, (_, key, cls) in _LIST_KINDS.items():
        items = []
        id_spec = cls.SCHEMA[0]
        for cid, attrs in group[kind].items():
            attrs = dict(attrs)
            where = f"{eido_id}/{kind}/{cid}"
            comp: dict[str, Any] = {}
            if "extras" in attrs:
                comp.update(_json_cell(attrs.pop("extras"), where))
            comp[id_spec.key] = cid
            for spec in cls.SCHEMA[1:]:
                if spec.key in attrs:
                    comp[spec.key] = _typed(spec, attrs.pop(spec.key), where)
            if attrs:
                raise TabularError(f"{where}: unknown columns {sorted(attrs)}")
            items.append(comp)
        if items:
            data[key] = items
    try:
        return document_from_dict(data)
    except EidoError as exc:
        raise TabularError(f"{eido_id}: composed document is invalid: {exc}") from exc


# -- files ---------------------------------------------------------------------------

def write_csv_dir(rows: Sequence[FeatureRow], out_dir: str | Path) -> dict:
    """One ``<kind>.csv`` per kind present plus ``manifest.json``; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    counts = Counter(r.feature_kind for r in rows)
    files = []
    for kind in FEATURE_KINDS:
        if not counts[kind]:
            continue
        name = f"{kind}.csv"
        header = ["eidoId", "componentId"] + kind_columns(kind)
        with open(out / name, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=header, extrasaction="raise")
            writer.writeheader()
            for r in rows:
                if r.feature_kind == kind:
                    writer.writerow({"eidoId": r.eido_id, "componentId": r.component_id or "", **r.attributes})
        files.append({"featureKind": kind, "file": name, "rows": counts[kind]})
    manifest = {"format": "csv", "files": files}
    (out / "manifest.json").write_text(canonical_json(manifest) + "\n", encoding="utf-8")
    return manifest


def write_jsonl(rows: Iterable[FeatureRow], fh: IO[str]) -> int:
    n = 0
    for r in rows:
        fh.write(canonical_json(r.to_flat()) + "\n")
        n += 1
    return n


def _read_csv(path: Path, kind: str) -> list[FeatureRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [FeatureRow.from_flat(rec, kind) for rec in csv.DictReader(fh)]


def read_rows(path: str | Path) -> list[FeatureRow]:
    """Rows from an export directory (manifest or ``<kind>.csv`` files) or a JSON-lines file."""
    path = Path(path)
    if path.is_dir():
        manifest = path / "manifest.json"
        if manifest.exists():
            entries = json.loads(manifest.read_text("utf-8"))["files"]
            pairs = [(path / e["file"], e["featureKind"]) for e in entries]
        else:
            pairs = [(path / f"{k}.csv", k) for k in FEATURE_KINDS if (path / f"{k}.csv").exists()]
        rows: list[FeatureRow] = []
        for file, kind in pairs:
            rows.extend(_read_csv(file, kind))
        return rows
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TabularError(f"{path}:{lineno}: {exc}") from None
            rows.append(FeatureRow.from_flat(obj))
    return rows

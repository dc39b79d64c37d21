"""Composite incident view derived on demand from linked documents.

Nothing here is stored; the view is recomputed from the incident's linked
documents every time and each narrative entry names its source document.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from typing import Mapping

from .correlator import IncidentContext
from .geo import geometry_to_dict
from .model import EidoDocument, LocationComponent, component_to_dict, format_instant


class DanglingEidoError(LookupError):
    """A linked document id is missing from the store."""


@dataclass(frozen=True)
class NarrativeEntry:
    timestamp: datetime
    source_eido_id: str
    note_id: str
    text: str


@dataclass(frozen=True)
class CompositeView:
    incident_id: str
    units: frozenset[str]
    narrative: tuple[NarrativeEntry, ...]
    current_status: str | None
    current_type: str | None
    locations: tuple[LocationComponent, ...]
    contributing_eido_ids: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "incidentId": self.incident_id,
            "units": sorted(self.units),
            "narrative": [
                {
                    "timestamp": format_instant(e.timestamp),
                    "sourceEidoId": e.source_eido_id,
                    "noteId": e.note_id,
                    "text": e.text,
                }
                for e in self.narrative
            ],
            "currentStatus": self.current_status,
            "currentType": self.current_type,
            "locations": [component_to_dict(loc) for loc in self.locations],
            "contributingEidoIds": list(self.contributing_eido_ids),
        }


def _location_key(loc: LocationComponent) -> tuple:
    geom = None if loc.geometry is None else repr(geometry_to_dict(loc.geometry))
    return geom, loc.civic_address_text, loc.description_text


def _latest_value(docs: list[EidoDocument], attr: str) -> str | None:
    # greatest issuedTimestamp wins; equal timestamps fall to the later arrival
    best = None
    for arrival, doc in enumerate(docs):
        value = getattr(doc.incident, attr)
        if value is None:
            continue
        key = (doc.issued, arrival)
        if best is None or key >= best[0]:
            best = (key, value)
    return None if best is None else best[1]


def derive_composite(incident: IncidentContext, docs: Mapping[str, EidoDocument]) -> CompositeView:
    linked: list[EidoDocument] = []
    for eido_id in incident.linked_eido_ids:
        try:
            linked.append(docs[eido_id])
        except KeyError:
            raise DanglingEidoError(f"{incident.incident_id}: linked document {eido_id!r} not in store") from None

    units = frozenset().union(*(d.unit_identifiers for d in linked))

    entries = []
    for arrival, doc in enumerate(linked):
        for note in doc.notes:
            entries.append((note.timestamp, arrival, note.note_id,
                            NarrativeEntry(note.timestamp, doc.eido_id, note.note_id, note.comments)))
    entries.sort(key=lambda e: e[:3])

    seen: set[tuple] = set()
    locations = []
    for doc in linked:
        for loc in doc.locations:
            key = _location_key(loc)
            if key not in seen:
                seen.add(key)
                locations.append(loc)

    return CompositeView(
        incident_id=incident.incident_id,
        units=units,
        narrative=tuple(e[3] for e in entries),
        current_status=_latest_value(linked, "status"),
        current_type=_latest_value(linked, "type_registry_text"),
        locations=tuple(locations),
        contributing_eido_ids=tuple(incident.linked_eido_ids),
    )

"""Glue between plain test fixtures and eidoflow objects."""

from __future__ import annotations

from datetime import timedelta
from pathlib import Path

from eidoflow.correlator import CorrelationConfig, HashedVectorizer, IncidentContext
from eidoflow.model import EidoDocument, descriptive_text, document_from_dict, parse_document

from gen import BASE

FIXTURES = Path(__file__).parent / "fixtures"
VECTORIZER = HashedVectorizer()


def fixture_doc(name: str) -> EidoDocument:
    return parse_document((FIXTURES / name).read_text("utf-8"))


def member_document(eido_id: str, member: dict) -> EidoDocument:
    locs = [{"locationId": f"p{i}", "geometry": {"type": "Point", "coordinates": [lon, lat]}}
            for i, (lat, lon) in enumerate(member["points"])]
    locs += [{"locationId": f"g{i}", "geometry": {"type": "Polygon", "coordinates": [[[lo, la] for la, lo in ring]]}}
             for i, ring in enumerate(member["polygons"])]
    data: dict = {
        "eidoId": eido_id,
        "issuedTimestamp": (BASE + timedelta(seconds=member["t"])).isoformat(),
        "incidentComponent": {},
    }
    if locs:
        data["locationComponent"] = locs
    if member["text"]:
        data["notesComponent"] = [{"noteId": "n", "notesActionComments": member["text"],
                                   "noteTimestamp": data["issuedTimestamp"]}]
    return document_from_dict(data)


def vector(doc: EidoDocument):
    return VECTORIZER(descriptive_text(doc))


def build_incident(incident_id: str, members: list[dict]) -> IncidentContext:
    docs = [member_document(f"{incident_id}/{i}", m) for i, m in enumerate(members)]
    ctx = IncidentContext.start(incident_id, docs[0], vector(docs[0]))
    for d in docs[1:]:
        ctx = ctx.link(d, vector(d))
    return ctx


def engine_inputs(fixture: dict):
    """(new document, its vector, incidents, ungated config) for a score fixture."""
    new = member_document("new", fixture["new"])
    incidents = [build_incident(inc["id"], inc["members"]) for inc in fixture["incidents"]]
    w = fixture["weights"]
    cfg = CorrelationConfig(w_t=w[0], w_g=w[1], w_s=w[2], tau=fixture["tau"],
                            strict_missing=fixture["strict_missing"]).ungated()
    return new, vector(new), incidents, cfg

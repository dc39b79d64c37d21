"""Append-only JSON-lines event log of ingested documents and incident links.

Each line is one canonical-JSON record ``{sequence, kind, payload, recordedAt}``.
Sequences start at 1 and increase by exactly 1.  A final line without a
terminating newline is a torn write: readers ignore it and the writer
truncates it before appending.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Iterator

from .correlator import (
    CorrelationConfig,
    Decision,
    IncidentContext,
    IncidentTracker,
    Vectorizer,
    decision_record,
)
from .model import EidoDocument, canonical_json, document_from_dict, document_to_dict, format_instant, parse_instant

logger = logging.getLogger(__name__)

EIDO_INGESTED = "EidoIngested"
INCIDENT_CREATED = "IncidentCreated"
EIDO_LINKED = "EidoLinked"
KINDS = (EIDO_INGESTED, INCIDENT_CREATED, EIDO_LINKED)


class IntegrityError(RuntimeError):
    """The log is not a valid gap-free record sequence."""


class DuplicateEidoError(ValueError):
    pass


@dataclass(frozen=True)
class EventLogRecord:
    sequence: int
    kind: str
    payload: dict
    recorded_at: str

    def to_line(self) -> str:
        return canonical_json({
            "sequence": self.sequence,
            "kind": self.kind,
            "payload": self.payload,
            "recordedAt": self.recorded_at,
        })


def _parse_line(line: str, lineno: int) -> EventLogRecord:
    try:
        raw = json.loads(line)
        rec = EventLogRecord(int(raw["sequence"]), raw["kind"], raw["payload"], raw["recordedAt"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise IntegrityError(f"line {lineno}: unreadable record ({exc})") from None
    if rec.kind not in KINDS:
        raise IntegrityError(f"line {lineno}: unknown record kind {rec.kind!r}")
    if not isinstance(rec.payload, dict):
        raise IntegrityError(f"line {lineno}: payload must be an object")
    return rec


def iter_records(path: str | Path) -> Iterator[EventLogRecord]:
    """Committed records in order; raises :class:`IntegrityError` on gaps or garbage."""
    path = Path(path)
    if not path.exists():
        return
    expected = 1
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.endswith("\n"):
                logger.warning("%s: ignoring torn final line %d", path, lineno)
                return
            rec = _parse_line(line, lineno)
            if rec.sequence != expected:
                raise IntegrityError(
                    f"sequence gap at line {lineno}: expected {expected}, found {rec.sequence}")
            expected += 1
            yield rec


def read_records(path: str | Path) -> list[EventLogRecord]:
    return list(iter_records(path))


def check_log(path: str | Path) -> tuple[bool, str]:
    """(intact, message).  A torn trailing line counts as corruption here."""
    path = Path(path)
    try:
        records = read_records(path)
    except IntegrityError as exc:
        return False, str(exc)
    if path.exists():
        data = path.read_bytes()
        if data and not data.endswith(b"\n"):
            return False, f"torn final record after sequence {len(records)}"
    try:
        snapshot(records)
    except IntegrityError as exc:
        return False, str(exc)
    return True, f"{len(records)} records intact"


class EventLog:
    """Single-writer appender."""

    def __init__(self, path: str | Path, fsync: str = "always"):
        if fsync not in ("always", "never"):
            raise ValueError(f"fsync policy must be 'always' or 'never', got {fsync!r}")
        self.path = Path(path)
        self.fsync = fsync
        self._lock = threading.Lock()
        self._truncate_torn_tail()
        records = read_records(self.path)
        self._last = records[-1].sequence if records else 0

    def _truncate_torn_tail(self) -> None:
        if not self.path.exists():
            return
        data = self.path.read_bytes()
        if data and not data.endswith(b"\n"):
            keep = data.rfind(b"\n") + 1
            logger.warning("%s: truncating torn tail of %d bytes", self.path, len(data) - keep)
            with open(self.path, "r+b") as fh:
                fh.truncate(keep)

    @property
    def last_sequence(self) -> int:
        return self._last

    def append(self, kind: str, payload: dict, recorded_at: str) -> int:
        if kind not in KINDS:
            raise ValueError(f"unknown record kind {kind!r}")
        with self._lock:
            rec = EventLogRecord(self._last + 1, kind, payload, recorded_at)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(rec.to_line() + "\n")
                fh.flush()
                if self.fsync == "always":
                    os.fsync(fh.fileno())
            self._last = rec.sequence
            return rec.sequence


# -- decisions as records ----------------------------------------------------------

def decision_events(doc: EidoDocument, decision: Decision) -> list[tuple[str, dict]]:
    """The records (after EidoIngested) that commit ``decision`` for ``doc``."""
    assert decision.incident_id is not None
    if decision.linked:
        return [(EIDO_LINKED, {
            "eidoId": doc.eido_id,
            "incidentId": decision.incident_id,
            "breakdown": decision.ranked[0].to_dict(),
        })]
    return [
        (INCIDENT_CREATED, {"incidentId": decision.incident_id, "createdAt": format_instant(doc.issued)}),
        (EIDO_LINKED, {"eidoId": doc.eido_id, "incidentId": decision.incident_id, "breakdown": None}),
    ]


# -- snapshot ----------------------------------------------------------------------

@dataclass
class Snapshot:
    incidents: dict[str, IncidentContext] = field(default_factory=dict)
    documents: dict[str, EidoDocument] = field(default_factory=dict)
    incident_counter: int = 0


def snapshot(records: Iterable[EventLogRecord], vectorizer: Vectorizer | None = None) -> Snapshot:
    """Fold records into incidents and documents.

    Incidents created but not yet linked (a log cut between the two records)
    are left out, so every truncation at a record boundary is a valid state.
    """
    tracker = IncidentTracker(CorrelationConfig(), vectorizer)
    documents: dict[str, EidoDocument] = {}
    pending: dict[str, Any] = {}
    incidents: dict[str, IncidentContext] = {}
    counter = 0
    for rec in records:
        p = rec.payload
        try:
            if rec.kind == EIDO_INGESTED:
                doc = document_from_dict(p["document"])
                if doc.eido_id in documents:
                    raise IntegrityError(f"sequence {rec.sequence}: document {doc.eido_id!r} ingested twice")
                documents[doc.eido_id] = doc
            elif rec.kind == INCIDENT_CREATED:
                iid = p["incidentId"]
                if iid in incidents or iid in pending:
                    raise IntegrityError(f"sequence {rec.sequence}: incident {iid!r} created twice")
                pending[iid] = parse_instant(p["createdAt"])
                counter += 1
            else:
                eid, iid = p["eidoId"], p["incidentId"]
                if eid not in documents:
                    raise IntegrityError(f"sequence {rec.sequence}: link of unknown document {eid!r}")
                doc = documents[eid]
                vec = tracker.vector(doc)
                if iid in pending:
                    created = pending.pop(iid)
                    incidents[iid] = replace(IncidentContext.start(iid, doc, vec), created_at=created)
                elif iid in incidents:
                    incidents[iid] = incidents[iid].link(doc, vec)
                else:
                    raise IntegrityError(f"sequence {rec.sequence}: link to unknown incident {iid!r}")
        except IntegrityError:
            raise
        except Exception as exc:
            raise IntegrityError(f"sequence {rec.sequence}: bad {rec.kind} payload ({exc})") from None
    return Snapshot(incidents, documents, counter)


# -- writer ------------------------------------------------------------------------

class IncidentStore:
    """Event log plus the live correlation state rebuilt from it."""

    def __init__(self, log: EventLog, cfg: CorrelationConfig, vectorizer: Vectorizer | None = None):
        self.log = log
        self.tracker = IncidentTracker(cfg, vectorizer)
        snap = snapshot(read_records(log.path), self.tracker.vectorizer)
        self.tracker.restore(snap.incidents, snap.documents, snap.incident_counter)

    @property
    def incidents(self) -> dict[str, IncidentContext]:
        return self.tracker.incidents

    @property
    def documents(self) -> dict[str, EidoDocument]:
        return self.tracker.documents

    def evaluate(self, doc: EidoDocument) -> Decision:
        return self.tracker.evaluate(doc)

    def ingest(self, doc: EidoDocument) -> Decision:
        if doc.eido_id in self.tracker.documents:
            raise DuplicateEidoError(f"document {doc.eido_id!r} is already in the store")
        vec = self.tracker.vector(doc)
        decision = self.tracker.commit(doc, self.tracker.evaluate(doc, vec), vec)
        stamp = format_instant(doc.issued)
        self.log.append(EIDO_INGESTED, {"document": document_to_dict(doc)}, stamp)
        for kind, payload in decision_events(doc, decision):
            self.log.append(kind, payload, stamp)
        return decision


# -- replay ------------------------------------------------------------------------

@dataclass
class ReplayReport:
    decisions: list[dict]
    divergence: dict | None = None

    @property
    def ok(self) -> bool:
        return self.divergence is None


def replay(
    records: Iterable[EventLogRecord],
    cfg: CorrelationConfig,
    vectorizer: Vectorizer | None = None,
) -> ReplayReport:
    """Re-run correlation over the ingested documents and compare with the log.

    Stops at the first record that differs from what correlation produces
    now, reporting its sequence number.
    """
    records = list(records)
    tracker = IncidentTracker(cfg, vectorizer)
    decisions: list[dict] = []
    i = 0
    while i < len(records):
        rec = records[i]
        if rec.kind != EIDO_INGESTED:
            return ReplayReport(decisions, {
                "sequence": rec.sequence,
                "reason": f"unexpected {rec.kind} record",
                "recorded": {"kind": rec.kind, "payload": rec.payload},
            })
        doc = document_from_dict(rec.payload["document"])
        decision = tracker.process(doc)
        decisions.append(decision_record(decision))
        i += 1
        for kind, payload in decision_events(doc, decision):
            replayed = {"kind": kind, "payload": payload}
            if i >= len(records):
                seq = records[-1].sequence + 1
                return ReplayReport(decisions, {
                    "sequence": seq, "reason": "log ends early", "replayed": replayed})
            recorded = {"kind": records[i].kind, "payload": records[i].payload}
            if canonical_json(recorded) != canonical_json(replayed):
                return ReplayReport(decisions, {
                    "sequence": records[i].sequence,
                    "reason": "recorded decision differs from replayed decision",
                    "recorded": recorded,
                    "replayed": replayed,
                })
            i += 1
    return ReplayReport(decisions)


import json
import random

import pytest

from eidoflow.correlator import CorrelationConfig, IncidentTracker
from eidoflow.model import document_from_dict, document_to_dict
from eidoflow.store import (
    EIDO_INGESTED,
    EIDO_LINKED,
    INCIDENT_CREATED,
    DuplicateEidoError,
    EventLog,
    IncidentStore,
    IntegrityError,
    check_log,
    read_records,
    replay,
    snapshot,
)

import gen
from helpers import FIXTURES, fixture_doc
from eidoflow.geocoder import SpatialIndex, enrich_document, load_gazetteer

INDEX = SpatialIndex(load_gazetteer(FIXTURES / "gazetteer.jsonl"))


def case_store(tmp_path, cfg=None):
    store = IncidentStore(EventLog(tmp_path / "log.jsonl", fsync="never"), cfg or CorrelationConfig())
    for name in ("nws_flood_warning.json", "news_report.json"):
        store.ingest(enrich_document(fixture_doc(name), INDEX))
    return store


def test_append_sequences_and_reopen(tmp_path):
    log = EventLog(tmp_path / "l.jsonl")
    assert log.append(INCIDENT_CREATED, {"incidentId": "INC-000001", "createdAt": "2026-01-01T00:00:00Z"}, "t") == 1
    assert log.append(INCIDENT_CREATED, {"incidentId": "INC-000002", "createdAt": "2026-01-01T00:00:00Z"}, "t") == 2
    assert EventLog(tmp_path / "l.jsonl").append(
        INCIDENT_CREATED, {"incidentId": "INC-000003", "createdAt": "2026-01-01T00:00:00Z"}, "t") == 3


def test_unknown_kind_rejected(tmp_path):
    with pytest.raises(ValueError):
        EventLog(tmp_path / "l.jsonl").append("Deleted", {}, "t")


def test_empty_log_is_empty_store(tmp_path):
    snap = snapshot(read_records(tmp_path / "missing.jsonl"))
    assert snap.incidents == {} and snap.documents == {}


def test_case_study_log_layout(tmp_path):
    case_store(tmp_path)
    kinds = [r.kind for r in read_records(tmp_path / "log.jsonl")]
    assert kinds == [EIDO_INGESTED, INCIDENT_CREATED, EIDO_LINKED, EIDO_INGESTED, EIDO_LINKED]
    snap = snapshot(read_records(tmp_path / "log.jsonl"))
    assert list(snap.incidents) == ["INC-000001"]
    assert len(snap.incidents["INC-000001"].linked_eido_ids) == 2


def test_reopen_restores_state(tmp_path):
    store = case_store(tmp_path, CorrelationConfig(tau=1.0))
    again = IncidentStore(EventLog(tmp_path / "log.jsonl"), CorrelationConfig(tau=1.0))
    assert set(again.incidents) == set(store.incidents)
    data = document_to_dict(fixture_doc("news_report.json"))
    doc = document_from_dict({**data, "eidoId": "other", "issuedTimestamp": "2026-03-01T00:00:00Z"})
    assert again.ingest(doc).incident_id == "INC-000003"


def test_duplicate_ingest_rejected_without_append(tmp_path):
    store = case_store(tmp_path)
    before = (tmp_path / "log.jsonl").read_bytes()
    with pytest.raises(DuplicateEidoError):
        store.ingest(fixture_doc("news_report.json"))
    assert (tmp_path / "log.jsonl").read_bytes() == before


def test_torn_tail_ignored_then_truncated(tmp_path):
    case_store(tmp_path)
    path = tmp_path / "log.jsonl"
    with open(path, "a") as fh:
        fh.write('{"sequence": 6, "kind": "Eido')
    assert len(read_records(path)) == 5
    ok, msg = check_log(path)
    assert not ok and "torn" in msg
    log = EventLog(path)
    assert log.last_sequence == 5 and check_log(path)[0]


def test_sequence_gap_detected(tmp_path):
    case_store(tmp_path)
    path = tmp_path / "log.jsonl"
    lines = path.read_text().splitlines(keepends=True)
    path.write_text("".join(lines[:2] + lines[3:]))
    with pytest.raises(IntegrityError, match="sequence gap"):
        read_records(path)
    assert check_log(path)[0] is False


def test_every_prefix_is_a_valid_snapshot(tmp_path):
    store = IncidentStore(EventLog(tmp_path / "log.jsonl", fsync="never"), CorrelationConfig())
    rng = random.Random(1)
    for _ in range(8):
        store.ingest(document_from_dict(gen.document(rng)))
    records = read_records(tmp_path / "log.jsonl")
    for n in range(len(records) + 1):
        snap = snapshot(records[:n])
        for inc in snap.incidents.values():
            assert all(e in snap.documents for e in inc.linked_eido_ids)


def test_snapshot_equals_brute_fold(tmp_path):
    store = IncidentStore(EventLog(tmp_path / "log.jsonl", fsync="never"), CorrelationConfig(tau=0.3))
    rng = random.Random(5)
    for _ in range(15):
        store.ingest(document_from_dict(gen.document(rng)))
    links: dict[str, list[str]] = {}
    for line in (tmp_path / "log.jsonl").read_text().splitlines():
        rec = json.loads(line)
        if rec["kind"] == "EidoLinked":
            links.setdefault(rec["payload"]["incidentId"], []).append(rec["payload"]["eidoId"])
    snap = snapshot(read_records(tmp_path / "log.jsonl"))
    assert {k: list(v.linked_eido_ids) for k, v in snap.incidents.items()} == links


def test_replay_matches_and_is_repeatable(tmp_path):
    case_store(tmp_path)
    records = read_records(tmp_path / "log.jsonl")
    first = replay(records, CorrelationConfig())
    assert first.ok and [d["decision"] for d in first.decisions] == ["NewIncident", "LinkTo"]
    assert replay(records, CorrelationConfig()).decisions == first.decisions
    assert replay([], CorrelationConfig()).decisions == []


def test_replay_reports_divergent_sequence(tmp_path):
    case_store(tmp_path)
    report = replay(read_records(tmp_path / "log.jsonl"), CorrelationConfig(tau=0.9))
    assert not report.ok and report.divergence["sequence"] == 5


def test_replay_detects_hand_corrupted_link(tmp_path):
    case_store(tmp_path)
    path = tmp_path / "log.jsonl"
    lines = path.read_text().splitlines()
    rec = json.loads(lines[4])
    rec["payload"]["breakdown"]["sigma"] = 0.99
    lines[4] = json.dumps(rec)
    path.write_text("\n".join(lines) + "\n")
    report = replay(read_records(path), CorrelationConfig())
    assert report.divergence["sequence"] == 5


def test_recorded_decisions_match_tracker(tmp_path):
    store = case_store(tmp_path)
    tracker = IncidentTracker(CorrelationConfig())
    for eid in ("eido-nws-sgx-flw-20260101-1220", "eido-news-sdut-20260101-1345"):
        tracker.process(store.documents[eid])
    assert tracker.incident_of == store.tracker.incident_of

from datetime import datetime, timedelta

import pytest
from hypothesis import given, settings, strategies as st

from eidoflow.model import document_from_dict, document_to_dict
from eidoflow.transform import (
    EidoTemplate,
    MappingRegistry,
    RegistryFileError,
    RuleBasedExtractor,
    TimestampSynthesisError,
    TransformError,
    TransformOptions,
    Unmapped,
    load_bindings,
    load_templates,
    map_code,
    parse_duration,
    read_cad_csv,
    synthesize_timestamp,
    transform_record,
    transform_stream,
)

from helpers import FIXTURES

REGISTRY = MappingRegistry.load()
TEMPLATES = load_templates()
BINDINGS = load_bindings()
EXTRACTOR = RuleBasedExtractor(["Balboa Park", "San Diego River"])
OPTS = TransformOptions(default_year=2026, utc_offset="-08:00")


def run(rec, opts=OPTS):
    return transform_record(rec, REGISTRY, TEMPLATES, EXTRACTOR, BINDINGS, opts)


BASE_RECORD = {
    "Incident Type": "211A",
    "Priority Level": "P1",
    "Response Month": "1",
    "Response Day": "1",
    "Response Hour": "12",
    "Sector / Beat": "Sector 4",
    "Call Disposition": "ADV",
}


# -- timestamp synthesis --

def test_synthesize_full():
    ts = synthesize_timestamp({"year": 2026, "month": 1, "day": 1, "hour": 12, "minute": 20, "second": 0,
                               "utcOffset": "-08:00"})
    assert ts.isoformat() == "2026-01-01T12:20:00-08:00"


def test_synthesize_defaults_time_of_day():
    ts = synthesize_timestamp({"year": 2026, "month": 1, "day": 1, "utcOffset": "-08:00"})
    assert ts.isoformat() == "2026-01-01T00:00:00-08:00"


def test_synthesize_month_name():
    ts = synthesize_timestamp({"year": "2026", "month": "March", "day": "5", "utcOffset": "Z"})
    assert ts.isoformat() == "2026-03-05T00:00:00+00:00"


@pytest.mark.parametrize("parts", [
    {"year": 2026, "month": 2, "day": 30, "utcOffset": "-08:00"},
    {"year": 2026, "month": 1, "utcOffset": "-08:00"},
    {"year": 2026, "month": 1, "day": 1},
    {"year": 2026, "month": 1, "day": 1, "hour": 25, "utcOffset": "+00:00"},
    {"year": 2026, "month": 1, "day": 1, "utcOffset": "+25:00"},
])
def test_synthesize_errors(parts):
    with pytest.raises(TimestampSynthesisError):
        synthesize_timestamp(parts)


# -- code mapping --

@pytest.mark.parametrize("kind,code,expected", [
    ("incidentType", "211A", "ROBBERY-ARMED"),
    ("incidentType", "  211a ", "ROBBERY-ARMED"),
    ("priority", "P1", 1),
    ("priority", "Code 3", 1),
    ("priority", "code  3", 1),
    ("disposition", "ADV", "Advised"),
])
def test_map_code(kind, code, expected):
    assert map_code(kind, code, REGISTRY) == expected


def test_unknown_code_is_marked_not_dropped():
    assert map_code("disposition", "RTF", REGISTRY) == Unmapped("disposition", "RTF")


def test_empty_code_rejected():
    with pytest.raises(ValueError):
        map_code("priority", "   ", REGISTRY)


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(["incidentType", "priority", "disposition"]), st.text(min_size=1).filter(str.strip))
def test_mapping_is_total(kind, code):
    out = map_code(kind, code, REGISTRY)
    if isinstance(out, Unmapped):
        assert out.code == code
    elif kind == "priority":
        assert 1 <= out <= 5


@pytest.mark.parametrize("line", [
    "priority\tP9\t9",
    "priority\tPX\thigh",
    "incidentType\tZZ\tNot.A.Term",
    "severity\tX\t1",
    "priority\tP1",
])
def test_bad_registry_lines(line):
    with pytest.raises(RegistryFileError):
        MappingRegistry.from_lines([line])


def test_template_with_unknown_path_rejected(tmp_path):
    path = tmp_path / "t.json"
    path.write_text('[{"templateId": "x", "appliesToTypes": ["*"], "requiredFields": ["incidentComponent.nope"]}]')
    with pytest.raises(RegistryFileError):
        load_templates(path)


# -- CAD mapping rows --

def test_mapping_type_priority_beat_disposition():
    doc = run(BASE_RECORD).document
    assert doc.incident.type_registry_text == "ROBBERY-ARMED"
    assert doc.incident.priority == 1
    assert doc.incident.disposition_text == "Advised"
    assert "Sector 4" in doc.locations[0].description_text
    assert doc.calls[0].start_timestamp.isoformat() == "2026-01-01T12:00:00-08:00"


def test_beat_appended_to_existing_description():
    doc = run({**BASE_RECORD, "Location": "5th and Market"}).document
    assert doc.locations[0].description_text == "5th and Market; Sector / Beat: Sector 4"


def test_problem_description_copied_and_entities_extracted():
    text = "Suspect fled toward Balboa Park. Officer Ramirez on scene."
    doc = run({**BASE_RECORD, "Initial Problem Description": text}).document
    assert doc.notes[0].comments == text
    ents = doc.notes[0].extras["extractedEntities"]
    assert {"kind": "location", "value": "Balboa Park", "span": [20, 31]} in ents
    assert [p.name_text for p in doc.persons] == ["Ramirez"]
    for e in ents:
        assert text[e["span"][0]:e["span"][1]] == e["value"]


def test_first_unit_arrived_creates_status():
    doc = run({**BASE_RECORD, "Unit": "E17", "First Unit Arrived": "2026-01-01T12:09:00-08:00"}).document
    assert [r.unit_identifier for r in doc.resources] == ["E17"]
    assert len(doc.resource_statuses) == 1
    st_ = doc.resource_statuses[0]
    assert st_.resource_ref == doc.resources[0].resource_id
    assert st_.status_time.isoformat() == "2026-01-01T12:09:00-08:00"


def test_time_on_scene_start_end_pair():
    doc = run({**BASE_RECORD, "Unit": "E17", "First Unit Arrived": "10:00", "Unit Time on Scene": "45 min",
               "Response Hour": "9"}).document
    start, end = doc.resource_statuses
    assert start.status_time == datetime.fromisoformat("2026-01-01T10:00:00-08:00")
    assert end.status_time == datetime.fromisoformat("2026-01-01T10:45:00-08:00")
    assert end.status_time - start.status_time == timedelta(minutes=45)


def test_arrival_clock_rolls_past_midnight():
    doc = run({**BASE_RECORD, "Response Hour": "23", "Unit": "E1", "First Unit Arrived": "00:10"}).document
    assert doc.resource_statuses[0].status_time.isoformat() == "2026-01-02T00:10:00-08:00"


@pytest.mark.parametrize("text,expected", [
    ("0:42:30", timedelta(minutes=42, seconds=30)),
    ("25 min", timedelta(minutes=25)),
    ("7", timedelta(minutes=7)),
])
def test_parse_duration(text, expected):
    assert parse_duration(text) == expected


def test_parse_duration_rejects_garbage():
    with pytest.raises(TransformError):
        parse_duration("a while")


def test_unmapped_code_kept_with_warning():
    res = run({**BASE_RECORD, "Call Disposition": "RTF"})
    assert res.document.incident.extras["unmappedCodes"] == {"disposition": "RTF"}
    assert any(w.code == "unmapped-code" for w in res.warnings)


def test_strict_mode_rejects_unmapped():
    with pytest.raises(TransformError):
        run({**BASE_RECORD, "Call Disposition": "RTF"}, TransformOptions(default_year=2026, strict=True))


def test_unbound_columns_preserved_as_legacy_fields():
    doc = run({**BASE_RECORD, "Dispatcher Initials": "JK"}).document
    assert doc.extras["legacyFields"] == {"Dispatcher Initials": "JK"}


def test_template_missing_field_warned_exactly_once():
    rec = {k: v for k, v in BASE_RECORD.items() if k != "Priority Level"}
    res = run(rec)
    missing = [w for w in res.warnings if w.code == "missing-required-field"]
    assert [w.field for w in missing] == ["incidentComponent.incidentCommonPriorityNumber"]


def test_template_applies_wildcard():
    t = EidoTemplate("d", frozenset({"*"}))
    assert t.applies(None) and t.applies("Anything")


def test_missing_mandatory_date_is_error():
    with pytest.raises(TransformError):
        run({"Incident Type": "211A"}, TransformOptions())


def test_output_always_validates():
    res = run({**BASE_RECORD, "Unit": "E17", "First Unit Arrived": "12:05", "Unit Time on Scene": "0:10:00"})
    assert document_from_dict(document_to_dict(res.document)) == res.document


def test_transform_is_deterministic():
    assert run(BASE_RECORD).document == run(BASE_RECORD).document
    assert run(BASE_RECORD).document.eido_id == run(dict(BASE_RECORD)).document.eido_id


# -- stream --

def test_stream_preserves_positions_and_reports_errors():
    bad = {"Incident Type": "211A"}
    items = list(transform_stream([BASE_RECORD, bad, {**BASE_RECORD, "Response Day": "2"}],
                                  REGISTRY, TEMPLATES, EXTRACTOR, BINDINGS, OPTS))
    assert [i.position for i in items] == [0, 1, 2]
    assert [i.ok for i in items] == [True, False, True]


def test_stream_empty():
    assert list(transform_stream([], REGISTRY, TEMPLATES, EXTRACTOR, BINDINGS, OPTS)) == []


def test_csv_reader_and_sample_file():
    recs = list(read_cad_csv(FIXTURES / "cad_sample.csv"))
    assert len(recs) == 2 and recs[0]["Incident Type"] == "211A"
    docs = [run(r).document for r in recs]
    assert docs[0].resource_statuses[1].status_time - docs[0].resource_statuses[0].status_time == \
        timedelta(minutes=42, seconds=30)


def test_csv_duplicate_headers_rejected(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("A,A\n1,2\n")
    with pytest.raises(TransformError):
        list(read_cad_csv(p))

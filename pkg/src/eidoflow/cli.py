"""Command-line entry point: ``eidoflow <command> [options]``.

Exit codes: 0 ok, 1 configuration error, 2 corrupt log, 3 unknown incident,
4 tabular error, 5 replay divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Iterator, Sequence

from .composite import DanglingEidoError, derive_composite
from .config import ConfigError, PipelineConfig
from .correlator import HashedVectorizer, IncidentTracker, decision_record, score_all
from .geocoder import (
    CachingClient,
    ExternalGeocoderClient,
    OfflineFixtureClient,
    SpatialIndex,
    enrich_document,
    load_gazetteer,
)
from .model import EidoDocument, EidoError, Vocabulary, canonical_json, document_from_dict, serialize_document
from .store import (
    DuplicateEidoError,
    EventLog,
    IncidentStore,
    IntegrityError,
    check_log,
    read_records,
    replay,
    snapshot,
)
from .tabular import TabularError, compose, flatten, read_rows, write_csv_dir, write_jsonl
from .transform import (
    MappingRegistry,
    RegistryFileError,
    RuleBasedExtractor,
    TransformOptions,
    load_bindings,
    load_templates,
    read_cad_csv,
    read_cad_jsonl,
    transform_stream,
)

logger = logging.getLogger("eidoflow")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CORRUPT = 2
EXIT_UNKNOWN_INCIDENT = 3
EXIT_TABULAR = 4
EXIT_DIVERGENCE = 5

INPUT_FORMATS = ("eido", "eido-jsonl", "cad-csv", "cad-jsonl")
_EXTENSIONS = {".json": "eido", ".jsonl": "eido-jsonl", ".ndjson": "eido-jsonl", ".csv": "cad-csv"}


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _weights(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated numbers t,g,s")
    try:
        t, g, s = (float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not numbers: {text!r}") from None
    return t, g, s


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline YAML file")
    common.add_argument("--log", help="event log path (overrides config)")
    common.add_argument("--tau", type=float, help="link threshold (overrides config)")
    common.add_argument("--weights", type=_weights, help="scoring weights t,g,s before normalization")
    common.add_argument("--strict", action="store_true", default=None,
                        help="reject registry misses and incomplete CAD records")
    common.add_argument("--format", choices=INPUT_FORMATS,
                        help="input kind; default is detected from the file extension")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="eidoflow", description="EIDO transformation and incident correlation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="transform, geocode, correlate and append inputs")
    p.add_argument("inputs", nargs="*", help="EIDO JSON / JSON-lines or CAD CSV / JSON-lines files")

    p = sub.add_parser("score", parents=[common], help="print similarity breakdowns without committing")
    p.add_argument("inputs", nargs="*")

    p = sub.add_parser("composite", parents=[common], help="print the composite view of an incident")
    p.add_argument("incident_id")

    p = sub.add_parser("flatten", parents=[common], help="documents to feature rows")
    p.add_argument("input", nargs="?", help="EIDO JSON / JSON-lines file (omit with --incident)")
    p.add_argument("--incident", help="flatten the documents linked to this incident in the log")
    p.add_argument("--out", help="output directory for CSV, or a .jsonl file; JSON-lines to stdout if omitted")

    p = sub.add_parser("compose", parents=[common], help="feature rows to documents")
    p.add_argument("rows", help="export directory or JSON-lines row file")
    p.add_argument("--out", help="write documents here as JSON-lines instead of stdout")

    sub.add_parser("replay", parents=[common], help="re-run correlation over the log and compare")
    sub.add_parser("check-log", parents=[common], help="verify log integrity")
    return parser


# -- setup helpers -------------------------------------------------------------------

def _load_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config)
    return cfg.with_overrides(log=args.log, tau=args.tau, weights=args.weights, strict=args.strict)


def _require_log(cfg: PipelineConfig) -> Path:
    if cfg.log is None:
        raise _Fail(EXIT_CONFIG, "no event log configured (use --log or 'log:' in the config)")
    return cfg.log


def _vocabulary(cfg: PipelineConfig) -> Vocabulary | None:
    return Vocabulary.load(cfg.incident_types) if cfg.incident_types else None


def _geocoding(cfg: PipelineConfig) -> tuple[SpatialIndex | None, ExternalGeocoderClient | None]:
    index = SpatialIndex(load_gazetteer(cfg.gazetteer)) if cfg.gazetteer else None
    client: ExternalGeocoderClient | None = None
    if cfg.fixture_client:
        client = OfflineFixtureClient.from_file(cfg.fixture_client)
        if cfg.geocoder_cache:
            client = CachingClient(client, cfg.geocoder_cache)
    return index, client


def _detect_format(path: str, override: str | None) -> str:
    if override:
        return override
    fmt = _EXTENSIONS.get(Path(path).suffix.lower())
    if fmt is None:
        raise _Fail(EXIT_CONFIG, f"{path}: cannot tell input kind from extension; use --format")
    return fmt


class _Inputs:
    """Turns input files into documents in command-line then intra-file order."""

    def __init__(self, cfg: PipelineConfig, index: SpatialIndex | None, fmt: str | None):
        self.cfg = cfg
        self.fmt = fmt
        self.vocabulary = _vocabulary(cfg)
        self.errors = 0
        self._cad_args: tuple | None = None
        self._index = index

    def _cad(self) -> tuple:
        if self._cad_args is None:
            registry = MappingRegistry.load(self.cfg.code_mappings, self.vocabulary)
            templates = load_templates(self.cfg.templates)
            bindings = load_bindings(self.cfg.bindings)
            names = [n for e in (self._index.entries if self._index else []) for n in e.names]
            t = self.cfg.transform
            options = TransformOptions(default_year=t.default_year, utc_offset=t.utc_offset,
                                       source_descriptor=t.source_descriptor, strict=self.cfg.strict)
            self._cad_args = (registry, templates, RuleBasedExtractor(names), bindings, options)
        return self._cad_args

    def preload(self, paths: Sequence[str]) -> None:
        """Fail early (exit 1) on bad formats or registry files."""
        fmts = [_detect_format(p, self.fmt) for p in paths]
        if any(f.startswith("cad") for f in fmts):
            try:
                self._cad()
            except (RegistryFileError, ValueError, OSError) as exc:
                raise _Fail(EXIT_CONFIG, f"cannot load transformation data: {exc}") from None

    def _error(self, where: str, exc: Exception) -> None:
        self.errors += 1
        logger.error("%s: %s", where, exc)

    def documents(self, paths: Sequence[str]) -> Iterator[EidoDocument]:
        for path in paths:
            fmt = _detect_format(path, self.fmt)
            try:
                if fmt == "eido":
                    yield from self._eido_file(path)
                elif fmt == "eido-jsonl":
                    yield from self._eido_lines(path)
                else:
                    reader = read_cad_csv(path) if fmt == "cad-csv" else read_cad_jsonl(path)
                    for item in transform_stream(reader, *self._cad(), vocabulary=self.vocabulary):
                        if not item.ok:
                            self._error(f"{path} record {item.position}", ValueError(item.error))
                            continue
                        for w in item.warnings:
                            logger.warning("%s record %d: %s: %s", path, item.position, w.code, w.message)
                        assert item.document is not None
                        yield item.document
            except (OSError, ValueError) as exc:
                self._error(path, exc)

    def _parse(self, data: object, where: str) -> EidoDocument | None:
        try:
            return document_from_dict(data, vocabulary=self.vocabulary, strict=self.cfg.strict)
        except EidoError as exc:
            self._error(where, exc)
            return None

    def _eido_file(self, path: str) -> Iterator[EidoDocument]:
        data = json.loads(Path(path).read_text("utf-8"))
        items = data if isinstance(data, list) else [data]
        for i, item in enumerate(items):
            doc = self._parse(item, f"{path}[{i}]")
            if doc is not None:
                yield doc

    def _eido_lines(self, path: str) -> Iterator[EidoDocument]:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    data = json.loads(line)
                except json.JSONDecodeError as exc:
                    self._error(f"{path}:{lineno}", exc)
                    continue
                doc = self._parse(data, f"{path}:{lineno}")
                if doc is not None:
                    yield doc


def _emit(obj: dict) -> None:
    sys.stdout.write(canonical_json(obj) + "\n")


# -- commands --------------------------------------------------------------------------

def cmd_ingest(args: argparse.Namespace, cfg: PipelineConfig, *, commit: bool = True) -> int:
    log_path = _require_log(cfg)
    try:
        index, client = _geocoding(cfg)
    except (OSError, ValueError) as exc:
        raise _Fail(EXIT_CONFIG, f"cannot load geocoding data: {exc}") from None
    inputs = _Inputs(cfg, index, args.format)
    inputs.preload(args.inputs)
    log = EventLog(log_path, cfg.fsync) if commit else None
    store = IncidentStore(log, cfg.correlation) if log else None
    if store is None:
        # score: read-only view of the log
        snap = snapshot(read_records(log_path))
        tracker = IncidentTracker(cfg.correlation)
        tracker.restore(snap.incidents, snap.documents, snap.incident_counter)
    else:
        tracker = store.tracker

    count = 0
    for doc in inputs.documents(args.inputs):
        if index is not None:
            nearby = [g for inc in tracker.incidents.values() for g in inc.cached_geometries]
            doc = enrich_document(doc, index, client, cfg.geocoder, nearby)
        count += 1
        if store is None:
            vec = tracker.vector(doc)
            decision = tracker.evaluate(doc, vec)
            _emit({
                "eidoId": doc.eido_id,
                "decision": decision.kind,
                "incidentId": decision.incident_id,
                "scores": [b.to_dict() for b in score_all(doc, tracker.incidents.values(), cfg.correlation, vec)],
            })
            continue
        try:
            decision = store.ingest(doc)
            record = decision_record(decision)
        except DuplicateEidoError:
            # already stored: re-score against the current state, append nothing
            record = decision_record(store.evaluate(doc))
            record["duplicate"] = True
        _emit(record)
    logger.info("%d documents processed, %d errors", count, inputs.errors)
    if inputs.errors:
        print(f"eidoflow: {inputs.errors} input error(s); see log messages", file=sys.stderr)
    return EXIT_OK


def cmd_composite(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    snap = snapshot(read_records(_require_log(cfg)))
    incident = snap.incidents.get(args.incident_id)
    if incident is None:
        raise _Fail(EXIT_UNKNOWN_INCIDENT, f"unknown incident {args.incident_id!r}")
    try:
        view = derive_composite(incident, snap.documents)
    except DanglingEidoError as exc:
        raise _Fail(EXIT_CORRUPT, str(exc)) from None
    _emit(view.to_dict())
    return EXIT_OK


def cmd_flatten(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    if args.incident:
        snap = snapshot(read_records(_require_log(cfg)))
        incident = snap.incidents.get(args.incident)
        if incident is None:
            raise _Fail(EXIT_UNKNOWN_INCIDENT, f"unknown incident {args.incident!r}")
        docs = [snap.documents[e] for e in incident.linked_eido_ids]
    elif args.input:
        inputs = _Inputs(cfg, None, args.format or ("eido-jsonl" if args.input.endswith(".jsonl") else "eido"))
        docs = list(inputs.documents([args.input]))
        if inputs.errors:
            raise _Fail(EXIT_TABULAR, f"{args.input}: {inputs.errors} document(s) failed to parse")
    else:
        raise _Fail(EXIT_CONFIG, "flatten needs an input file or --incident")
    rows = [row for doc in docs for row in flatten(doc)]
    if args.out is None:
        write_jsonl(rows, sys.stdout)
    elif args.out.endswith(".jsonl"):
        with open(args.out, "w", encoding="utf-8") as fh:
            write_jsonl(rows, fh)
    else:
        write_csv_dir(rows, args.out)
    return EXIT_OK


def cmd_compose(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    try:
        docs = compose(read_rows(args.rows))
    except (TabularError, OSError, KeyError, json.JSONDecodeError) as exc:
        raise _Fail(EXIT_TABULAR, f"compose failed: {exc}") from None
    lines = "".join(serialize_document(d) + "\n" for d in docs)
    if args.out:
        Path(args.out).write_text(lines, encoding="utf-8")
    else:
        sys.stdout.write(lines)
    return EXIT_OK


def cmd_replay(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    log_path = _require_log(cfg)
    if not log_path.exists():
        raise _Fail(EXIT_CONFIG, f"log not found: {log_path}")
    report = replay(read_records(log_path), cfg.correlation, HashedVectorizer())
    for record in report.decisions:
        _emit(record)
    if not report.ok:
        assert report.divergence is not None
        print(f"eidoflow: replay diverges at sequence {report.divergence['sequence']}: "
              f"{canonical_json(report.divergence)}", file=sys.stderr)
        return EXIT_DIVERGENCE
    return EXIT_OK


def cmd_check_log(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    ok, message = check_log(_require_log(cfg))
    print(message)
    return EXIT_OK if ok else EXIT_CORRUPT


COMMANDS = {
    "ingest": cmd_ingest,
    "score": lambda a, c: cmd_ingest(a, c, commit=False),
    "composite": cmd_composite,
    "flatten": cmd_flatten,
    "compose": cmd_compose,
    "replay": cmd_replay,
    "check-log": cmd_check_log,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](args, cfg)
    except _Fail as exc:
        print(f"eidoflow: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"eidoflow: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrityError as exc:
        print(f"eidoflow: corrupt log: {exc}", file=sys.stderr)
        return EXIT_CORRUPT


if __name__ == "__main__":
    sys.exit(main())

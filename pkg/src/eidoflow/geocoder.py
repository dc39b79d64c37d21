"""Resolve informal place descriptions to geometry with a confidence score.

Resolution runs gazetteer lookup first, falls back to an external geocoder
client when the best local match is weak, and ranks all candidates with
incident context (type/category affinity, jurisdiction, proximity to known
incident geometry).
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import tempfile
import threading
from collections import defaultdict
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import yaml

from .correlator import phi_g
from .geo import (
    EARTH_RADIUS_M,
    Geometry,
    GeometryError,
    Point,
    bbox_of,
    geometry_distance_m,
    geometry_from_dict,
    geometry_to_dict,
    min_distance_m,
)
from .model import EidoDocument, LocationComponent

logger = logging.getLogger(__name__)

GAZETTEER = "gazetteer"
EXTERNAL = "external"

_PUNCT_RE = re.compile(r"[^\w\s]+")


def normalize_name(text: str) -> str:
    """Case-fold, strip punctuation, collapse whitespace."""
    return " ".join(_PUNCT_RE.sub(" ", text.casefold()).replace("_", " ").split())


def name_tokens(text: str) -> frozenset[str]:
    return frozenset(normalize_name(text).split())


def jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


@dataclass(frozen=True)
class GazetteerEntry:
    name: str
    geometry: Geometry
    aliases: tuple[str, ...] = ()
    category: str | None = None
    jurisdiction: str | None = None
    civic_address: str | None = None

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise ValueError("gazetteer entry name must be non-empty")

    @property
    def names(self) -> tuple[str, ...]:
        return (self.name,) + self.aliases

    @classmethod
    def from_dict(cls, data: Mapping) -> "GazetteerEntry":
        return cls(
            name=data["name"],
            geometry=geometry_from_dict(data["geometry"]),
            aliases=tuple(data.get("aliases", ())),
            category=data.get("category"),
            jurisdiction=data.get("jurisdiction"),
            civic_address=data.get("civicAddress"),
        )

    def to_dict(self) -> dict:
        out = {"name": self.name, "geometry": geometry_to_dict(self.geometry), "aliases": list(self.aliases)}
        for key, value in (("category", self.category), ("jurisdiction", self.jurisdiction),
                           ("civicAddress", self.civic_address)):
            if value is not None:
                out[key] = value
        return out


def load_gazetteer(path: str | Path) -> list[GazetteerEntry]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                entries.append(GazetteerEntry.from_dict(json.loads(line)))
            except (KeyError, ValueError, GeometryError) as exc:
                raise ValueError(f"{path}:{lineno}: bad gazetteer entry: {exc}") from None
    return entries


@dataclass(frozen=True)
class GeocodeCandidate:
    source: str  # gazetteer | external
    name: str
    geometry: Geometry
    match_score: float
    context_score: float = 0.0
    confidence: float = 0.0
    category: str | None = None
    jurisdiction: str | None = None
    civic_address: str | None = None
    entry_index: int | None = None  # position in the gazetteer for gazetteer candidates


# -- spatial index ---------------------------------------------------------------

class SpatialIndex:
    """Uniform lat/lon grid plus exact and token name indexes over a gazetteer."""

    def __init__(self, entries: Sequence[GazetteerEntry], cell_deg: float = 0.01):
        if cell_deg <= 0:
            raise ValueError("cell size must be positive")
        self.entries = list(entries)
        self.cell_deg = cell_deg
        self._ncols = max(1, round(360.0 / cell_deg))
        self.grid: dict[tuple[int, int], list[int]] = defaultdict(list)
        self.names: dict[str, list[int]] = defaultdict(list)
        self._tokens: dict[str, set[int]] = defaultdict(set)
        self._token_sets: list[list[frozenset[str]]] = []
        for idx, entry in enumerate(self.entries):
            for cell in self._cells_for_bbox(*bbox_of(entry.geometry)):
                self.grid[cell].append(idx)
            sets = []
            for n in entry.names:
                key = normalize_name(n)
                if key and idx not in self.names[key]:
                    self.names[key].append(idx)
                toks = name_tokens(n)
                sets.append(toks)
                for tok in toks:
                    self._tokens[tok].add(idx)
            self._token_sets.append(sets)

    def _row(self, lat: float) -> int:
        return math.floor(lat / self.cell_deg)

    def _col(self, lon: float) -> int:
        return math.floor(lon / self.cell_deg) % self._ncols

    def _cells_for_bbox(self, lat0: float, lon0: float, lat1: float, lon1: float) -> Iterable[tuple[int, int]]:
        c0, c1 = math.floor(lon0 / self.cell_deg), math.floor(lon1 / self.cell_deg)
        if c1 - c0 + 1 >= self._ncols:
            cols: Iterable[int] = range(self._ncols)
        else:
            cols = [c % self._ncols for c in range(c0, c1 + 1)]
        cols = list(cols)
        for r in range(self._row(lat0), self._row(lat1) + 1):
            for c in cols:
                yield r, c

    def cell_of(self, pt: Point) -> tuple[int, int]:
        return self._row(pt.lat), self._col(pt.lon)

    def within_radius(self, center: Point, radius_m: float) -> list[int]:
        """Indices of entries whose geometry lies within ``radius_m`` of ``center``."""
        dlat = math.degrees(radius_m / EARTH_RADIUS_M) + self.cell_deg
        lat0, lat1 = max(-90.0, center.lat - dlat), min(90.0, center.lat + dlat)
        max_abs_lat = max(abs(lat0), abs(lat1))
        cos_lat = math.cos(math.radians(max_abs_lat))
        if max_abs_lat >= 89.0 or cos_lat <= 0:
            lon0, lon1 = -180.0, 180.0 + 360.0
        else:
            dlon = math.degrees(radius_m / (EARTH_RADIUS_M * cos_lat)) + self.cell_deg
            lon0, lon1 = center.lon - dlon, center.lon + dlon
            if dlon >= 180.0:
                lon0, lon1 = -180.0, 180.0 + 360.0
        candidates: set[int] = set()
        for cell in self._cells_for_bbox(lat0, lon0, lat1, lon1):
            candidates.update(self.grid.get(cell, ()))
        return sorted(i for i in candidates
                      if geometry_distance_m(center, self.entries[i].geometry) <= radius_m)

    def lookup(self, text: str, match_weight: float = 0.7) -> list[GeocodeCandidate]:
        """Exact name/alias matches score 1.0; other token overlaps score their Jaccard."""
        key = normalize_name(text)
        if not key:
            return []
        scores: dict[int, float] = {}
        for idx in self.names.get(key, ()):
            scores[idx] = 1.0
        query = frozenset(key.split())
        partial: set[int] = set()
        for tok in query:
            partial |= self._tokens.get(tok, set())
        for idx in partial - scores.keys():
            best = max(jaccard(query, toks) for toks in self._token_sets[idx])
            if best > 0:
                scores[idx] = best
        out = [self._candidate(idx, s, match_weight) for idx, s in scores.items()]
        out.sort(key=lambda c: (-c.match_score, c.name, c.entry_index))
        return out

    def _candidate(self, idx: int, match: float, match_weight: float) -> GeocodeCandidate:
        e = self.entries[idx]
        return GeocodeCandidate(
            source=GAZETTEER, name=e.name, geometry=e.geometry, match_score=match,
            confidence=match_weight * match, category=e.category, jurisdiction=e.jurisdiction,
            civic_address=e.civic_address, entry_index=idx)


def lookup(text: str, index: SpatialIndex) -> list[GeocodeCandidate]:
    return index.lookup(text)


# -- external clients ------------------------------------------------------------

class GeocoderClientError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExternalResult:
    name: str
    geometry: Geometry
    civic_address: str | None = None

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExternalResult":
        return cls(data["name"], geometry_from_dict(data["geometry"]), data.get("civicAddress"))

    def to_dict(self) -> dict:
        out = {"name": self.name, "geometry": geometry_to_dict(self.geometry)}
        if self.civic_address is not None:
            out["civicAddress"] = self.civic_address
        return out


class ExternalGeocoderClient(Protocol):
    def query(self, text: str, bias: Point | None = None) -> list[ExternalResult]: ...


class OfflineFixtureClient:
    """Canned responses keyed by normalized query text; unknown queries return []."""

    def __init__(self, responses: Mapping[str, list]):
        self._responses = {
            normalize_name(q): [r if isinstance(r, ExternalResult) else ExternalResult.from_dict(r) for r in rs]
            for q, rs in responses.items()
        }

    @classmethod
    def from_file(cls, path: str | Path) -> "OfflineFixtureClient":
        return cls(json.loads(Path(path).read_text("utf-8")))

    def query(self, text: str, bias: Point | None = None) -> list[ExternalResult]:
        return list(self._responses.get(normalize_name(text), []))


class CachingClient:
    """Read-through cache persisted to one JSON file (atomic replace on write)."""

    def __init__(self, inner: ExternalGeocoderClient, path: str | Path):
        self.inner = inner
        self.path = Path(path)
        self._lock = threading.Lock()
        self._cache: dict[str, list[dict]] = {}
        if self.path.exists():
            self._cache = json.loads(self.path.read_text("utf-8"))

    def query(self, text: str, bias: Point | None = None) -> list[ExternalResult]:
        key = normalize_name(text)
        if bias is not None:
            key = f"{key}@{bias.lat!r},{bias.lon!r}"
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return [ExternalResult.from_dict(r) for r in hit]
        results = self.inner.query(text, bias)
        with self._lock:
            self._cache[key] = [r.to_dict() for r in results]
            self._flush()
        return results

    def _flush(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".geocache-", dir=self.path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(self._cache, fh, sort_keys=True)
            os.replace(tmp, self.path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


# -- resolution ------------------------------------------------------------------

def _load_default_affinity() -> dict[str, frozenset[str]]:
    raw = yaml.safe_load(resources.files("eidoflow.data").joinpath("category_affinity.yaml").read_text("utf-8"))
    return {k: frozenset(c.casefold() for c in v) for k, v in (raw or {}).items()}


@dataclass(frozen=True)
class GeocoderConfig:
    match_weight: float = 0.7
    context_weight: float = 0.3
    fallback_threshold: float = 0.6
    proximity_half_life_m: float = 1000.0
    jurisdiction: str | None = None
    category_affinity: Mapping[str, frozenset[str]] = field(default_factory=_load_default_affinity)


@dataclass(frozen=True)
class GeocodeContext:
    incident_type: str | None = None
    jurisdiction: str | None = None
    nearby: tuple[Geometry, ...] = ()


def context_score(cand: GeocodeCandidate, ctx: GeocodeContext, cfg: GeocoderConfig) -> float:
    """Mean of whichever context signals are available; 0 when none are."""
    signals: list[float] = []
    if ctx.incident_type is not None and cand.category is not None and ctx.incident_type in cfg.category_affinity:
        signals.append(1.0 if cand.category.casefold() in cfg.category_affinity[ctx.incident_type] else 0.0)
    if ctx.jurisdiction is not None and cand.jurisdiction is not None:
        signals.append(1.0 if normalize_name(ctx.jurisdiction) == normalize_name(cand.jurisdiction) else 0.0)
    if ctx.nearby:
        d = min_distance_m([cand.geometry], ctx.nearby)
        assert d is not None
        signals.append(phi_g(d, cfg.proximity_half_life_m))
    return sum(signals) / len(signals) if signals else 0.0


def _bias_point(ctx: GeocodeContext) -> Point | None:
    for g in ctx.nearby:
        if isinstance(g, Point):
            return g
    return None


def _tie_key(c: GeocodeCandidate) -> tuple:
    return (0 if c.source == GAZETTEER else 1, c.name, -1 if c.entry_index is None else c.entry_index)


def resolve(
    text: str,
    context: GeocodeContext,
    index: SpatialIndex,
    client: ExternalGeocoderClient | None = None,
    cfg: GeocoderConfig | None = None,
) -> GeocodeCandidate | None:
    """Best candidate for ``text``, or None when nothing matches."""
    cfg = cfg or GeocoderConfig()
    candidates = index.lookup(text, cfg.match_weight)
    best_match = candidates[0].match_score if candidates else 0.0
    if client is not None and best_match < cfg.fallback_threshold and normalize_name(text):
        try:
            results = client.query(text, _bias_point(context))
        except Exception as exc:  # any client failure degrades to gazetteer-only
            logger.warning("external geocoder failed for %r: %s", text, exc)
            results = []
        for rank, r in enumerate(results):
            candidates.append(GeocodeCandidate(
                source=EXTERNAL, name=r.name, geometry=r.geometry, match_score=1.0 / (1 + rank),
                civic_address=r.civic_address))
    if not candidates:
        return None
    scored = []
    for c in candidates:
        ctx = context_score(c, context, cfg)
        conf = min(1.0, max(0.0, cfg.match_weight * c.match_score + cfg.context_weight * ctx))
        scored.append(replace(c, context_score=ctx, confidence=conf))
    # ties within 1e-9 on confidence prefer the gazetteer, then the name
    top = max(c.confidence for c in scored)
    leaders = [c for c in scored if c.confidence >= top - 1e-9]
    return min(leaders, key=_tie_key)


def enrich_document(
    doc: EidoDocument,
    index: SpatialIndex,
    client: ExternalGeocoderClient | None = None,
    cfg: GeocoderConfig | None = None,
    nearby: Sequence[Geometry] = (),
) -> EidoDocument:
    """Add geometry to locations that only carry description text.

    Descriptions and civic addresses already present are never altered; a
    civic address is filled in only where the component has none.
    """
    cfg = cfg or GeocoderConfig()
    context = GeocodeContext(
        incident_type=doc.incident.type_registry_text,
        jurisdiction=cfg.jurisdiction,
        nearby=tuple(doc.geometries()) + tuple(nearby),
    )
    changed = False
    out: list[LocationComponent] = []
    for loc in doc.locations:
        if loc.geometry is not None or not loc.description_text:
            out.append(loc)
            continue
        best = resolve(loc.description_text, context, index, client, cfg)
        if best is None:
            logger.info("NoResolution: %s location %s %r", doc.eido_id, loc.location_id, loc.description_text)
            out.append(loc)
            continue
        changed = True
        out.append(replace(
            loc,
            geometry=best.geometry,
            confidence=best.confidence,
            civic_address_text=loc.civic_address_text if loc.civic_address_text is not None else best.civic_address,
        ))
    if not changed:
        return doc
    return replace(doc, locations=tuple(out))

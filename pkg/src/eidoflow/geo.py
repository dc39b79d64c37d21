"""WGS84 geometry primitives: points, single-ring polygons, great-circle distance.

Coordinates are decimal degrees.  Polygon containment is evaluated in the
lat/lon plane (ray casting); distances are haversine on a sphere of the WGS84
mean radius.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Union

import numpy as np

EARTH_RADIUS_M = 6371008.8
EDGE_SAMPLE_SPACING_M = 10.0


class GeometryError(ValueError):
    """Raised for structurally invalid geometry."""


@dataclass(frozen=True)
class Point:
    lat: float
    lon: float

    def __post_init__(self) -> None:
        for name, value, bound in (("lat", self.lat, 90.0), ("lon", self.lon, 180.0)):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise GeometryError(f"{name} must be a number, got {value!r}")
            if not math.isfinite(value) or not -bound <= value <= bound:
                raise GeometryError(f"{name} {value!r} outside [-{bound:g}, {bound:g}]")


@dataclass(frozen=True)
class Polygon:
    """Closed ring; ``ring[0] == ring[-1]`` and at least 4 vertices."""

    ring: tuple[Point, ...]

    def __post_init__(self) -> None:
        if len(self.ring) < 4:
            raise GeometryError(f"polygon ring needs >= 4 vertices, got {len(self.ring)}")
        if self.ring[0] != self.ring[-1]:
            raise GeometryError("polygon ring is not closed (first vertex != last vertex)")

    def bbox(self) -> tuple[float, float, float, float]:
        lats = [p.lat for p in self.ring]
        lons = [p.lon for p in self.ring]
        return min(lats), min(lons), max(lats), max(lons)


Geometry = Union[Point, Polygon]


# -- GeoJSON-style dict encoding ([lon, lat] coordinate order) --------------

def geometry_from_dict(data: object) -> Geometry:
    if not isinstance(data, dict):
        raise GeometryError("geometry must be an object")
    kind = data.get("type")
    coords = data.get("coordinates")
    if kind == "Point":
        if not isinstance(coords, list) or len(coords) != 2:
            raise GeometryError("Point coordinates must be [lon, lat]")
        return Point(lat=coords[1], lon=coords[0])
    if kind == "Polygon":
        if not isinstance(coords, list) or len(coords) != 1 or not isinstance(coords[0], list):
            raise GeometryError("Polygon coordinates must hold exactly one ring")
        ring = []
        for pair in coords[0]:
            if not isinstance(pair, list) or len(pair) != 2:
                raise GeometryError("ring vertices must be [lon, lat]")
            ring.append(Point(lat=pair[1], lon=pair[0]))
        return Polygon(tuple(ring))
    raise GeometryError(f"unsupported geometry type {kind!r}")


def geometry_to_dict(geom: Geometry) -> dict:
    if isinstance(geom, Point):
        return {"type": "Point", "coordinates": [geom.lon, geom.lat]}
    return {"type": "Polygon", "coordinates": [[[p.lon, p.lat] for p in geom.ring]]}


# -- WKT (used for flat tabular cells) ---------------------------------------

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_PAIR_RE = re.compile(rf"\s*({_NUM})\s+({_NUM})\s*")
_POINT_RE = re.compile(r"^\s*POINT\s*\((.*)\)\s*$", re.IGNORECASE)
_POLY_RE = re.compile(r"^\s*POLYGON\s*\(\s*\((.*)\)\s*\)\s*$", re.IGNORECASE)


def _pair(text: str) -> Point:
    m = _PAIR_RE.fullmatch(text)
    if not m:
        raise GeometryError(f"bad WKT coordinate pair {text!r}")
    return Point(lat=float(m.group(2)), lon=float(m.group(1)))


def to_wkt(geom: Geometry) -> str:
    if isinstance(geom, Point):
        return f"POINT ({geom.lon!r} {geom.lat!r})"
    inner = ", ".join(f"{p.lon!r} {p.lat!r}" for p in geom.ring)
    return f"POLYGON (({inner}))"


def from_wkt(text: str) -> Geometry:
    m = _POINT_RE.match(text)
    if m:
        return _pair(m.group(1))
    m = _POLY_RE.match(text)
    if m:
        return Polygon(tuple(_pair(part) for part in m.group(1).split(",")))
    raise GeometryError(f"unsupported WKT {text[:40]!r}")


# -- distance ----------------------------------------------------------------

def haversine_m(a: Point, b: Point) -> float:
    lat1, lat2 = math.radians(a.lat), math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def _haversine_many(lat: float, lon: float, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    lat1 = math.radians(lat)
    lat2 = np.radians(lats)
    dlat = lat2 - lat1
    dlon = np.radians(lons - lon)
    h = np.sin(dlat / 2) ** 2 + math.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def point_in_polygon(pt: Point, poly: Polygon) -> bool:
    """Even-odd ray cast; points exactly on an edge count as inside."""
    x, y = pt.lon, pt.lat
    inside = False
    ring = poly.ring
    for i in range(len(ring) - 1):
        a, b = ring[i], ring[i + 1]
        if _on_segment(x, y, a, b):
            return True
        if (a.lat > y) != (b.lat > y):
            x_cross = a.lon + (y - a.lat) * (b.lon - a.lon) / (b.lat - a.lat)
            if x < x_cross:
                inside = not inside
    return inside


def _on_segment(x: float, y: float, a: Point, b: Point) -> bool:
    cross = (b.lon - a.lon) * (y - a.lat) - (b.lat - a.lat) * (x - a.lon)
    if abs(cross) > 1e-12:
        return False
    return (min(a.lon, b.lon) - 1e-12 <= x <= max(a.lon, b.lon) + 1e-12
            and min(a.lat, b.lat) - 1e-12 <= y <= max(a.lat, b.lat) + 1e-12)


@lru_cache(maxsize=256)
def _boundary_samples(poly: Polygon, spacing_m: float) -> tuple[np.ndarray, np.ndarray]:
    lats: list[np.ndarray] = []
    lons: list[np.ndarray] = []
    for a, b in zip(poly.ring, poly.ring[1:]):
        n = max(1, math.ceil(haversine_m(a, b) / spacing_m))
        t = np.linspace(0.0, 1.0, n + 1)
        lats.append(a.lat + (b.lat - a.lat) * t)
        lons.append(a.lon + (b.lon - a.lon) * t)
    return np.concatenate(lats), np.concatenate(lons)


def distance_to_boundary_m(pt: Point, poly: Polygon, spacing_m: float = EDGE_SAMPLE_SPACING_M) -> float:
    lats, lons = _boundary_samples(poly, spacing_m)
    return float(_haversine_many(pt.lat, pt.lon, lats, lons).min())


def _segments_cross(p1: Point, p2: Point, q1: Point, q2: Point) -> bool:
    def orient(a: Point, b: Point, c: Point) -> float:
        return (b.lon - a.lon) * (c.lat - a.lat) - (b.lat - a.lat) * (c.lon - a.lon)

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 > 0) != (d2 > 0) and (d3 > 0) != (d4 > 0) and 0 not in (d1, d2, d3, d4)


def _polygons_touch(a: Polygon, b: Polygon) -> bool:
    if any(point_in_polygon(p, b) for p in a.ring) or any(point_in_polygon(p, a) for p in b.ring):
        return True
    for p1, p2 in zip(a.ring, a.ring[1:]):
        for q1, q2 in zip(b.ring, b.ring[1:]):
            if _segments_cross(p1, p2, q1, q2):
                return True
    return False


def geometry_distance_m(a: Geometry, b: Geometry, spacing_m: float = EDGE_SAMPLE_SPACING_M) -> float:
    """Minimum distance in meters; 0 when the geometries overlap."""
    if isinstance(a, Point) and isinstance(b, Point):
        return haversine_m(a, b)
    if isinstance(a, Polygon) and isinstance(b, Point):
        a, b = b, a
    if isinstance(a, Point):
        assert isinstance(b, Polygon)
        if point_in_polygon(a, b):
            return 0.0
        return distance_to_boundary_m(a, b, spacing_m)
    assert isinstance(b, Polygon)
    if _polygons_touch(a, b):
        return 0.0
    # disjoint planar polygons attain their minimum distance at a vertex of one of them
    best = min(distance_to_boundary_m(p, b, spacing_m) for p in a.ring)
    return min(best, min(distance_to_boundary_m(p, a, spacing_m) for p in b.ring))


def min_distance_m(left: Iterable[Geometry], right: Iterable[Geometry]) -> float | None:
    """Minimum pairwise distance between two geometry collections, or None if either is empty."""
    right = list(right)
    best: float | None = None
    for a in left:
        for b in right:
            d = geometry_distance_m(a, b)
            if best is None or d < best:
                best = d
                if best == 0.0:
                    return 0.0
    return best


def bbox_of(geom: Geometry) -> tuple[float, float, float, float]:
    if isinstance(geom, Point):
        return geom.lat, geom.lon, geom.lat, geom.lon
    return geom.bbox()

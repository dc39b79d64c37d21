import math

import pytest
from hypothesis import given, settings, strategies as st

from eidoflow.geo import (
    GeometryError,
    Point,
    Polygon,
    from_wkt,
    geometry_distance_m,
    geometry_from_dict,
    geometry_to_dict,
    haversine_m,
    min_distance_m,
    point_in_polygon,
    to_wkt,
)

SQUARE = Polygon(tuple(Point(lat, lon) for lat, lon in [(0, 0), (0, 1), (1, 1), (1, 0), (0, 0)]))


def test_haversine_matches_chord_oracle():
    # value from an independent 3D unit-vector chord computation, R = 6371008.8 m
    d = haversine_m(Point(32.7157, -117.1611), Point(32.8328, -117.2713))
    assert d == pytest.approx(16604.13631614568, abs=1e-6)


def test_haversine_zero_and_symmetric():
    a, b = Point(10.0, 20.0), Point(-5.5, 170.25)
    assert haversine_m(a, a) == 0.0
    assert haversine_m(a, b) == haversine_m(b, a)


def test_point_in_polygon_inside_outside_edge():
    assert point_in_polygon(Point(0.5, 0.5), SQUARE)
    assert not point_in_polygon(Point(1.5, 0.5), SQUARE)
    assert point_in_polygon(Point(0.0, 0.5), SQUARE)


def test_point_polygon_distance_is_zero_inside_and_positive_outside():
    assert geometry_distance_m(Point(0.5, 0.5), SQUARE) == 0.0
    outside = Point(0.5, 1.01)
    d = geometry_distance_m(outside, SQUARE)
    # nearest boundary point is (0.5, 1.0); sampling at 10 m adds at most a few cm
    assert d == pytest.approx(haversine_m(outside, Point(0.5, 1.0)), abs=0.5)


def test_polygon_polygon_overlap_and_disjoint():
    shifted = Polygon(tuple(Point(p.lat + 0.5, p.lon + 0.5) for p in SQUARE.ring))
    assert geometry_distance_m(SQUARE, shifted) == 0.0
    far = Polygon(tuple(Point(p.lat, p.lon + 2.0) for p in SQUARE.ring))
    assert geometry_distance_m(SQUARE, far) == pytest.approx(haversine_m(Point(1, 1), Point(1, 2)), abs=0.5)


def test_min_distance_empty_side_is_none():
    assert min_distance_m([], [Point(0, 0)]) is None
    assert min_distance_m([Point(0, 0)], []) is None


@pytest.mark.parametrize("bad", [
    {"type": "Point", "coordinates": [200, 0]},
    {"type": "Point", "coordinates": [0]},
    {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [0, 0]]]},
    {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [1, 1], [0, 1]]]},
    {"type": "Line", "coordinates": []},
])
def test_invalid_geometry_rejected(bad):
    with pytest.raises(GeometryError):
        geometry_from_dict(bad)


coords = st.tuples(st.floats(-90, 90, allow_nan=False), st.floats(-180, 180, allow_nan=False))


@settings(max_examples=200, deadline=None)
@given(coords)
def test_wkt_and_dict_round_trip_point(c):
    p = Point(*c)
    assert from_wkt(to_wkt(p)) == p
    assert geometry_from_dict(geometry_to_dict(p)) == p


def test_wkt_polygon_round_trip():
    assert from_wkt(to_wkt(SQUARE)) == SQUARE
    assert to_wkt(SQUARE).startswith("POLYGON ((")


@settings(max_examples=200, deadline=None)
@given(coords, coords)
def test_haversine_bounded_by_half_circumference(a, b):
    assert 0.0 <= haversine_m(Point(*a), Point(*b)) <= math.pi * 6371008.8 + 1e-6

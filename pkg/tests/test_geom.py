import math

import numpy as np
import pytest

from cfurban import geom
from cfurban.geom import (
    BuildingMap,
    Building,
    Polygon,
    Rect,
    load_building_map,
    point_in_building,
    resample_boundary,
    segment_blocked,
)

from conftest import rect_ring, square_doc


# ---------------------------------------------------------------------------
# ingestion


def test_load_single_square():
    bmap = load_building_map(square_doc(40.0, 15.0))
    assert len(bmap.buildings) == 1
    b = bmap.buildings[0]
    assert b.height == 15.0
    assert len(b.footprint.outer) == 4
    assert (bmap.extent.xmin, bmap.extent.ymin, bmap.extent.xmax, bmap.extent.ymax) == (
        0.0,
        0.0,
        40.0,
        40.0,
    )


def test_load_two_vertex_polygon_rejected():
    doc = square_doc()
    doc["features"][0]["geometry"]["coordinates"] = [[[0, 0], [1, 1], [0, 0]]]
    with pytest.raises(ValueError):
        load_building_map(doc)


def test_load_missing_or_bad_height():
    doc = square_doc()
    del doc["features"][0]["properties"]["height"]
    with pytest.raises(ValueError, match="height"):
        load_building_map(doc)
    doc = square_doc(height=-3.0)
    with pytest.raises(ValueError, match="height"):
        load_building_map(doc)


def test_load_empty_collection():
    with pytest.raises(ValueError, match="no features"):
        load_building_map({"type": "FeatureCollection", "features": []})


def test_load_hole_ring_preserved():
    doc = square_doc(40.0, 15.0, holes=[rect_ring(10, 10, 30, 30)])
    bmap = load_building_map(doc)
    poly = bmap.buildings[0].footprint
    assert len(poly.holes) == 1
    # normalized orientation: outer CCW (positive area), holes CW (negative)
    assert geom._signed_area(poly.outer) > 0
    assert geom._signed_area(poly.holes[0]) < 0


def test_load_respects_bbox():
    doc = square_doc()
    doc["bbox"] = [-10.0, -10.0, 100.0, 100.0]
    bmap = load_building_map(doc)
    assert bmap.extent == Rect(-10.0, -10.0, 100.0, 100.0)


# ---------------------------------------------------------------------------
# containment


@pytest.fixture
def courtyard_building():
    poly = Polygon.from_rings(rect_ring(0, 0, 40, 40), [rect_ring(10, 10, 30, 30)])
    return BuildingMap([Building(poly, 12.0)], Rect(-10, -10, 50, 50))


def test_point_in_building_basics(courtyard_building):
    assert point_in_building((5.0, 5.0), courtyard_building)  # in the ring material
    assert not point_in_building((20.0, 20.0), courtyard_building)  # courtyard
    assert not point_in_building((45.0, 45.0), courtyard_building)  # outside


def test_boundary_points_count_inside(courtyard_building):
    assert point_in_building((0.0, 20.0), courtyard_building)  # outer wall
    assert point_in_building((10.0, 20.0), courtyard_building)  # hole wall
    assert point_in_building((0.0, 0.0), courtyard_building)  # corner


def _winding_number_inside(p, ring):
    """Angle-summation winding oracle (strictly interior points only)."""
    total = 0.0
    n = len(ring)
    for i in range(n):
        a = ring[i] - p
        b = ring[(i + 1) % n] - p
        ang = math.atan2(a[0] * b[1] - a[1] * b[0], a[0] * b[0] + a[1] * b[1])
        total += ang
    return abs(total) > math.pi  # ~2*pi inside, ~0 outside


def _crossing_inside(p, ring):
    """Independent ray-crossing oracle."""
    x, y = p
    inside = False
    n = len(ring)
    j = n - 1
    for i in range(n):
        xi, yi = ring[i]
        xj, yj = ring[j]
        if (yi > y) != (yj > y) and x < (xj - xi) * (y - yi) / (yj - yi) + xi:
            inside = not inside
        j = i
    return inside


def test_pip_agrees_with_winding_and_crossing_oracles():
    rng = np.random.default_rng(12345)
    checked = 0
    while checked < 1000:
        pts = rng.uniform(0, 100, size=(8, 2))
        hull = _convex_hull(pts)
        if len(hull) < 3:
            continue
        poly = Polygon.from_rings(hull)
        bmap = BuildingMap([Building(poly, 10.0)], Rect(-1, -1, 101, 101))
        p = rng.uniform(0, 100, size=2)
        if geom.distance_to_boundary(p, bmap) < 1e-6:
            continue
        got = point_in_building(p, bmap)
        assert got == _winding_number_inside(p, poly.outer)
        assert got == _crossing_inside(p, poly.outer)
        checked += 1


def _convex_hull(pts):
    pts = sorted(map(tuple, pts))

    def half(points):
        out = []
        for p in points:
            while len(out) >= 2 and (
                (out[-1][0] - out[-2][0]) * (p[1] - out[-2][1])
                - (out[-1][1] - out[-2][1]) * (p[0] - out[-2][0])
            ) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.asarray(lower[:-1] + upper[:-1])


# ---------------------------------------------------------------------------
# segment blockage


@pytest.fixture
def tall_building():
    poly = Polygon.from_rings(rect_ring(-10, 10, 10, 30))
    return BuildingMap([Building(poly, 30.0)], Rect(-50, -50, 50, 50))


def test_segment_through_building(tall_building):
    assert segment_blocked((0, 0, 11), (0, 40, 11), tall_building)


def test_segment_clears_low_building():
    poly = Polygon.from_rings(rect_ring(-10, 10, 10, 30))
    low = BuildingMap([Building(poly, 1.0)], Rect(-50, -50, 50, 50))
    assert not segment_blocked((0, 0, 11), (0, 40, 11), low)


def test_segment_unobstructed(tall_building):
    assert not segment_blocked((20, 0, 5), (20, 40, 5), tall_building)


def test_segment_descending_into_shadow(tall_building):
    # from above the roof down to street level behind the building
    assert segment_blocked((0, 0, 50), (0, 40, 1), tall_building)
    assert not segment_blocked((0, 0, 50), (0, 40, 31), tall_building)


def test_segment_blocked_symmetry(canyon):
    rng = np.random.default_rng(99)
    for _ in range(200):
        a = (*rng.uniform(0, 216, 2), rng.uniform(0, 30))
        b = (*rng.uniform(0, 216, 2), rng.uniform(0, 30))
        assert segment_blocked(a, b, canyon) == segment_blocked(b, a, canyon)


def test_segment_through_diagonal_corners(canyon):
    # ray through two opposite block corners enters the solid and must block
    b = canyon.buildings[0]
    (x0, y0), (x1, y1) = b.footprint.outer[0], b.footprint.outer[2]
    a = (x0 - 6.0, y0 - 6.0, 5.0)
    c = (x1 + 6.0, y1 + 6.0, 5.0)
    assert segment_blocked(a, c, canyon)
    assert segment_blocked(c, a, canyon)


# ---------------------------------------------------------------------------
# boundary resampling


def test_resample_square_40_spacing_10():
    poly = Polygon.from_rings(rect_ring(0, 0, 40, 40))
    pts = resample_boundary(poly, 10.0)
    # oracle: per 40 m edge one corner plus inserts at 10, 20, 30
    per_edge = 1 + 3
    assert len(pts) == 4 * per_edge
    bmap = BuildingMap([Building(poly, 5.0)], Rect(-1, -1, 41, 41))
    for p in pts:
        assert geom.distance_to_boundary(p, bmap) < 1e-9


def test_resample_spacing_larger_than_edges():
    poly = Polygon.from_rings(rect_ring(0, 0, 40, 40))
    pts = resample_boundary(poly, 100.0)
    assert len(pts) == 4  # corners only


def test_resample_exact_edge_multiple_half_open():
    # edge length equals the spacing: the would-be insert is the next corner
    poly = Polygon.from_rings(rect_ring(0, 0, 10, 10))
    pts = resample_boundary(poly, 10.0)
    assert len(pts) == 4


def test_resample_spacing_along_edges():
    poly = Polygon.from_rings([(0, 0), (35, 0), (35, 20), (0, 20)])
    spacing = 10.0
    pts = resample_boundary(poly, spacing)
    ring = poly.outer
    # walk the output: within one edge consecutive points are exactly
    # `spacing` apart; the residual segment to the next corner may be shorter
    idx = 0
    for i in range(len(ring)):
        a, b = ring[i], ring[(i + 1) % len(ring)]
        elen = np.hypot(*(b - a))
        n_inner = math.ceil(elen / spacing - 1e-9) - 1
        edge_pts = pts[idx : idx + 1 + n_inner]
        assert np.allclose(edge_pts[0], a)
        gaps = np.hypot(*np.diff(edge_pts, axis=0).T)
        assert np.allclose(gaps, spacing, atol=1e-9)
        idx += 1 + n_inner
    assert idx == len(pts)


def test_resample_includes_hole_rings():
    poly = Polygon.from_rings(rect_ring(0, 0, 40, 40), [rect_ring(10, 10, 30, 30)])
    pts = resample_boundary(poly, 10.0)
    assert len(pts) == 16 + 8  # outer 16, hole 4 corners + 1 insert per 20 m edge


def test_resample_rejects_bad_spacing():
    poly = Polygon.from_rings(rect_ring(0, 0, 10, 10))
    with pytest.raises(ValueError):
        resample_boundary(poly, 0.0)

"""Planar geometry kernel: polygons with holes, building maps, visibility.

Coordinates are planar meters throughout; any geographic reprojection has to
happen before a map enters this module. Buildings are 2.5D prisms (footprint
extruded to a per-building height), which is what the blockage and ray
computations rely on.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

# Points closer than this to a ring count as lying on it (meters).
BOUNDARY_EPS = 1e-9


class Point2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle, closed on all sides."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        vals = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("rectangle bounds must be finite")
        if self.xmax <= self.xmin or self.ymax <= self.ymin:
            raise ValueError("rectangle must have positive extent")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def center(self) -> Point2:
        return Point2(0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))

    def contains(self, x, y):
        """Closed containment test; broadcasts over array inputs."""
        return (
            (np.asarray(x) >= self.xmin)
            & (np.asarray(x) <= self.xmax)
            & (np.asarray(y) >= self.ymin)
            & (np.asarray(y) <= self.ymax)
        )

    def concentric(self, width: float, height: float | None = None) -> "Rect":
        """Rectangle of the given size sharing this rectangle's center."""
        height = width if height is None else height
        cx, cy = self.center
        return Rect(cx - width / 2, cy - height / 2, cx + width / 2, cy + height / 2)


def _signed_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _normalize_ring(coords, clockwise: bool) -> np.ndarray:
    """Validate a ring and orient it (CCW outer / CW hole convention).

    Accepts open or closed vertex lists, drops consecutive duplicates, and
    returns an open (no repeated end vertex) float array.
    """
    arr = np.asarray(coords, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("ring must be a sequence of (x, y) pairs")
    if not np.isfinite(arr).all():
        raise ValueError("ring coordinates must be finite")
    if len(arr) >= 2 and np.hypot(*(arr[0] - arr[-1])) <= BOUNDARY_EPS:
        arr = arr[:-1]
    if len(arr) >= 2:
        gaps = np.hypot(*(np.diff(arr, axis=0).T))
        arr = arr[np.concatenate(([True], gaps > BOUNDARY_EPS))]
    if len(arr) < 3:
        raise ValueError("ring needs at least 3 distinct vertices")
    area = _signed_area(arr)
    if abs(area) < 1e-9:
        raise ValueError("ring is degenerate (zero enclosed area)")
    if clockwise == (area > 0):
        arr = arr[::-1].copy()
    return arr


@dataclass
class Polygon:
    """Footprint with a CCW outer ring and CW inner (courtyard) rings.

    With that orientation the solid material always lies on the left of each
    directed edge, which the wall-based visibility code exploits.
    """

    outer: np.ndarray
    holes: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def from_rings(cls, outer, holes=()) -> "Polygon":
        return cls(
            _normalize_ring(outer, clockwise=False),
            [_normalize_ring(h, clockwise=True) for h in holes],
        )

    def rings(self) -> Iterator[np.ndarray]:
        yield self.outer
        yield from self.holes

    @property
    def bounds(self) -> Rect:
        xs = np.concatenate([r[:, 0] for r in self.rings()])
        ys = np.concatenate([r[:, 1] for r in self.rings()])
        return Rect(xs.min(), ys.min(), xs.max(), ys.max())


@dataclass
class Building:
    footprint: Polygon
    height: float

    def __post_init__(self):
        if not np.isfinite(self.height) or self.height <= 0:
            raise ValueError("building height must be positive")


@dataclass(eq=False)
class BuildingMap:
    """Immutable propagation geometry: buildings plus the simulated area."""

    buildings: list[Building]
    extent: Rect

    def __post_init__(self):
        for b in self.buildings:
            bb = b.footprint.bounds
            if (
                bb.xmax < self.extent.xmin
                or bb.xmin > self.extent.xmax
                or bb.ymax < self.extent.ymin
                or bb.ymin > self.extent.ymax
            ):
                raise ValueError("building footprint lies outside the area extent")

    @cached_property
    def wall_segments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All ring edges as (p0, p1, height) arrays; solid side on the left."""
        p0s, p1s, hs = [], [], []
        for b in self.buildings:
            for ring in b.footprint.rings():
                p0s.append(ring)
                p1s.append(np.roll(ring, -1, axis=0))
                hs.append(np.full(len(ring), b.height))
        if not p0s:
            return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0)
        return np.concatenate(p0s), np.concatenate(p1s), np.concatenate(hs)

    @cached_property
    def corner_points(self) -> tuple[np.ndarray, np.ndarray]:
        """All ring vertices with their building heights (vertical edges)."""
        xys, hs = [], []
        for b in self.buildings:
            for ring in b.footprint.rings():
                xys.append(ring)
                hs.append(np.full(len(ring), b.height))
        if not xys:
            return np.zeros((0, 2)), np.zeros(0)
        return np.concatenate(xys), np.concatenate(hs)


# ---------------------------------------------------------------------------
# Containment


def _ray_crossings(px, py, ring) -> np.ndarray:
    """Strict even-odd test for points (N,) against one ring; boundary-agnostic."""
    x1, y1 = ring[:, 0][None, :], ring[:, 1][None, :]
    nxt = np.roll(ring, -1, axis=0)
    x2, y2 = nxt[:, 0][None, :], nxt[:, 1][None, :]
    px = px[:, None]
    py = py[:, None]
    cond = (y1 > py) != (y2 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = (x2 - x1) * (py - y1) / (y2 - y1) + x1
    crossing = cond & (px < xint)
    return (crossing.sum(axis=1) % 2) == 1


def _near_ring(px, py, ring, eps=BOUNDARY_EPS) -> np.ndarray:
    """True where a point lies within ``eps`` of any edge of the ring."""
    a = ring[None, :, :]
    ab = (np.roll(ring, -1, axis=0) - ring)[None, :, :]
    p = np.stack([px, py], axis=1)[:, None, :]
    denom = np.maximum((ab * ab).sum(axis=2), 1e-300)
    t = np.clip(((p - a) * ab).sum(axis=2) / denom, 0.0, 1.0)
    closest = a + t[..., None] * ab
    d2 = ((p - closest) ** 2).sum(axis=2)
    return (d2 <= eps * eps).any(axis=1)


def points_in_buildings(points, bmap: BuildingMap) -> np.ndarray:
    """Boundary-inclusive containment for an (N, 2) array of points.

    A point on any ring (outer or courtyard) counts as inside; a point
    strictly within a courtyard does not.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    px, py = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    for b in bmap.buildings:
        todo = ~inside
        if not todo.any():
            break
        on_ring = np.zeros(len(pts), dtype=bool)
        for ring in b.footprint.rings():
            on_ring |= _near_ring(px, py, ring)
        in_outer = _ray_crossings(px, py, b.footprint.outer)
        in_hole = np.zeros(len(pts), dtype=bool)
        for hole in b.footprint.holes:
            in_hole |= _ray_crossings(px, py, hole)
        inside |= on_ring | (in_outer & ~in_hole)
    return inside


def point_in_building(p, bmap: BuildingMap) -> bool:
    """Boundary-inclusive single-point containment (see points_in_buildings)."""
    return bool(points_in_buildings(np.asarray(p, dtype=float)[None, :2], bmap)[0])


# ---------------------------------------------------------------------------
# 3D segment blockage against building prisms

# Probe points are pushed this far (meters) along a segment when deciding
# whether a corner graze actually enters solid material.
_PROBE_STEP = 1e-4


def _points_in_solid_below(px, py, heights, bmap: BuildingMap) -> np.ndarray:
    """Strictly-interior solid test: inside a footprint (holes and a small
    boundary band excluded) and below that building's roof."""
    out = np.zeros(len(px), dtype=bool)
    for b in bmap.buildings:
        todo = ~out
        if not todo.any():
            break
        inside = _ray_crossings(px, py, b.footprint.outer)
        for hole in b.footprint.holes:
            inside &= ~_ray_crossings(px, py, hole)
        if not inside.any():
            continue
        near = np.zeros(len(px), dtype=bool)
        for ring in b.footprint.rings():
            near |= _near_ring(px, py, ring)
        out |= inside & ~near & (heights < b.height - 1e-12)
    return out


def _segments_hit_walls(p0, p1, h0, h1, w0, w1, wh):
    """Proper-crossing test plus corner-graze events.

    Returns (blocked, ev_seg, ev_t): ``blocked`` is True per segment when its
    2D projection properly crosses a wall below the wall top (open parameter
    intervals, so endpoint and wall-end grazes do not count); ``ev_seg`` and
    ``ev_t`` list segment indices and parameters where the projection passes
    exactly through a wall endpoint and needs a solid probe to resolve.
    """
    n = len(p0)
    if len(w0) == 0:
        return np.zeros(n, dtype=bool), np.zeros(0, dtype=int), np.zeros(0)
    d = (p1 - p0)[:, None, :]
    e = (w1 - w0)[None, :, :]
    r = w0[None, :, :] - p0[:, None, :]
    denom = d[..., 0] * e[..., 1] - d[..., 1] * e[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (r[..., 0] * e[..., 1] - r[..., 1] * e[..., 0]) / denom
        s = (r[..., 0] * d[..., 1] - r[..., 1] * d[..., 0]) / denom
        t_in = (np.abs(denom) > 1e-12) & (t > 1e-9) & (t < 1 - 1e-9)
        proper = t_in & (s > 1e-9) & (s < 1 - 1e-9)
        hcross = np.asarray(h0)[:, None] + t * (np.asarray(h1) - np.asarray(h0))[:, None]
        below = hcross < wh[None, :] - 1e-12
        corner = t_in & ((np.abs(s) <= 1e-9) | (np.abs(s - 1.0) <= 1e-9))
    blocked = (proper & below).any(axis=1)
    ev_seg, _ = np.nonzero(corner & ~blocked[:, None])
    ev_t = t[corner & ~blocked[:, None]]
    return blocked, ev_seg, ev_t


def _segments_blocked_impl(p0, p1, h0, h1, bmap: BuildingMap) -> np.ndarray:
    w0, w1, wh = bmap.wall_segments
    h0 = np.asarray(h0, dtype=float)
    h1 = np.asarray(h1, dtype=float)
    blocked, ev_seg, ev_t = _segments_hit_walls(p0, p1, h0, h1, w0, w1, wh)
    if len(w0) == 0:
        return blocked

    # Probe parameters: just inside both endpoints of every segment, plus
    # just past each corner-graze event. A probe strictly inside a prism
    # (below its roof) marks the segment blocked; this resolves rays that
    # enter or leave solid material exactly through polygon corners, which
    # the open-interval crossing test cannot see.
    seg_len = np.hypot(p1[:, 0] - p0[:, 0], p1[:, 1] - p0[:, 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.minimum(_PROBE_STEP / np.maximum(seg_len, 1e-300), 0.4)
    live = np.nonzero(~blocked & (seg_len > 1e-9))[0]
    probe_seg = np.concatenate([live, live, ev_seg])
    probe_t = np.concatenate(
        [step[live], 1.0 - step[live], np.minimum(ev_t + step[ev_seg], 1.0)]
    )
    if len(probe_seg) == 0:
        return blocked
    px = p0[probe_seg, 0] + probe_t * (p1[probe_seg, 0] - p0[probe_seg, 0])
    py = p0[probe_seg, 1] + probe_t * (p1[probe_seg, 1] - p0[probe_seg, 1])
    ph = h0[probe_seg] + probe_t * (h1[probe_seg] - h0[probe_seg])
    hit = _points_in_solid_below(px, py, ph, bmap)
    np.logical_or.at(blocked, probe_seg[hit], True)
    return blocked


def segments_blocked(a, b, bmap: BuildingMap) -> np.ndarray:
    """Vectorized blockage test for (N, 3) endpoint arrays (x, y, height)."""
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    return _segments_blocked_impl(a[:, :2], b[:, :2], a[:, 2], b[:, 2], bmap)


def segment_blocked(a, b, bmap: BuildingMap) -> bool:
    """True if the 3D segment a->b passes through any building prism.

    a and b are (x, y, height) triples with heights >= 0. The test is
    symmetric in its endpoints.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (3,) or b.shape != (3,):
        raise ValueError("segment endpoints must be (x, y, height) triples")
    return bool(segments_blocked(a[None], b[None], bmap)[0])


# ---------------------------------------------------------------------------
# Boundary resampling and distances


def resample_boundary(poly: Polygon, spacing: float) -> np.ndarray:
    """Ring vertices plus points every ``spacing`` meters along each edge.

    Arc length restarts at every vertex: each edge contributes its start
    corner and the interior multiples of ``spacing`` (half-open, so a point
    landing exactly on the edge end is left to the next corner). Outer ring
    first, then holes, each in ring order.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    out = []
    for ring in poly.rings():
        nxt = np.roll(ring, -1, axis=0)
        for aa, bb in zip(ring, nxt):
            elen = float(np.hypot(*(bb - aa)))
            out.append(aa)
            n_inner = int(np.ceil(elen / spacing - 1e-9)) - 1
            if n_inner > 0:
                ks = np.arange(1, n_inner + 1)
                out.extend(aa + (ks[:, None] * spacing / elen) * (bb - aa))
    return np.asarray(out)


def distance_to_boundary(p, bmap: BuildingMap) -> float:
    """Distance from a 2D point to the nearest building wall."""
    w0, w1, _ = bmap.wall_segments
    if len(w0) == 0:
        return np.inf
    p = np.asarray(p, dtype=float)[:2]
    ab = w1 - w0
    denom = np.maximum((ab * ab).sum(axis=1), 1e-300)
    t = np.clip(((p - w0) * ab).sum(axis=1) / denom, 0.0, 1.0)
    closest = w0 + t[:, None] * ab
    return float(np.sqrt(((p - closest) ** 2).sum(axis=1).min()))


# ---------------------------------------------------------------------------
# GeoJSON-style ingestion


def load_building_map(source) -> BuildingMap:
    """Build a validated map from a GeoJSON-style FeatureCollection.

    ``source`` may be a parsed dict, a JSON string, or a path. Features must
    be Polygon geometries in planar meters with a positive numeric ``height``
    property. An optional top-level ``bbox`` [xmin, ymin, xmax, ymax] fixes
    the area extent; otherwise the footprint bounds are used.
    """
    if isinstance(source, (str, Path)):
        p = Path(source)
        text = p.read_text() if p.exists() else str(source)
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed geometry document: {exc}") from exc
    elif isinstance(source, dict):
        doc = source
    else:
        raise ValueError("source must be a dict, JSON string, or path")

    if doc.get("type") != "FeatureCollection":
        raise ValueError("geometry document must be a FeatureCollection")
    features = doc.get("features")
    if not features:
        raise ValueError("geometry document contains no features")

    buildings = []
    for i, feat in enumerate(features):
        geometry = feat.get("geometry") or {}
        if geometry.get("type") != "Polygon":
            raise ValueError(
                f"feature {i}: unsupported geometry type {geometry.get('type')!r}"
            )
        rings = geometry.get("coordinates")
        if not rings:
            raise ValueError(f"feature {i}: polygon has no rings")
        height = (feat.get("properties") or {}).get("height")
        if height is None:
            raise ValueError(f"feature {i}: missing height property")
        if not isinstance(height, (int, float)) or height <= 0:
            raise ValueError(f"feature {i}: height must be a positive number")
        try:
            poly = Polygon.from_rings(rings[0], rings[1:])
        except ValueError as exc:
            raise ValueError(f"feature {i}: {exc}") from exc
        buildings.append(Building(poly, float(height)))

    bbox = doc.get("bbox")
    if bbox is not None:
        if len(bbox) != 4:
            raise ValueError("bbox must be [xmin, ymin, xmax, ymax]")
        extent = Rect(*map(float, bbox))
    else:
        bounds = [b.footprint.bounds for b in buildings]
        extent = Rect(
            min(r.xmin for r in bounds),
            min(r.ymin for r in bounds),
            max(r.xmax for r in bounds),
            max(r.ymax for r in bounds),
        )
    return BuildingMap(buildings, extent)

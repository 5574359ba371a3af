"""Synthetic building maps standing in for real city layouts.

The canyon map has large blocks and narrow streets (strong guided
propagation and deep shadow); the open-blocks map has small buildings and
wide open areas; the courtyard map adds enclosed inner yards for testing
the placement filters. Real data can be dropped in as GeoJSON instead.
"""
from __future__ import annotations

from .geom import Building, BuildingMap, Polygon, Rect, load_building_map


def _block_grid(area, block, street, heights, court=0.0) -> BuildingMap:
    pitch = block + street
    n = int((area - street + 1e-9) // pitch)
    if n < 1:
        raise ValueError("area too small for a single block")
    span = n * pitch + street
    off = (area - span) / 2 + street
    buildings = []
    for j in range(n):
        for i in range(n):
            x0 = off + i * pitch
            y0 = off + j * pitch
            outer = [
                (x0, y0),
                (x0 + block, y0),
                (x0 + block, y0 + block),
                (x0, y0 + block),
            ]
            holes = []
            if court > 0:
                c0x = x0 + (block - court) / 2
                c0y = y0 + (block - court) / 2
                holes.append(
                    [
                        (c0x, c0y),
                        (c0x + court, c0y),
                        (c0x + court, c0y + court),
                        (c0x, c0y + court),
                    ]
                )
            h = heights[(i + 2 * j) % len(heights)]
            buildings.append(Building(Polygon.from_rings(outer, holes), h))
    return BuildingMap(buildings, Rect(0.0, 0.0, area, area))


def canyon_map(area=216.0, block=52.0, street=20.0, heights=(18.0, 22.0, 26.0)) -> BuildingMap:
    """Grid of large tall blocks separated by narrow street canyons.

    The default sizing keeps desk-scale campaigns fast while leaving every
    cluster-grid cell used in the shipped configs with more than one AP.
    """
    return _block_grid(area, block, street, tuple(heights))


def open_blocks_map(area=300.0, block=24.0, street=45.0, heights=(8.0, 14.0)) -> BuildingMap:
    """Sparse low blocks with wide open areas between them."""
    return _block_grid(area, block, street, tuple(heights))


def courtyard_map(area=300.0, block=84.0, street=18.0, court=36.0, height=20.0) -> BuildingMap:
    """Large perimeter blocks, each enclosing an inaccessible courtyard."""
    return _block_grid(area, block, street, (height,), court=court)


def empty_map(area=300.0) -> BuildingMap:
    """Area with no buildings (free-space reference scenarios)."""
    return BuildingMap([], Rect(0.0, 0.0, area, area))


_KINDS = {
    "canyon": canyon_map,
    "open_blocks": open_blocks_map,
    "courtyard": courtyard_map,
    "empty": empty_map,
}


def map_from_config(cfg: dict, base_dir=None) -> BuildingMap:
    """Build a map from a structured config section.

    ``kind`` selects a synthetic generator (canyon, open_blocks, courtyard,
    empty) whose remaining keys are passed through as parameters, or
    ``geojson`` with a ``path`` key pointing at a FeatureCollection file.
    """
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    if kind == "geojson":
        path = cfg.get("path")
        if not path:
            raise ValueError("geojson map config needs a 'path' key")
        if base_dir is not None:
            from pathlib import Path

            path = Path(base_dir) / path
        return load_building_map(path)
    if kind not in _KINDS:
        raise ValueError(f"unknown map kind {kind!r}")
    return _KINDS[kind](**cfg)

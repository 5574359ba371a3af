import numpy as np
import pytest

from cfurban import channel, placement, synthmaps


@pytest.fixture(scope="session")
def canyon():
    return synthmaps.canyon_map()


@pytest.fixture(scope="session")
def canyon_grid(canyon):
    return placement.generate_ue_grid(canyon, 10.0, 1.0)


@pytest.fixture(scope="session")
def radio():
    return channel.RadioParams()


def square_doc(size=40.0, height=15.0, holes=()):
    """Minimal GeoJSON-style document with one square building."""
    rings = [[[0.0, 0.0], [size, 0.0], [size, size], [0.0, size], [0.0, 0.0]]]
    for h in holes:
        rings.append([list(p) for p in h])
    return {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": rings},
                "properties": {"height": height},
            }
        ],
    }


def rect_ring(x0, y0, x1, y1):
    return [[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]

"""Site-constrained AP placement and the candidate UE lattice.

APs go on building boundaries only. The pipeline has four stages:

  1. resample every building ring at d1-meter intervals (corners included),
  2. greedily drop candidates closer than d2 to an earlier survivor,
  3. drop candidates whose surroundings are unreachable from the area
     boundary (courtyards and sealed alleys), judged on the UE lattice,
  4. snap one AP per cell of a sqrt(M) x sqrt(M) grid to the nearest
     remaining candidate, sampling without replacement.

Stages 1-2 follow building input order and ring traversal order, which makes
the greedy filter fully deterministic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .geom import BuildingMap, Rect, points_in_buildings, resample_boundary

# Candidates are considered on-boundary within this tolerance (meters).
ON_BOUNDARY_EPS = 1e-6


@dataclass(frozen=True)
class PlacementParams:
    """Boundary spacing d1, minimum separation d2, AP count m (a square)."""

    d1: float
    d2: float
    m: int
    area: Rect
    ap_height: float = 11.0

    def __post_init__(self):
        if self.d1 <= 0 or self.d2 <= 0:
            raise ValueError("d1 and d2 must be positive")
        if self.m < 1 or math.isqrt(self.m) ** 2 != self.m:
            raise ValueError(f"ap count m={self.m} is not a perfect square")
        if self.ap_height <= 0:
            raise ValueError("ap height must be positive")


@dataclass
class ApLayout:
    positions: np.ndarray  # (M, 2)
    ap_height: float

    @property
    def m(self) -> int:
        return len(self.positions)


@dataclass
class UeGrid:
    """Outdoor cell centers of a regular lattice over the area."""

    points: np.ndarray  # (N, 2) outdoor cell centers
    ix: np.ndarray  # (N,) lattice column of each point
    iy: np.ndarray  # (N,) lattice row of each point
    nx: int
    ny: int
    spacing: float
    origin: tuple[float, float]  # center of cell (0, 0)
    ue_height: float

    @property
    def n(self) -> int:
        return len(self.points)


def generate_ue_grid(bmap: BuildingMap, spacing: float, ue_height: float = 1.0) -> UeGrid:
    """Cell centers of a spacing x spacing tiling of the area, outdoors only."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    ext = bmap.extent
    nx = int(ext.width / spacing + 1e-9)
    ny = int(ext.height / spacing + 1e-9)
    xs = ext.xmin + (np.arange(nx) + 0.5) * spacing
    ys = ext.ymin + (np.arange(ny) + 0.5) * spacing
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    ixs, iys = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    outdoor = ~points_in_buildings(pts, bmap)
    return UeGrid(
        points=pts[outdoor],
        ix=ixs.ravel()[outdoor],
        iy=iys.ravel()[outdoor],
        nx=nx,
        ny=ny,
        spacing=spacing,
        origin=(float(xs[0]) if nx else ext.xmin, float(ys[0]) if ny else ext.ymin),
        ue_height=ue_height,
    )


def prune_close_candidates(points: np.ndarray, d2: float) -> np.ndarray:
    """Greedy sequential filter: drop any point strictly closer than d2 to an
    earlier survivor. Order-dependent by design."""
    pts = np.asarray(points, dtype=float)
    if len(pts) == 0:
        return pts.copy()
    cell = d2
    buckets: dict[tuple[int, int], list[int]] = {}
    kept: list[int] = []
    d2sq = d2 * d2
    for i, (x, y) in enumerate(pts):
        cx, cy = int(math.floor(x / cell)), int(math.floor(y / cell))
        ok = True
        for bx in (cx - 1, cx, cx + 1):
            for by in (cy - 1, cy, cy + 1):
                for j in buckets.get((bx, by), ()):
                    dx = x - pts[j, 0]
                    dy = y - pts[j, 1]
                    if dx * dx + dy * dy < d2sq:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            kept.append(i)
            buckets.setdefault((cx, cy), []).append(i)
    return pts[kept]


def _reachable_outdoor_mask(grid: UeGrid) -> np.ndarray:
    """Boolean (nx, ny) mask of outdoor cells 4-connected to the grid border."""
    occ = np.zeros((grid.nx, grid.ny), dtype=bool)
    occ[grid.ix, grid.iy] = True
    labels, _ = ndimage.label(occ)  # default structure is 4-connectivity
    border = np.concatenate(
        [labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]]
    )
    good = np.unique(border[border > 0])
    return np.isin(labels, good)


def drop_unreachable_candidates(points: np.ndarray, grid: UeGrid) -> np.ndarray:
    """Keep candidates whose nearest outdoor lattice cell connects to the
    area boundary through outdoor cells (removes courtyards and sealed
    alleys)."""
    pts = np.asarray(points, dtype=float)
    if len(pts) == 0:
        return pts.copy()
    if grid.n == 0:
        raise ValueError("reachability grid has no outdoor cells")
    reach = _reachable_outdoor_mask(grid)
    tree = cKDTree(grid.points)
    _, nearest = tree.query(pts)
    ok = reach[grid.ix[nearest], grid.iy[nearest]]
    return pts[ok]


def candidate_stages(
    bmap: BuildingMap, params: PlacementParams, grid: UeGrid
) -> dict[str, np.ndarray]:
    """Candidate AP locations after each pipeline stage (see module doc)."""
    if not bmap.buildings:
        raise ValueError("map has no buildings to place APs on")
    boundary = np.concatenate(
        [resample_boundary(b.footprint, params.d1) for b in bmap.buildings]
    )
    pruned = prune_close_candidates(boundary, params.d2)
    outdoor = drop_unreachable_candidates(pruned, grid)
    if len(outdoor) == 0:
        raise ValueError("no candidate AP locations survive filtering")
    return {"boundary": boundary, "pruned": pruned, "outdoor": outdoor}


def generate_candidates(
    bmap: BuildingMap, params: PlacementParams, grid: UeGrid
) -> np.ndarray:
    """Final candidate AP locations (all stages applied)."""
    return candidate_stages(bmap, params, grid)["outdoor"]


def place_aps(candidates: np.ndarray, params: PlacementParams) -> ApLayout:
    """Assign each cell of the uniform sqrt(M) x sqrt(M) grid its nearest
    remaining candidate, removing every chosen candidate from the pool.

    Cells are visited in row-major order (y rows bottom-up, x within a row).
    Distance ties go to the candidate with lower x, then lower y.
    """
    cands = np.asarray(candidates, dtype=float)
    m = params.m
    if len(cands) < m:
        raise ValueError(
            f"step 4 shortfall: {m} APs requested but only {len(cands)} candidates"
        )
    r = math.isqrt(m)
    ext = params.area
    cw, ch = ext.width / r, ext.height / r
    available = np.ones(len(cands), dtype=bool)
    chosen = np.empty((m, 2))
    for k in range(m):
        i, j = divmod(k, r)
        center = np.array([ext.xmin + (j + 0.5) * cw, ext.ymin + (i + 0.5) * ch])
        idx = np.nonzero(available)[0]
        d2s = ((cands[idx] - center) ** 2).sum(axis=1)
        dmin = d2s.min()
        tied = idx[d2s <= dmin * (1 + 1e-12) + 1e-9]
        # lexicographic (x, then y) among numerically tied candidates
        best = tied[np.lexsort((cands[tied, 1], cands[tied, 0]))[0]]
        chosen[k] = cands[best]
        available[best] = False
    return ApLayout(positions=chosen, ap_height=params.ap_height)


def save_layout_csv(layout: ApLayout, path, manifest: str | None = None) -> None:
    from .csvio import open_output

    with open_output(path, manifest) as f:
        f.write("id,x,y\n")
        for i, (x, y) in enumerate(layout.positions):
            f.write(f"{i},{x:.10g},{y:.10g}\n")


def save_grid_csv(grid: UeGrid, path, manifest: str | None = None) -> None:
    from .csvio import open_output

    with open_output(path, manifest) as f:
        f.write("id,x,y\n")
        for i, (x, y) in enumerate(grid.points):
            f.write(f"{i},{x:.10g},{y:.10g}\n")

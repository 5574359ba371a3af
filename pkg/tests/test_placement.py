import numpy as np
import pytest

from cfurban import geom, placement, synthmaps
from cfurban.geom import Building, BuildingMap, Polygon, Rect
from cfurban.placement import (
    ApLayout,
    PlacementParams,
    candidate_stages,
    generate_candidates,
    generate_ue_grid,
    place_aps,
    prune_close_candidates,
    save_layout_csv,
)

from conftest import rect_ring


def test_params_reject_non_square_m():
    with pytest.raises(ValueError, match="perfect square"):
        PlacementParams(d1=10, d2=5, m=12, area=Rect(0, 0, 100, 100))


# ---------------------------------------------------------------------------
# greedy proximity pruning


def test_prune_greedy_rule_by_hand():
    pts = np.array([[0.0, 0.0], [3.0, 0.0], [6.0, 0.0]])
    kept = prune_close_candidates(pts, 5.0)
    # 3 is within 5 m of 0 (deleted); 6 is 6 m from 0 (kept)
    assert kept.tolist() == [[0.0, 0.0], [6.0, 0.0]]


def test_prune_keeps_exact_d2_separation():
    pts = np.array([[0.0, 0.0], [5.0, 0.0]])
    assert len(prune_close_candidates(pts, 5.0)) == 2


def test_prune_matches_bruteforce_oracle():
    rng = np.random.default_rng(4)
    pts = rng.uniform(0, 60, size=(300, 2))
    d2 = 7.0
    got = prune_close_candidates(pts, d2)
    kept = []
    for p in pts:  # independent quadratic oracle
        if all(np.hypot(*(p - q)) >= d2 for q in kept):
            kept.append(p)
    assert np.allclose(got, np.asarray(kept))
    dmat = np.hypot(*(got[:, None, :] - got[None, :, :]).transpose(2, 0, 1))
    np.fill_diagonal(dmat, np.inf)
    assert dmat.min() >= d2


# ---------------------------------------------------------------------------
# candidate pipeline


def isolated_square_map():
    poly = Polygon.from_rings(rect_ring(80, 80, 120, 120))
    return BuildingMap([Building(poly, 15.0)], Rect(0, 0, 200, 200))


def test_isolated_square_all_sixteen_survive():
    bmap = isolated_square_map()
    grid = generate_ue_grid(bmap, 10.0, 1.0)
    params = PlacementParams(d1=10, d2=5, m=16, area=bmap.extent)
    cands = generate_candidates(bmap, params, grid)
    assert len(cands) == 16
    dmat = np.hypot(*(cands[:, None, :] - cands[None, :, :]).transpose(2, 0, 1))
    np.fill_diagonal(dmat, np.inf)
    assert dmat.min() >= params.d2


def test_courtyard_candidates_removed():
    bmap = synthmaps.courtyard_map()
    grid = generate_ue_grid(bmap, 10.0, 1.0)
    params = PlacementParams(d1=10, d2=5, m=16, area=bmap.extent)
    stages = candidate_stages(bmap, params, grid)
    holes = [h for b in bmap.buildings for h in b.footprint.holes]
    assert holes

    def near_hole(p):
        return any(
            _dist_to_ring(p, hole) < 1e-6 for hole in holes
        )

    assert any(near_hole(p) for p in stages["pruned"])       # holes resampled
    assert not any(near_hole(p) for p in stages["outdoor"])  # then filtered


def _dist_to_ring(p, ring):
    a = ring
    b = np.roll(ring, -1, axis=0)
    ab = b - a
    t = np.clip(((p - a) * ab).sum(axis=1) / (ab * ab).sum(axis=1), 0, 1)
    closest = a + t[:, None] * ab
    return np.sqrt(((p - closest) ** 2).sum(axis=1).min())


def test_empty_map_has_no_candidates():
    bmap = synthmaps.empty_map(100.0)
    grid = generate_ue_grid(bmap, 10.0, 1.0)
    params = PlacementParams(d1=10, d2=5, m=4, area=bmap.extent)
    with pytest.raises(ValueError):
        generate_candidates(bmap, params, grid)


# ---------------------------------------------------------------------------
# grid assignment


def test_place_single_ap():
    params = PlacementParams(d1=10, d2=5, m=1, area=Rect(0, 0, 100, 100))
    layout = place_aps(np.array([[7.0, 9.0]]), params)
    assert layout.positions.tolist() == [[7.0, 9.0]]


def test_place_identity_when_candidates_at_centers():
    params = PlacementParams(d1=10, d2=5, m=4, area=Rect(0, 0, 100, 100))
    centers = np.array([[25.0, 25.0], [75.0, 25.0], [25.0, 75.0], [75.0, 75.0]])
    layout = place_aps(centers.copy(), params)
    assert np.allclose(np.sort(layout.positions, axis=0), np.sort(centers, axis=0))
    # row-major visit order: (25,25) first, then (75,25), ...
    assert np.allclose(layout.positions, centers)


def test_place_without_replacement_against_oracle():
    # one candidate equidistant from two cell centers; 6-candidate instance
    params = PlacementParams(d1=10, d2=5, m=4, area=Rect(0, 0, 100, 100))
    shared = np.array([50.0, 25.0])  # equidistant from (25,25) and (75,25)
    cands = np.array(
        [shared, [40.0, 60.0], [90.0, 40.0], [30.0, 80.0], [80.0, 80.0], [55.0, 50.0]]
    )
    layout = place_aps(cands.copy(), params)

    # exhaustive oracle: row-major centers, nearest remaining candidate
    centers = [(25.0, 25.0), (75.0, 25.0), (25.0, 75.0), (75.0, 75.0)]
    pool = cands.tolist()
    expected = []
    for c in centers:
        d = [np.hypot(p[0] - c[0], p[1] - c[1]) for p in pool]
        best = int(np.argmin(d))
        expected.append(pool.pop(best))
    assert np.allclose(layout.positions, np.asarray(expected))
    # the shared candidate went to the first (row-major) cell
    assert np.allclose(layout.positions[0], shared)
    # and all chosen positions are distinct
    assert len({tuple(p) for p in layout.positions.tolist()}) == 4


def test_place_tie_breaks_lexicographically():
    params = PlacementParams(d1=10, d2=5, m=1, area=Rect(0, 0, 100, 100))
    # both candidates exactly 25 m from the cell center (50, 50)
    cands = np.array([[75.0, 50.0], [25.0, 50.0]])
    layout = place_aps(cands, params)
    assert layout.positions[0].tolist() == [25.0, 50.0]


def test_place_shortfall_error():
    params = PlacementParams(d1=10, d2=5, m=4, area=Rect(0, 0, 100, 100))
    with pytest.raises(ValueError, match="step 4 shortfall"):
        place_aps(np.array([[1.0, 1.0]]), params)


def test_without_replacement_matters_on_shipped_map(canyon, canyon_grid):
    params = PlacementParams(d1=10, d2=5, m=36, area=canyon.extent)
    cands = generate_candidates(canyon, params, canyon_grid)
    layout = place_aps(cands, params)
    assert len({tuple(p) for p in layout.positions.tolist()}) == params.m

    # naive variant that samples with replacement: must collide somewhere,
    # which is exactly why the pool removal rule exists
    r = int(np.sqrt(params.m))
    cw = canyon.extent.width / r
    chosen = []
    for k in range(params.m):
        i, j = divmod(k, r)
        c = np.array([(j + 0.5) * cw, (i + 0.5) * cw])
        d = ((cands - c) ** 2).sum(axis=1)
        chosen.append(tuple(cands[int(np.argmin(d))]))
    assert len(set(chosen)) < params.m
    assert not np.allclose(np.asarray(chosen), layout.positions)


def test_layout_invariants_on_shipped_maps():
    for bmap in (synthmaps.canyon_map(), synthmaps.open_blocks_map()):
        grid = generate_ue_grid(bmap, 10.0, 1.0)
        for m in (16, 64):
            params = PlacementParams(d1=10, d2=5, m=m, area=bmap.extent)
            cands = generate_candidates(bmap, params, grid)
            layout = place_aps(cands, params)
            assert layout.m == m
            for p in layout.positions:
                assert geom.distance_to_boundary(p, bmap) <= 1e-6
            dmat = np.hypot(
                *(layout.positions[:, None] - layout.positions[None]).transpose(2, 0, 1)
            )
            np.fill_diagonal(dmat, np.inf)
            assert dmat.min() >= params.d2
            # every AP is one of the candidates, not an interpolation
            cand_set = {tuple(c) for c in cands.tolist()}
            assert all(tuple(p) in cand_set for p in layout.positions.tolist())


def test_placement_deterministic(canyon, canyon_grid, tmp_path):
    params = PlacementParams(d1=10, d2=5, m=16, area=canyon.extent)
    a = place_aps(generate_candidates(canyon, params, canyon_grid), params)
    b = place_aps(generate_candidates(canyon, params, canyon_grid), params)
    assert np.array_equal(a.positions, b.positions)
    save_layout_csv(a, tmp_path / "a.csv")
    save_layout_csv(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


# ---------------------------------------------------------------------------
# UE grid


def test_ue_grid_empty_map_750():
    bmap = synthmaps.empty_map(750.0)
    grid = generate_ue_grid(bmap, 10.0, 1.0)
    assert grid.n == 75 * 75


def test_ue_grid_fully_covered():
    poly = Polygon.from_rings(rect_ring(0, 0, 100, 100))
    bmap = BuildingMap([Building(poly, 10.0)], Rect(0, 0, 100, 100))
    grid = generate_ue_grid(bmap, 10.0, 1.0)
    assert grid.n == 0


def test_ue_grid_one_aligned_building_removes_one_cell():
    poly = Polygon.from_rings(rect_ring(100, 100, 110, 110))
    bmap = BuildingMap([Building(poly, 10.0)], Rect(0, 0, 750, 750))
    grid = generate_ue_grid(bmap, 10.0, 1.0)
    assert grid.n == 75 * 75 - 1


def test_ue_grid_points_on_lattice(canyon_grid):
    assert np.allclose((canyon_grid.points[:, 0] - 5.0) % 10.0, 0.0)
    assert np.allclose((canyon_grid.points[:, 1] - 5.0) % 10.0, 0.0)

"""CPU-cluster formation and UE-centric serving-set selection.

APs are partitioned into G x G square location clusters, each run by one
CPU. A UE anchors on its E strongest APs (by average SNR) and is then served
by the union of the clusters those anchors belong to, so the serving set for
a larger E is always a superset of the set for a smaller E.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import GainTable
from .geom import Rect
from .placement import ApLayout


@dataclass
class ClusterPlan:
    g: int
    cluster_of_ap: np.ndarray  # (M,) cluster id per AP
    aps_of_cluster: list[np.ndarray]  # G*G arrays of AP indices

    @property
    def n_clusters(self) -> int:
        return self.g * self.g

    def mean_cluster_size(self) -> float:
        return len(self.cluster_of_ap) / self.n_clusters


@dataclass
class ServingAssignment:
    mask: np.ndarray  # (M, K) bool, serving set per UE
    anchors: list[np.ndarray]  # per UE, ordered best-first anchor AP ids
    e: int

    @property
    def serving_sizes(self) -> np.ndarray:
        return self.mask.sum(axis=0)


def build_clusters(layout: ApLayout, area: Rect, g: int) -> ClusterPlan:
    """Tile the area into G x G equal cells; an AP belongs to the cell that
    contains it. Internal right/top cell edges belong to the higher-index
    cell; the area's own boundary belongs to the last cell."""
    if g < 1:
        raise ValueError("cluster grid dimension must be >= 1")
    pos = layout.positions
    cw = area.width / g
    chh = area.height / g
    ix = np.clip(np.floor((pos[:, 0] - area.xmin) / cw).astype(int), 0, g - 1)
    iy = np.clip(np.floor((pos[:, 1] - area.ymin) / chh).astype(int), 0, g - 1)
    cid = iy * g + ix
    groups = [np.nonzero(cid == c)[0] for c in range(g * g)]
    return ClusterPlan(g=g, cluster_of_ap=cid, aps_of_cluster=groups)


def _rank_aps(snr_col: np.ndarray) -> np.ndarray:
    """AP indices by descending SNR, ties broken by lower index."""
    m = len(snr_col)
    return np.lexsort((np.arange(m), -snr_col))


def select_serving_set(
    k: int,
    gains: GainTable,
    plan: ClusterPlan,
    e: int,
    ap_positions: np.ndarray | None = None,
    ue_position: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Anchor APs and serving mask for UE k.

    Anchors are the E APs with the highest average SNR (ties to the lower AP
    index); APs in outage only become anchors when fewer than E finite-SNR
    APs exist. A UE with no finite-SNR AP at all falls back to the cluster of
    its geometrically nearest AP (single anchor) and will be in outage.
    Returns (anchors, mask) with mask a boolean (M,) serving-set indicator.
    """
    m = gains.m
    if not 1 <= e <= m:
        raise ValueError(f"anchor count e={e} must be within 1..{m}")
    snr = gains.snr_db[:, k]
    finite = np.isfinite(snr)
    if finite.any():
        anchors = _rank_aps(snr)[:e]
    elif ap_positions is not None and ue_position is not None:
        d2 = ((np.asarray(ap_positions) - np.asarray(ue_position)) ** 2).sum(axis=1)
        anchors = np.array([int(np.argmin(d2))])
    else:
        anchors = np.array([0])
    mask = np.zeros(m, dtype=bool)
    for c in np.unique(plan.cluster_of_ap[anchors]):
        mask[plan.aps_of_cluster[c]] = True
    return anchors, mask


def select_serving_sets(
    gains: GainTable,
    plan: ClusterPlan,
    e: int,
    ap_positions: np.ndarray | None = None,
    ue_positions: np.ndarray | None = None,
) -> ServingAssignment:
    """Serving assignment for every UE column of the gain table."""
    masks = np.zeros((gains.m, gains.k), dtype=bool)
    anchors = []
    for k in range(gains.k):
        ue_pos = None if ue_positions is None else ue_positions[k]
        a, msk = select_serving_set(k, gains, plan, e, ap_positions, ue_pos)
        anchors.append(a)
        masks[:, k] = msk
    return ServingAssignment(mask=masks, anchors=anchors, e=e)


def ap_load(assignment: ServingAssignment) -> np.ndarray:
    """Served-UE count per AP (the per-AP power split denominator)."""
    return assignment.mask.sum(axis=1)


def save_assignment_csv(assignment: ServingAssignment, path, manifest: str | None = None) -> None:
    from .csvio import open_output

    with open_output(path, manifest) as f:
        f.write("ue_index,anchor_ap_ids,serving_ap_ids,serving_size\n")
        for k in range(assignment.mask.shape[1]):
            anchor_s = ";".join(str(int(a)) for a in assignment.anchors[k])
            serving = np.nonzero(assignment.mask[:, k])[0]
            serving_s = ";".join(str(int(s)) for s in serving)
            f.write(f"{k},{anchor_s},{serving_s},{len(serving)}\n")

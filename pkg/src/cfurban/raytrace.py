"""Deterministic image-method raytracer over 2.5D building prisms.

Enumerated paths per AP-UE pair:

  * the direct line of sight,
  * specular reflections off vertical building walls up to a configurable
    bounce count, found with the image method and validated for wall
    incidence, reflective-side orientation, wall height at the bounce point,
    and inter-bounce visibility,
  * optionally one knife-edge diffraction around a vertical building corner
    (no mixed reflection + diffraction paths).

Path powers add incoherently. Wall materials reduce to one scalar reflection
magnitude per bounce. There is no ground reflection and no rooftop path:
every interaction happens on a vertical face or edge, consistent with the
prism geometry.

Reflection chains are pruned by a wall-facing test only, so the enumeration
cost grows roughly with (facing pairs)^depth; depths above ~3 are intended
for small scenes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .channel import RadioParams, RaytraceParams
from .geom import BuildingMap, _segments_blocked_impl

# Pull path legs this far (meters) off their bounce/diffraction endpoints
# before blockage testing, so the interacting wall does not occlude itself.
_ENDPOINT_PULLBACK = 1e-6
_SIDE_EPS = 1e-9  # signed-distance threshold for "strictly on reflective side"
_CHAIN_CAP = 2_000_000


@dataclass
class PathInfo:
    kind: str  # "los" | "reflection" | "diffraction"
    bounces: int
    length: float  # 3D path length, meters
    gain: float  # linear power gain


def knife_edge_loss_db(nu) -> np.ndarray:
    """Knife-edge diffraction loss J(nu) in dB (0 below nu = -0.78)."""
    nu = np.asarray(nu, dtype=float)
    J = np.zeros_like(nu)
    m = nu > -0.78
    J[m] = 6.9 + 20.0 * np.log10(np.sqrt((nu[m] - 0.1) ** 2 + 1.0) + nu[m] - 0.1)
    return J


def _cross(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


class RayTracer:
    def __init__(self, bmap: BuildingMap, rt: RaytraceParams, radio: RadioParams):
        self.bmap = bmap
        self.rt = rt
        self.radio = radio
        self.wavelength = SPEED_OF_LIGHT / (radio.f * 1e6)

        w0, w1, wh = bmap.wall_segments
        self.w0, self.w1, self.wh = w0, w1, wh
        self.wvec = w1 - w0
        wlen = np.hypot(self.wvec[:, 0], self.wvec[:, 1])
        self.wlen = np.maximum(wlen, 1e-300)
        # unit normal pointing to the open-air (reflective) side
        self.wnormal = np.column_stack([self.wvec[:, 1], -self.wvec[:, 0]]) / self.wlen[:, None]
        self.corners, self.corner_h = bmap.corner_points
        self.chains = self._enumerate_chains()

    # -- chain enumeration --------------------------------------------------

    def _signed_dist(self, pts, wall_idx):
        """Signed distance of points to a wall line; negative = reflective side."""
        rel = np.asarray(pts, dtype=float) - self.w0[wall_idx]
        return -(rel @ self.wnormal[wall_idx])

    def _facing_matrix(self) -> np.ndarray:
        n = len(self.w0)
        if n == 0:
            return np.zeros((0, 0), dtype=bool)
        # endpoint signed distances of every wall against every wall line
        d00 = np.empty((n, n))
        d01 = np.empty((n, n))
        for i in range(n):
            rel0 = self.w0 - self.w0[i]
            rel1 = self.w1 - self.w0[i]
            d00[i] = -(rel0 @ self.wnormal[i])
            d01[i] = -(rel1 @ self.wnormal[i])
        ahead = (d00 < -_SIDE_EPS) | (d01 < -_SIDE_EPS)
        facing = ahead & ahead.T
        np.fill_diagonal(facing, False)
        return facing

    def _enumerate_chains(self) -> list[tuple[int, ...]]:
        depth = self.rt.max_reflections
        n = len(self.w0)
        if depth == 0 or n == 0:
            return []
        facing = self._facing_matrix()
        succ = [np.nonzero(facing[i])[0] for i in range(n)]
        chains: list[tuple[int, ...]] = []
        stack: list[tuple[int, ...]] = [(i,) for i in range(n)]
        while stack:
            ch = stack.pop(0)
            chains.append(ch)
            if len(chains) > _CHAIN_CAP:
                raise ValueError(
                    "reflection chain enumeration exceeds cap; lower max_reflections"
                )
            if len(ch) < depth:
                stack.extend(ch + (int(j),) for j in succ[ch[-1]])
        chains.sort(key=lambda ch: (len(ch), ch))
        return chains

    def _mirror(self, p, wall_idx):
        d = self._signed_dist(p[None, :], wall_idx)[0]
        return p + 2.0 * d * self.wnormal[wall_idx]

    # -- blockage helper ----------------------------------------------------

    def _blocked(self, a_xy, b_xy, a_h, b_h) -> np.ndarray:
        return _segments_blocked_impl(
            np.asarray(a_xy, dtype=float),
            np.asarray(b_xy, dtype=float),
            a_h,
            b_h,
            self.bmap,
        )

    # -- path enumeration ---------------------------------------------------

    def _iter_contributions(
        self, ap_xyz, ue_xy, ue_h
    ) -> Iterator[tuple[str, int, np.ndarray, np.ndarray, np.ndarray]]:
        """Yield (kind, bounces, valid_mask, length3d, gain) per path family.

        ue_xy is (N, 2); masks and per-path arrays are (N,).
        """
        ap = np.asarray(ap_xyz, dtype=float)
        ap_xy, ap_h = ap[:2], float(ap[2])
        n_ue = len(ue_xy)
        amp = self.wavelength / (4.0 * math.pi)
        dh = ue_h - ap_h

        # line of sight
        d2d = np.hypot(ue_xy[:, 0] - ap_xy[0], ue_xy[:, 1] - ap_xy[1])
        d3 = np.sqrt(d2d**2 + dh * dh)
        clear = ~self._blocked(
            np.broadcast_to(ap_xy, (n_ue, 2)), ue_xy,
            np.full(n_ue, ap_h), np.full(n_ue, ue_h),
        )
        valid = clear & (d3 > 1e-6)
        yield "los", 0, valid, d3, np.where(valid, (amp / np.maximum(d3, 1e-6)) ** 2, 0.0)

        for chain in self.chains:
            yield self._reflection_contribution(chain, ap_xy, ap_h, ue_xy, ue_h, amp)

        if self.rt.max_diffractions >= 1 and len(self.corners):
            yield from self._diffraction_contributions(ap_xy, ap_h, ue_xy, ue_h, amp)

    def _reflection_contribution(self, chain, ap_xy, ap_h, ue_xy, ue_h, amp):
        r = len(chain)
        n_ue = len(ue_xy)
        none = np.zeros(n_ue, dtype=bool)
        zeros = np.zeros(n_ue)
        # AP must sit strictly on the reflective side of the first wall
        if self._signed_dist(ap_xy[None], chain[0])[0] > -_SIDE_EPS:
            return "reflection", r, none, zeros, zeros

        images = []
        img = ap_xy
        for w in chain:
            img = self._mirror(img, w)
            images.append(img)

        # back-trace bounce points from the last wall toward the first
        pts = [None] * (r + 2)
        pts[0] = np.broadcast_to(ap_xy, (n_ue, 2))
        pts[r + 1] = ue_xy
        alive = np.ones(n_ue, dtype=bool)
        target = ue_xy
        for level in range(r - 1, -1, -1):
            w = chain[level]
            img = images[level]
            seg = target - img[None, :]
            e = self.wvec[w]
            rel = self.w0[w][None, :] - img[None, :]
            denom = _cross(seg, np.broadcast_to(e, seg.shape))
            with np.errstate(divide="ignore", invalid="ignore"):
                t = _cross(rel, np.broadcast_to(e, seg.shape)) / denom
                s = _cross(np.broadcast_to(rel, seg.shape), seg) / denom
            ok = (
                (np.abs(denom) > 1e-12)
                & (t > 1e-9)
                & (t < 1 - 1e-9)
                & (s > 1e-9)
                & (s < 1 - 1e-9)
            )
            alive &= ok
            if not alive.any():
                return "reflection", r, none, zeros, zeros
            hit = self.w0[w][None, :] + np.where(ok, s, 0.0)[:, None] * e[None, :]
            pts[level + 1] = hit
            target = hit

        # real-point side conditions at every bounce
        for level in range(r):
            w = chain[level]
            alive &= self._signed_dist(pts[level], w) < -_SIDE_EPS
            alive &= self._signed_dist(pts[level + 2], w) < -_SIDE_EPS
        if not alive.any():
            return "reflection", r, none, zeros, zeros

        # leg lengths, cumulative arc length, interpolated bounce heights
        legs = [
            np.hypot(pts[i + 1][:, 0] - pts[i][:, 0], pts[i + 1][:, 1] - pts[i][:, 1])
            for i in range(r + 1)
        ]
        total2d = np.sum(legs, axis=0)
        alive &= total2d > 1e-6
        cum = np.zeros(n_ue)
        heights = [np.full(n_ue, ap_h)]
        for i in range(r):
            cum = cum + legs[i]
            with np.errstate(invalid="ignore", divide="ignore"):
                h_i = ap_h + (ue_h - ap_h) * cum / np.maximum(total2d, 1e-300)
            heights.append(h_i)
            alive &= h_i < self.wh[chain[i]] - 1e-12
        heights.append(np.full(n_ue, ue_h))
        if not alive.any():
            return "reflection", r, none, zeros, zeros

        # blockage on every leg, endpoints pulled off the interacting walls
        idx = np.nonzero(alive)[0]
        blocked = np.zeros(len(idx), dtype=bool)
        for i in range(r + 1):
            a_xy = pts[i][idx].astype(float).copy()
            b_xy = pts[i + 1][idx].astype(float).copy()
            a_h = heights[i][idx].copy()
            b_h = heights[i + 1][idx].copy()
            leg = legs[i][idx]
            shift = np.minimum(_ENDPOINT_PULLBACK, 0.4 * leg)
            with np.errstate(invalid="ignore", divide="ignore"):
                u = (b_xy - a_xy) / np.maximum(leg, 1e-300)[:, None]
            if i > 0:  # leg starts at a bounce point
                a_xy = a_xy + u * shift[:, None]
            if i < r:  # leg ends at a bounce point
                b_xy = b_xy - u * shift[:, None]
            blocked |= self._blocked(a_xy, b_xy, a_h, b_h)
        alive[idx] &= ~blocked
        if not alive.any():
            return "reflection", r, none, zeros, zeros

        length3d = np.sqrt(total2d**2 + (ue_h - ap_h) ** 2)
        coeff = self.rt.reflection_coeff ** (2 * r)
        gain = np.where(
            alive, coeff * (amp / np.maximum(length3d, 1e-6)) ** 2, 0.0
        )
        return "reflection", r, alive, length3d, gain

    def _diffraction_contributions(self, ap_xy, ap_h, ue_xy, ue_h, amp):
        n_ue = len(ue_xy)
        hmax = max(ap_h, ue_h)
        for ci in range(len(self.corners)):
            cxy = self.corners[ci]
            ch = self.corner_h[ci]
            d1 = float(np.hypot(cxy[0] - ap_xy[0], cxy[1] - ap_xy[1]))
            if d1 < 1e-6:
                continue
            # cheap cull: every point of the AP leg sits at or below
            # max(ap_h, ue_h), so a blockage at that constant height implies
            # blockage for every UE
            u1 = (cxy - ap_xy) / d1
            leg1_end = cxy - u1 * min(_ENDPOINT_PULLBACK, 0.4 * d1)
            if self._blocked(
                ap_xy[None], leg1_end[None], np.array([hmax]), np.array([hmax])
            )[0]:
                continue

            d2 = np.hypot(ue_xy[:, 0] - cxy[0], ue_xy[:, 1] - cxy[1])
            total2d = d1 + d2
            with np.errstate(invalid="ignore", divide="ignore"):
                hc = ap_h + (ue_h - ap_h) * d1 / np.maximum(total2d, 1e-300)
            valid = (d2 > 1e-6) & (hc < ch - 1e-12)
            if not valid.any():
                continue
            idx = np.nonzero(valid)[0]

            # AP -> corner leg (2D geometry shared, heights vary per UE)
            blocked1 = self._blocked(
                np.broadcast_to(ap_xy, (len(idx), 2)),
                np.broadcast_to(leg1_end, (len(idx), 2)),
                np.full(len(idx), ap_h),
                hc[idx],
            )
            # corner -> UE leg
            leg = d2[idx]
            shift = np.minimum(_ENDPOINT_PULLBACK, 0.4 * leg)
            u2 = (ue_xy[idx] - cxy[None, :]) / leg[:, None]
            start = cxy[None, :] + u2 * shift[:, None]
            blocked2 = self._blocked(
                start, ue_xy[idx], hc[idx], np.full(len(idx), ue_h)
            )
            keep = ~(blocked1 | blocked2)
            valid[idx] &= keep
            if not valid.any():
                continue

            d1_3d = np.sqrt(d1**2 + (hc - ap_h) ** 2)
            d2_3d = np.sqrt(d2**2 + (ue_h - hc) ** 2)
            direct = np.sqrt(
                (ue_xy[:, 0] - ap_xy[0]) ** 2
                + (ue_xy[:, 1] - ap_xy[1]) ** 2
                + (ue_h - ap_h) ** 2
            )
            excess = np.maximum(d1_3d + d2_3d - direct, 0.0)
            nu = 2.0 * np.sqrt(excess / self.wavelength)
            dsq = 10.0 ** (-knife_edge_loss_db(nu) / 10.0)
            length3d = d1_3d + d2_3d
            gain = np.where(
                valid, dsq * (amp / np.maximum(length3d, 1e-6)) ** 2, 0.0
            )
            yield "diffraction", 0, valid, length3d, gain

    # -- public API -----------------------------------------------------------

    def trace_many(self, ap_xyz, ue_xyz) -> np.ndarray:
        """Path loss in dB from one AP to (N, 3) UE positions; +inf = outage."""
        ue_xyz = np.asarray(ue_xyz, dtype=float).reshape(-1, 3)
        ue_h_vals = np.unique(ue_xyz[:, 2])
        total = np.zeros(len(ue_xyz))
        for ue_h in ue_h_vals:  # contributions assume one UE height per batch
            sel = ue_xyz[:, 2] == ue_h
            sub = ue_xyz[sel, :2]
            acc = np.zeros(len(sub))
            for _, _, _, _, gain in self._iter_contributions(ap_xyz, sub, float(ue_h)):
                acc += gain
            total[sel] = acc
        pl = np.full(len(ue_xyz), np.inf)
        pos = total > 0
        pl[pos] = -10.0 * np.log10(total[pos])
        rx_dbm = self.radio.tx_power - pl
        pl[rx_dbm < self.rt.outage_threshold_dbm] = np.inf
        return pl

    def trace(self, ap_xyz, ue_xyz) -> float:
        return float(self.trace_many(ap_xyz, np.asarray(ue_xyz, dtype=float)[None, :])[0])

    def trace_paths(self, ap_xyz, ue_xyz) -> list[PathInfo]:
        """Individual surviving paths for one pair (diagnostics and tests)."""
        ue = np.asarray(ue_xyz, dtype=float)
        out = []
        for kind, bounces, valid, length, gain in self._iter_contributions(
            ap_xyz, ue[None, :2], float(ue[2])
        ):
            if valid[0]:
                out.append(PathInfo(kind, bounces, float(length[0]), float(gain[0])))
        return out


def trace_gain(ap_xyz, ue_xyz, bmap: BuildingMap, rt: RaytraceParams,
               radio: RadioParams) -> float:
    """Path loss in dB for a single AP-UE pair (+inf on outage).

    Convenience wrapper that builds a tracer per call; construct a RayTracer
    directly when tracing many pairs over the same map.
    """
    a = np.asarray(ap_xyz, dtype=float)
    u = np.asarray(ue_xyz, dtype=float)
    if np.allclose(a[:2], u[:2]) and abs(a[2] - u[2]) < 1e-12:
        raise ValueError("AP and UE positions must differ")
    return RayTracer(bmap, rt, radio).trace(a, u)

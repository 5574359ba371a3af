"""Large-scale channel gain between every AP-UE pair.

Three interchangeable backends produce the path-loss matrix: a three-slope
log-distance model with log-normal shadowing, a deterministic raytracer over
the building map, and an imported-grid backend for externally produced
path-loss lattices. Outage is represented as +inf dB path loss (-inf dB SNR).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

BACKEND_LOG_DISTANCE = "log_distance"
BACKEND_RAYTRACE = "raytrace"
BACKEND_IMPORTED = "imported"

GRID_UNIT = "db-pathloss"


def dbm_to_mw(x: float) -> float:
    return 10.0 ** (x / 10.0)


@dataclass(frozen=True)
class RadioParams:
    """Link-budget parameters. f is in MHz, bandwidth in Hz, powers in dBm."""

    f: float = 2000.0
    tx_power: float = 20.0
    noise_figure: float = 9.0
    bandwidth: float = 20e6
    sigma_shadow: float = 8.0
    d0: float = 10.0
    dc: float = 50.0

    def __post_init__(self):
        if self.f <= 0:
            raise ValueError("carrier frequency must be positive")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if not self.d0 < self.dc:
            raise ValueError("d0 must be smaller than dc")
        if self.sigma_shadow < 0:
            raise ValueError("shadowing deviation must be non-negative")

    @property
    def noise_dbm(self) -> float:
        """Thermal noise floor plus receiver noise figure."""
        return -174.0 + 10.0 * math.log10(self.bandwidth) + self.noise_figure


@dataclass(frozen=True)
class RaytraceParams:
    max_reflections: int = 2
    max_diffractions: int = 1
    reflection_coeff: float = 0.6
    outage_threshold_dbm: float = -250.0

    def __post_init__(self):
        if self.max_reflections < 0:
            raise ValueError("max_reflections must be >= 0")
        if self.max_diffractions not in (0, 1):
            raise ValueError("max_diffractions must be 0 or 1")
        if not 0.0 < self.reflection_coeff < 1.0:
            raise ValueError("reflection coefficient must be in (0, 1)")


# ---------------------------------------------------------------------------
# Log-distance model


def cost231_offset(params: RadioParams, h_ap: float, h_ue: float) -> float:
    """COST231-Hata urban offset (path loss at 1 km), in dB.

    L0 = 46.3 + 33.9 log10(f) - 13.82 log10(h_ap)
         - (1.1 log10(f) - 0.7) h_ue + (1.56 log10(f) - 0.8)

    with f in MHz and heights in meters.
    """
    if params.f <= 0 or h_ap <= 0:
        raise ValueError("carrier frequency and AP height must be positive")
    lf = math.log10(params.f)
    return (
        46.3
        + 33.9 * lf
        - 13.82 * math.log10(h_ap)
        - (1.1 * lf - 0.7) * h_ue
        + (1.56 * lf - 0.8)
    )


def three_slope_pl(d, l0: float, params: RadioParams):
    """Mean three-slope log-distance path loss in dB at distance d (meters).

    Distances enter the logarithms in kilometers, so the far slope passes
    through l0 at 1 km. Below d0 the loss is constant; between d0 and dc it
    grows at 20 dB/decade, beyond dc at 35 dB/decade. Continuous at both
    breakpoints.
    """
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr <= 0):
        raise ValueError("distance must be positive")
    d_km = d_arr / 1000.0
    d0_km = params.d0 / 1000.0
    dc_km = params.dc / 1000.0
    near = l0 + 15.0 * math.log10(dc_km) + 20.0 * math.log10(d0_km)
    with np.errstate(divide="ignore"):
        mid = l0 + 15.0 * math.log10(dc_km) + 20.0 * np.log10(d_km)
        far = l0 + 35.0 * np.log10(d_km)
    out = np.select([d_arr <= params.d0, d_arr <= params.dc], [near, mid], default=far)
    return float(out) if np.isscalar(d) else out


def apply_shadowing(mean_pl, sigma: float, z):
    """Add log-normal shadowing in its dB form: mean + sigma * z."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    return np.asarray(mean_pl) + sigma * np.asarray(z)


def snr_from_pl(pl, params: RadioParams):
    """Average SNR in dB from a path loss in dB, at full AP transmit power."""
    return params.tx_power - np.asarray(pl) - params.noise_dbm


# ---------------------------------------------------------------------------
# Backends


class LogDistanceBackend:
    """Three-slope mean path loss plus i.i.d. per-pair shadowing draws."""

    tag = BACKEND_LOG_DISTANCE

    def __init__(self, radio: RadioParams, ap_height: float, ue_height: float):
        self.radio = radio
        self.ap_height = ap_height
        self.ue_height = ue_height
        self.l0 = cost231_offset(radio, ap_height, ue_height)

    def mean_path_loss(self, ap_xy, ue_xy) -> np.ndarray:
        ap_xy = np.asarray(ap_xy, dtype=float)
        ue_xy = np.asarray(ue_xy, dtype=float)
        diff = ap_xy[:, None, :] - ue_xy[None, :, :]
        dh = self.ap_height - self.ue_height
        d = np.sqrt((diff**2).sum(axis=2) + dh * dh)
        return three_slope_pl(d, self.l0, self.radio)

    def path_loss(self, ap_xy, ue_xy, rng=None) -> np.ndarray:
        pl = self.mean_path_loss(ap_xy, ue_xy)
        if rng is not None:
            z = rng.standard_normal(pl.shape)
            pl = apply_shadowing(pl, self.radio.sigma_shadow, z)
        return pl


class RaytraceBackend:
    """Deterministic path loss from the image-method raytracer."""

    tag = BACKEND_RAYTRACE

    def __init__(self, bmap, rt: RaytraceParams, radio: RadioParams,
                 ap_height: float, ue_height: float):
        from .raytrace import RayTracer

        self.ap_height = ap_height
        self.ue_height = ue_height
        self.tracer = RayTracer(bmap, rt, radio)

    def path_loss(self, ap_xy, ue_xy, rng=None) -> np.ndarray:
        ap_xy = np.asarray(ap_xy, dtype=float)
        ue_xy = np.asarray(ue_xy, dtype=float)
        ue_xyz = np.column_stack([ue_xy, np.full(len(ue_xy), self.ue_height)])
        rows = [
            self.tracer.trace_many((x, y, self.ap_height), ue_xyz)
            for x, y in ap_xy
        ]
        return np.vstack(rows)


@dataclass
class GainGrid:
    """Regular path-loss lattice for one AP; samples at
    (x0 + ix * spacing, y0 + iy * spacing)."""

    ap_id: int
    x0: float
    y0: float
    spacing: float
    nx: int
    ny: int
    values: np.ndarray  # (ny, nx) path loss dB

    def lookup(self, ue_xy) -> np.ndarray:
        """Nearest-lattice-point path loss; outside the lattice is outage."""
        ue_xy = np.asarray(ue_xy, dtype=float)
        ix = np.rint((ue_xy[:, 0] - self.x0) / self.spacing).astype(int)
        iy = np.rint((ue_xy[:, 1] - self.y0) / self.spacing).astype(int)
        ok = (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny)
        out = np.full(len(ue_xy), np.inf)
        out[ok] = self.values[iy[ok], ix[ok]]
        return out


class ImportedBackend:
    """Path loss served from externally produced per-AP gain grids."""

    tag = BACKEND_IMPORTED

    def __init__(self, grids: list[GainGrid]):
        self.grids = {g.ap_id: g for g in grids}

    def path_loss(self, ap_xy, ue_xy, rng=None) -> np.ndarray:
        ap_xy = np.asarray(ap_xy, dtype=float)
        rows = []
        for m in range(len(ap_xy)):
            if m not in self.grids:
                raise ValueError(f"gain grid missing ap_id {m}")
            rows.append(self.grids[m].lookup(ue_xy))
        return np.vstack(rows)


# ---------------------------------------------------------------------------
# Gain table


@dataclass
class GainTable:
    """Per AP-UE pair path loss and average SNR, both in dB.

    Rows index APs, columns index UE positions. snr_db is the full-power
    link budget tx_power - pathloss - noise; the per-UE power split happens
    downstream in the precoder.
    """

    gains_db: np.ndarray
    snr_db: np.ndarray
    backend_tag: str

    @property
    def m(self) -> int:
        return self.gains_db.shape[0]

    @property
    def k(self) -> int:
        return self.gains_db.shape[1]

    def linear_gains(self) -> np.ndarray:
        """Linear power gains 10^(-PL/10); outage entries become 0."""
        with np.errstate(over="ignore"):
            g = np.power(10.0, -self.gains_db / 10.0)
        g[~np.isfinite(self.gains_db)] = 0.0
        return g


def build_gain_table(layout, ue_xy, backend, radio: RadioParams, rng=None) -> GainTable:
    """Fill the M x K table for the given backend.

    The rng is only consumed by backends with random components (shadowing);
    deterministic backends ignore it.
    """
    ue_xy = np.asarray(ue_xy, dtype=float)
    if len(ue_xy) == 0 or layout.m == 0:
        raise ValueError("need at least one AP and one UE position")
    pl = backend.path_loss(layout.positions, ue_xy, rng)
    return GainTable(pl, snr_from_pl(pl, radio), backend.tag)


# ---------------------------------------------------------------------------
# Gain-grid file format: per AP a header line followed by ny rows of nx
# comma-separated path-loss samples (row iy ascending), e.g.
#
#   # ap_id=0 x0=5.0 y0=5.0 spacing=10.0 nx=3 ny=2 unit=db-pathloss
#   101.2,103.4,inf
#   99.0,100.1,102.2

_HEADER_RE = re.compile(r"^#\s*(ap_id=.*)$")


def write_gain_grid(path, grids: list[GainGrid], manifest: str | None = None) -> None:
    from .csvio import fmt, open_output

    with open_output(path, manifest) as f:
        for g in grids:
            f.write(
                f"# ap_id={g.ap_id} x0={g.x0:.10g} y0={g.y0:.10g} "
                f"spacing={g.spacing:.10g} nx={g.nx} ny={g.ny} unit={GRID_UNIT}\n"
            )
            for iy in range(g.ny):
                f.write(",".join(fmt(v) for v in g.values[iy]) + "\n")


def _parse_header(line: str) -> dict:
    fields = {}
    for tok in line.split():
        if "=" in tok:
            k, v = tok.split("=", 1)
            fields[k] = v
    return fields


def load_gain_grid(source, layout) -> ImportedBackend:
    """Parse a gain-grid document and validate it against the AP layout.

    Every AP id 0..M-1 must be present, each lattice must be regular
    (positive spacing, nx * ny samples), and the declared unit must be
    db-pathloss.
    """
    if isinstance(source, (str, Path)) and Path(str(source)).exists():
        text = Path(source).read_text()
    else:
        text = str(source)
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("# manifest=")]

    grids = []
    i = 0
    while i < len(lines):
        m = _HEADER_RE.match(lines[i])
        if not m:
            raise ValueError(f"expected a grid header at line {i + 1}")
        hdr = _parse_header(m.group(1))
        try:
            ap_id = int(hdr["ap_id"])
            x0, y0 = float(hdr["x0"]), float(hdr["y0"])
            spacing = float(hdr["spacing"])
            nx, ny = int(hdr["nx"]), int(hdr["ny"])
        except (KeyError, ValueError) as exc:
            raise ValueError(f"malformed grid header at line {i + 1}: {exc}") from exc
        unit = hdr.get("unit")
        if unit != GRID_UNIT:
            raise ValueError(f"unit mismatch for ap_id {ap_id}: {unit!r}")
        if spacing <= 0 or nx < 1 or ny < 1:
            raise ValueError(f"irregular lattice for ap_id {ap_id}")
        rows = []
        for r in range(ny):
            if i + 1 + r >= len(lines):
                raise ValueError(f"irregular lattice for ap_id {ap_id}: missing rows")
            vals = [float(v) for v in lines[i + 1 + r].split(",")]
            if len(vals) != nx:
                raise ValueError(f"irregular lattice for ap_id {ap_id}: row width")
            rows.append(vals)
        grids.append(GainGrid(ap_id, x0, y0, spacing, nx, ny, np.asarray(rows)))
        i += 1 + ny

    have = {g.ap_id for g in grids}
    for m_id in range(layout.m):
        if m_id not in have:
            raise ValueError(f"gain grid missing ap_id {m_id}")
    return ImportedBackend(grids)


def save_gain_table_csv(table: GainTable, path, manifest: str | None = None) -> None:
    from .csvio import fmt, open_output

    with open_output(path, manifest) as f:
        f.write("ap_id,ue_index,pathloss_db,snr_db\n")
        for m in range(table.m):
            for k in range(table.k):
                f.write(f"{m},{k},{fmt(table.gains_db[m, k])},{fmt(table.snr_db[m, k])}\n")

"""Monte-Carlo campaign driver and metrics aggregation.

A campaign sweeps (backend, G, E) combinations over independent UE drops.
Each drop samples K distinct UE positions from the candidate lattice, builds
the gain columns for them, runs serving-set selection and the SE engine, and
tags every UE with an inside-inner-area flag so border UEs can be filtered
before aggregation.

Determinism: every random stream is derived from (seed, drop_index, salt),
so drops can run in any order on any number of workers and still reproduce
the exact same report. Deterministic backends are precomputed once over the
full lattice and only indexed per drop.
"""
from __future__ import annotations

import multiprocessing
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    BACKEND_IMPORTED,
    BACKEND_LOG_DISTANCE,
    BACKEND_RAYTRACE,
    GainTable,
    ImportedBackend,
    LogDistanceBackend,
    RadioParams,
    RaytraceBackend,
    RaytraceParams,
    snr_from_pl,
)
from .geom import BuildingMap, Rect
from .placement import ApLayout, UeGrid
from .serving import ClusterPlan, build_clusters, select_serving_sets
from .spectral import FrameParams, downlink_se

_SALT_UE = 101
_SALT_SHADOW = 102
_SALT_FADING = 103


def stream(seed: int, drop_index: int, salt: int) -> np.random.Generator:
    """Independent generator for one (drop, purpose) pair."""
    return np.random.default_rng(np.random.SeedSequence([seed, drop_index, salt]))


@dataclass
class CampaignConfig:
    k: int
    n_drops: int
    seed: int
    inner: Rect
    sweep: list[tuple[int, int]]  # (G, E) pairs
    backends: list[str]
    radio: RadioParams = field(default_factory=RadioParams)
    rt: RaytraceParams = field(default_factory=RaytraceParams)
    frame: FrameParams = field(default_factory=FrameParams)
    percentile_band: float = 1.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.n_drops < 1:
            raise ValueError("n_drops must be >= 1")
        if not self.sweep:
            raise ValueError("sweep must contain at least one (G, E) pair")
        for b in self.backends:
            if b not in (BACKEND_LOG_DISTANCE, BACKEND_RAYTRACE, BACKEND_IMPORTED):
                raise ValueError(f"unknown backend {b!r}")


@dataclass
class CampaignStatic:
    """Per-campaign precomputed state shared by all drops."""

    bmap: BuildingMap
    layout: ApLayout
    grid: UeGrid
    plans: dict[int, ClusterPlan]
    mean_pl: dict[str, np.ndarray]  # backend tag -> (M, n_lattice) mean path loss
    config: CampaignConfig


def prepare_static(
    cfg: CampaignConfig,
    bmap: BuildingMap,
    layout: ApLayout,
    grid: UeGrid,
    imported: ImportedBackend | None = None,
) -> CampaignStatic:
    """Precompute cluster plans and full-lattice path-loss matrices."""
    if grid.n < cfg.k:
        raise ValueError(f"candidate lattice has {grid.n} cells, fewer than k={cfg.k}")
    plans = {g: build_clusters(layout, bmap.extent, g) for g, _ in cfg.sweep}
    mean_pl: dict[str, np.ndarray] = {}
    for tag in cfg.backends:
        if tag == BACKEND_LOG_DISTANCE:
            be = LogDistanceBackend(cfg.radio, layout.ap_height, grid.ue_height)
            mean_pl[tag] = be.mean_path_loss(layout.positions, grid.points)
        elif tag == BACKEND_RAYTRACE:
            be = RaytraceBackend(bmap, cfg.rt, cfg.radio, layout.ap_height, grid.ue_height)
            mean_pl[tag] = be.path_loss(layout.positions, grid.points)
        else:
            if imported is None:
                raise ValueError("imported backend selected but no gain grid provided")
            mean_pl[tag] = imported.path_loss(layout.positions, grid.points)
    return CampaignStatic(bmap, layout, grid, plans, mean_pl, cfg)


def drop_gain_table(static: CampaignStatic, tag: str, drop_index: int,
                    cand_idx: np.ndarray) -> GainTable:
    """Gain columns for one drop's sampled lattice cells."""
    cfg = static.config
    pl = static.mean_pl[tag][:, cand_idx]
    if tag == BACKEND_LOG_DISTANCE:
        rng = stream(cfg.seed, drop_index, _SALT_SHADOW)
        pl = pl + cfg.radio.sigma_shadow * rng.standard_normal(pl.shape)
    return GainTable(pl, snr_from_pl(pl, cfg.radio), tag)


def run_drop(drop_index: int, static: CampaignStatic) -> dict:
    """One UE drop: sample positions, evaluate every sweep point.

    Returns plain arrays keyed by (backend, G, E) so results can cross
    process boundaries and be reduced in drop order.
    """
    cfg = static.config
    grid = static.grid
    rng_ue = stream(cfg.seed, drop_index, _SALT_UE)
    cand_idx = np.sort(rng_ue.choice(grid.n, size=cfg.k, replace=False))
    pts = grid.points[cand_idx]
    inside = np.asarray(cfg.inner.contains(pts[:, 0], pts[:, 1]), dtype=bool)

    out = {
        "drop": drop_index,
        "cand_idx": cand_idx,
        "x": pts[:, 0],
        "y": pts[:, 1],
        "inside": inside,
        "sweep": {},
        "link_snr": {},
    }
    for tag in cfg.backends:
        table = drop_gain_table(static, tag, drop_index, cand_idx)
        out["link_snr"][tag] = table.snr_db.ravel().copy()
        for g, e in cfg.sweep:
            assignment = select_serving_sets(
                table, static.plans[g], e,
                ap_positions=static.layout.positions, ue_positions=pts,
            )
            rng_fading = stream(cfg.seed, drop_index, _SALT_FADING)
            res = downlink_se(table, assignment, cfg.frame, cfg.radio, rng_fading)
            out["sweep"][(tag, g, e)] = {
                "se": res.se_per_ue,
                "sinr": res.sinr_per_ue,
                "size": res.serving_size_per_ue.astype(np.int64),
            }
    return out


def border_filter(records: dict, inner: Rect) -> dict:
    """Keep only per-UE entries whose position lies in the closed inner
    rectangle. Per-UE arrays (including those nested in sub-dicts, such as
    the per-sweep-point results) are filtered; anything whose leading
    dimension does not match the UE count passes through unchanged."""
    keep = np.asarray(inner.contains(records["x"], records["y"]), dtype=bool)

    def walk(obj):
        if isinstance(obj, dict):
            return {k: walk(v) for k, v in obj.items()}
        if isinstance(obj, np.ndarray) and obj.shape[:1] == keep.shape:
            return obj[keep]
        return obj

    return walk(records)


# ---------------------------------------------------------------------------
# Aggregation


@dataclass
class SweepSummary:
    backend: str
    g: int
    e: int
    n_samples: int
    mean_se: float
    median_se: float
    likely95_se: float
    mean_size: float
    size_at_median: float
    size_at_95likely: float


@dataclass
class CampaignReport:
    summaries: list[SweepSummary]
    se_samples: dict[tuple, np.ndarray]
    size_samples: dict[tuple, np.ndarray]
    link_snr: dict[str, np.ndarray]
    n_total: int
    n_kept: int


def _band_mean(se: np.ndarray, sizes: np.ndarray, center_pct: float, band: float) -> float:
    """Mean serving size over UEs whose SE falls in the percentile band
    [center - band, center + band]."""
    lo, hi = np.percentile(se, [max(center_pct - band, 0.0), min(center_pct + band, 100.0)])
    m = (se >= lo) & (se <= hi)
    if not m.any():
        target = np.percentile(se, center_pct)
        m = np.zeros(len(se), dtype=bool)
        m[int(np.argmin(np.abs(se - target)))] = True
    return float(sizes[m].mean())


def aggregate(drop_results: list[dict], cfg: CampaignConfig) -> CampaignReport:
    """Pool filtered per-UE samples and summarize each sweep point.

    The 95%-likely SE is the 5th percentile of the pooled distribution
    (linear interpolation between order statistics). The serving size "at"
    the median / 95%-likely point is band-averaged over UEs within
    +-percentile_band points of the 50th / 5th percentile.
    """
    drop_results = sorted(drop_results, key=lambda r: r["drop"])
    n_total = sum(len(r["x"]) for r in drop_results)
    kept = [border_filter(r, cfg.inner) for r in drop_results]
    n_kept = sum(len(r["x"]) for r in kept)
    if n_kept == 0:
        raise ValueError("no UE samples remain inside the inner area")

    se_samples: dict[tuple, np.ndarray] = {}
    size_samples: dict[tuple, np.ndarray] = {}
    summaries = []
    for tag in cfg.backends:
        for g, e in cfg.sweep:
            key = (tag, g, e)
            se = np.concatenate([r["sweep"][key]["se"] for r in kept])
            sizes = np.concatenate([r["sweep"][key]["size"] for r in kept])
            se_samples[key] = se
            size_samples[key] = sizes
            summaries.append(
                SweepSummary(
                    backend=tag,
                    g=g,
                    e=e,
                    n_samples=len(se),
                    mean_se=float(se.mean()),
                    median_se=float(np.percentile(se, 50)),
                    likely95_se=float(np.percentile(se, 5)),
                    mean_size=float(sizes.mean()),
                    size_at_median=_band_mean(se, sizes, 50.0, cfg.percentile_band),
                    size_at_95likely=_band_mean(se, sizes, 5.0, cfg.percentile_band),
                )
            )
    link = {
        tag: np.concatenate([r["link_snr"][tag] for r in drop_results])
        for tag in cfg.backends
    }
    return CampaignReport(summaries, se_samples, size_samples, link, n_total, n_kept)


# ---------------------------------------------------------------------------
# Parallel execution

_WORKER_STATIC: CampaignStatic | None = None


def _init_worker(static: CampaignStatic) -> None:
    global _WORKER_STATIC
    _WORKER_STATIC = static


def _run_drop_task(drop_index: int) -> dict:
    return run_drop(drop_index, _WORKER_STATIC)


def run_campaign(static: CampaignStatic, workers: int = 1) -> CampaignReport:
    """Execute all drops (optionally in parallel) and aggregate.

    Results are reduced in drop order, so the report is identical for any
    worker count.
    """
    cfg = static.config
    indices = list(range(cfg.n_drops))
    if workers <= 1:
        results = [run_drop(i, static) for i in indices]
    else:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(workers, initializer=_init_worker, initargs=(static,)) as pool:
            results = pool.map(_run_drop_task, indices)
    return aggregate(results, cfg)


# ---------------------------------------------------------------------------
# Heatmap and link-SNR exports


@dataclass
class Heatmap:
    ap_index: int
    x0: float
    y0: float
    spacing: float
    nx: int
    ny: int
    values: np.ndarray  # (ny, nx) snr dB; nan for indoor cells


def snr_heatmap(table: GainTable, grid: UeGrid, ap_index: int) -> Heatmap:
    """SNR lattice of one AP over the full candidate grid (nan = indoor)."""
    if not 0 <= ap_index < table.m:
        raise ValueError(f"ap_index {ap_index} out of range 0..{table.m - 1}")
    if table.k != grid.n:
        raise ValueError("gain table was not computed over the full grid")
    values = np.full((grid.ny, grid.nx), np.nan)
    values[grid.iy, grid.ix] = table.snr_db[ap_index]
    return Heatmap(
        ap_index=ap_index,
        x0=grid.origin[0],
        y0=grid.origin[1],
        spacing=grid.spacing,
        nx=grid.nx,
        ny=grid.ny,
        values=values,
    )


def save_heatmap_csv(hm: Heatmap, path, manifest: str | None = None) -> None:
    from .csvio import fmt, open_output

    with open_output(path, manifest) as f:
        f.write(
            f"# ap_id={hm.ap_index} x0={hm.x0:.10g} y0={hm.y0:.10g} "
            f"spacing={hm.spacing:.10g} nx={hm.nx} ny={hm.ny} unit=db-snr\n"
        )
        for iy in range(hm.ny):
            f.write(",".join(fmt(v) for v in hm.values[iy]) + "\n")


@dataclass
class LinkSnrCdf:
    values: np.ndarray  # sorted finite SNR samples, dB
    outage_fraction: float


def link_snr_cdf(snr_samples) -> LinkSnrCdf:
    """Pooled link-SNR CDF; -inf entries are reported as an outage mass."""
    pooled = np.concatenate([np.asarray(s).ravel() for s in snr_samples])
    finite = np.isfinite(pooled)
    vals = np.sort(pooled[finite])
    outage = 1.0 - finite.sum() / len(pooled) if len(pooled) else 0.0
    return LinkSnrCdf(values=vals, outage_fraction=float(outage))


def save_cdf_csv(cdf: LinkSnrCdf, path, manifest: str | None = None) -> None:
    from .csvio import fmt, open_output

    with open_output(path, manifest) as f:
        f.write(f"# outage_fraction={cdf.outage_fraction:.10g}\n")
        f.write("snr_db,cdf\n")
        n = len(cdf.values)
        for i, v in enumerate(cdf.values):
            f.write(f"{fmt(v)},{(i + 1) / n:.10g}\n")


def save_report(report: CampaignReport, out_dir, manifest: str | None = None) -> None:
    """Write the summary and raw-sample CSVs (columns documented in README)."""
    from pathlib import Path

    from .csvio import fmt, open_output

    out = Path(out_dir)
    with open_output(out / "summary.csv", manifest) as f:
        f.write(
            "backend,g,e,n_samples,mean_se,median_se,likely95_se,"
            "mean_size,size_at_median,size_at_95likely\n"
        )
        for s in report.summaries:
            f.write(
                f"{s.backend},{s.g},{s.e},{s.n_samples},{fmt(s.mean_se)},"
                f"{fmt(s.median_se)},{fmt(s.likely95_se)},{fmt(s.mean_size)},"
                f"{fmt(s.size_at_median)},{fmt(s.size_at_95likely)}\n"
            )
    with open_output(out / "se_samples.csv", manifest) as f:
        f.write("backend,g,e,sample_index,se,serving_size\n")
        for (tag, g, e), se in report.se_samples.items():
            sizes = report.size_samples[(tag, g, e)]
            for i, (v, sz) in enumerate(zip(se, sizes)):
                f.write(f"{tag},{g},{e},{i},{fmt(v)},{int(sz)}\n")
    for tag, samples in report.link_snr.items():
        save_cdf_csv(link_snr_cdf([samples]), out / f"link_snr_{tag}.csv", manifest)

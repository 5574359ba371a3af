"""Command-line entry point.

One structured YAML config drives everything; flags cover only paths, seed
override, worker count, and the subcommand. Exit codes: 0 success, 2 config
error, 3 runtime/data error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .campaign import (
    CampaignConfig,
    prepare_static,
    run_campaign,
    save_report,
    snr_heatmap,
    save_heatmap_csv,
)
from .channel import (
    BACKEND_IMPORTED,
    BACKEND_LOG_DISTANCE,
    BACKEND_RAYTRACE,
    ImportedBackend,
    LogDistanceBackend,
    RadioParams,
    RaytraceBackend,
    RaytraceParams,
    build_gain_table,
    load_gain_grid,
    save_gain_table_csv,
)
from .geom import BuildingMap
from .placement import (
    PlacementParams,
    candidate_stages,
    generate_ue_grid,
    place_aps,
    save_layout_csv,
)
from .spectral import FrameParams
from .synthmaps import map_from_config


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config parsing


def _req(cfg: dict, key: str) -> dict:
    val = cfg.get(key)
    if val is None:
        raise ConfigError(f"config error: missing '{key}' section")
    return val


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config error: file not found: {p}")
    try:
        cfg = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config error: cannot parse {p}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config error: top level must be a mapping")
    cfg["_path"] = str(p)
    cfg["_dir"] = str(p.parent)
    return cfg


class Bundle:
    """Validated objects built from one config file."""

    def __init__(self, cfg: dict, seed_override: int | None = None):
        self.cfg = cfg
        self.seed = int(cfg.get("seed", 0) if seed_override is None else seed_override)

        try:
            self.bmap: BuildingMap = map_from_config(_req(cfg, "map"), cfg.get("_dir"))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"config error: map: {exc}") from exc

        pl = _req(cfg, "placement")
        m = int(pl.get("m", 16))
        if math.isqrt(m) ** 2 != m:
            raise ConfigError(f"config error: ap count m={m} is not a perfect square")
        try:
            self.placement = PlacementParams(
                d1=float(pl.get("d1", 10.0)),
                d2=float(pl.get("d2", 5.0)),
                m=m,
                area=self.bmap.extent,
                ap_height=float(pl.get("ap_height", 11.0)),
            )
        except ValueError as exc:
            raise ConfigError(f"config error: placement: {exc}") from exc

        ug = cfg.get("ue_grid", {})
        self.ue_spacing = float(ug.get("spacing", 10.0))
        self.ue_height = float(ug.get("ue_height", 1.0))

        rd = cfg.get("radio", {})
        try:
            self.radio = RadioParams(
                f=float(rd.get("f_mhz", 2000.0)),
                tx_power=float(rd.get("tx_power_dbm", 20.0)),
                noise_figure=float(rd.get("noise_figure_db", 9.0)),
                bandwidth=float(rd.get("bandwidth_hz", 20e6)),
                sigma_shadow=float(rd.get("sigma_shadow_db", 8.0)),
                d0=float(rd.get("d0", 10.0)),
                dc=float(rd.get("dc", 50.0)),
            )
        except ValueError as exc:
            raise ConfigError(f"config error: radio: {exc}") from exc

        rt = cfg.get("raytrace", {})
        try:
            self.rt = RaytraceParams(
                max_reflections=int(rt.get("max_reflections", 2)),
                max_diffractions=int(rt.get("max_diffractions", 1)),
                reflection_coeff=float(rt.get("reflection_coeff", 0.6)),
                outage_threshold_dbm=float(rt.get("outage_threshold_dbm", -250.0)),
            )
        except ValueError as exc:
            raise ConfigError(f"config error: raytrace: {exc}") from exc

        fr = cfg.get("frame", {})
        tau_c = int(fr.get("tau_c", 200))
        tau_p = fr.get("tau_p")
        if tau_p is not None:
            tau_p = int(tau_p)
            if tau_p >= tau_c:
                raise ConfigError(
                    f"config error: tau_p={tau_p} must be smaller than tau_c={tau_c}"
                )
        pilot = fr.get("pilot_power_dbm")
        try:
            self.frame = FrameParams(
                tau_c=tau_c,
                tau_p=tau_p,
                pilot_power_dbm=None if pilot is None else float(pilot),
                n_fading=int(fr.get("n_fading", 100)),
            )
        except ValueError as exc:
            raise ConfigError(f"config error: frame: {exc}") from exc

        ch = cfg.get("channel", {})
        backends = ch.get("backend", BACKEND_LOG_DISTANCE)
        if isinstance(backends, str):
            backends = [backends]
        for b in backends:
            if b not in (BACKEND_LOG_DISTANCE, BACKEND_RAYTRACE, BACKEND_IMPORTED):
                raise ConfigError(f"config error: unknown channel backend '{b}'")
        self.backends = list(backends)
        self.grid_path = ch.get("grid_path")

        ca = cfg.get("campaign", {})
        self.k = int(ca.get("k", 10))
        self.n_drops = int(ca.get("n_drops", 10))
        inner_side = float(ca.get("inner_area", self.bmap.extent.width))
        if inner_side > min(self.bmap.extent.width, self.bmap.extent.height) + 1e-9:
            raise ConfigError(
                f"config error: inner area side {inner_side} exceeds map area side "
                f"{min(self.bmap.extent.width, self.bmap.extent.height)}"
            )
        self.inner = self.bmap.extent.concentric(inner_side)
        sweep_raw = ca.get("sweep", [[1, 1]])
        self.sweep = [(int(g), int(e)) for g, e in sweep_raw]
        for g, e in self.sweep:
            if e > m:
                raise ConfigError(
                    f"config error: serving anchor count e={e} exceeds ap count m={m}"
                )
            if g < 1:
                raise ConfigError(f"config error: cluster grid g={g} must be >= 1")
        self.percentile_band = float(ca.get("percentile_band", 1.0))

        hm = cfg.get("heatmap", {})
        self.heatmap_ap = int(hm.get("ap_index", 0))

    # -- derived pipeline pieces -------------------------------------------

    def build_grid(self):
        return generate_ue_grid(self.bmap, self.ue_spacing, self.ue_height)

    def build_layout(self, grid):
        stages = candidate_stages(self.bmap, self.placement, grid)
        layout = place_aps(stages["outdoor"], self.placement)
        return layout, stages

    def make_backend(self, tag: str, layout):
        if tag == BACKEND_LOG_DISTANCE:
            return LogDistanceBackend(self.radio, self.placement.ap_height, self.ue_height)
        if tag == BACKEND_RAYTRACE:
            return RaytraceBackend(
                self.bmap, self.rt, self.radio, self.placement.ap_height, self.ue_height
            )
        if not self.grid_path:
            raise ConfigError("config error: imported backend needs channel.grid_path")
        path = Path(self.cfg.get("_dir", ".")) / self.grid_path
        return load_gain_grid(path, layout)

    def campaign_config(self) -> CampaignConfig:
        return CampaignConfig(
            k=self.k,
            n_drops=self.n_drops,
            seed=self.seed,
            inner=self.inner,
            sweep=self.sweep,
            backends=self.backends,
            radio=self.radio,
            rt=self.rt,
            frame=self.frame,
            percentile_band=self.percentile_band,
        )


# ---------------------------------------------------------------------------
# Manifest


def manifest_hash(cfg_path: Path, seed: int) -> str:
    digest = hashlib.sha256()
    digest.update(cfg_path.read_bytes())
    digest.update(str(seed).encode())
    digest.update(__version__.encode())
    return digest.hexdigest()[:12]


def write_manifest(out_dir: Path, cfg_path: Path, seed: int, command: str) -> str:
    h = manifest_hash(cfg_path, seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "manifest": h,
        "command": command,
        "config_path": str(cfg_path),
        "config_sha256": hashlib.sha256(cfg_path.read_bytes()).hexdigest(),
        "seed": seed,
        "version": __version__,
        "out_dir": str(out_dir),
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return h


# ---------------------------------------------------------------------------
# Subcommands


def cmd_place(bundle: Bundle, out_dir: Path, mh: str, workers: int) -> None:
    grid = bundle.build_grid()
    layout, stages = bundle.build_layout(grid)
    save_layout_csv(layout, out_dir / "ap_layout.csv", mh)
    from .csvio import open_output

    with open_output(out_dir / "placement_diagnostics.csv", mh) as f:
        f.write("stage,count\n")
        f.write(f"boundary,{len(stages['boundary'])}\n")
        f.write(f"proximity_pruned,{len(stages['pruned'])}\n")
        f.write(f"reachable,{len(stages['outdoor'])}\n")
        f.write(f"placed,{layout.m}\n")
    print(f"placed {layout.m} APs ({len(stages['outdoor'])} candidates)")


def cmd_channel(bundle: Bundle, out_dir: Path, mh: str, workers: int) -> None:
    grid = bundle.build_grid()
    layout, _ = bundle.build_layout(grid)
    for tag in bundle.backends:
        backend = bundle.make_backend(tag, layout)
        rng = np.random.default_rng(np.random.SeedSequence([bundle.seed, 0, 0]))
        table = build_gain_table(layout, grid.points, backend, bundle.radio, rng)
        save_gain_table_csv(table, out_dir / f"gain_table_{tag}.csv", mh)
        print(f"wrote gain table for backend {tag} ({table.m} x {table.k})")


def cmd_heatmap(bundle: Bundle, out_dir: Path, mh: str, workers: int) -> None:
    grid = bundle.build_grid()
    layout, _ = bundle.build_layout(grid)
    for tag in bundle.backends:
        backend = bundle.make_backend(tag, layout)
        rng = np.random.default_rng(np.random.SeedSequence([bundle.seed, 0, 0]))
        table = build_gain_table(layout, grid.points, backend, bundle.radio, rng)
        hm = snr_heatmap(table, grid, bundle.heatmap_ap)
        save_heatmap_csv(hm, out_dir / f"heatmap_{tag}_ap{bundle.heatmap_ap}.csv", mh)
        print(f"wrote heatmap for backend {tag}, ap {bundle.heatmap_ap}")


def cmd_campaign(bundle: Bundle, out_dir: Path, mh: str, workers: int) -> None:
    grid = bundle.build_grid()
    layout, _ = bundle.build_layout(grid)
    cfg = bundle.campaign_config()
    imported = None
    if BACKEND_IMPORTED in bundle.backends:
        imported = bundle.make_backend(BACKEND_IMPORTED, layout)
    static = prepare_static(cfg, bundle.bmap, layout, grid, imported)
    report = run_campaign(static, workers=workers)
    save_report(report, out_dir, mh)
    save_layout_csv(layout, out_dir / "ap_layout.csv", mh)
    print(
        f"campaign done: {report.n_kept}/{report.n_total} UE samples inside the "
        f"inner area, {len(report.summaries)} sweep points"
    )


_COMMANDS = {
    "place": cmd_place,
    "channel": cmd_channel,
    "heatmap": cmd_heatmap,
    "campaign": cmd_campaign,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cfurban",
        description="Cell-free massive MIMO simulator on urban building maps",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="YAML config file")
    parser.add_argument(
        "--out", default=None, help="output directory (default: config out_dir, else CFURBAN_OUT, else ./out)"
    )
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--workers", type=int, default=1, help="parallel drop workers")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        bundle = Bundle(cfg, seed_override=args.seed)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2

    out_dir = Path(
        args.out
        or cfg.get("out_dir")
        or os.environ.get("CFURBAN_OUT")
        or "out"
    )
    try:
        mh = write_manifest(out_dir, Path(cfg["_path"]), bundle.seed, args.command)
        _COMMANDS[args.command](bundle, out_dir, mh, max(args.workers, 1))
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error ({args.command}): {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())

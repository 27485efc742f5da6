"""Pipeline driver: remesh -> flatten -> plate -> verify, as subcommands.

Usage::

    freeshell <remesh|flatten|plate|verify|all> --config cfg.txt
              [--input mesh.obj] [--out dir] [--verbose]

Each stage reads the previous stage's artifacts from the output
directory, so stages can be re-run in isolation. Identical config and
input produce byte-identical reports, SVG and OBJ artifacts.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import flatten as fl
from . import plate as pl
from . import remesh as rm
from . import verify as vf
from .config import PipelineConfig, load_config
from .errors import ConfigError, FreeshellError
from .mesh import edge_statistics, load_mesh, save_mesh

STAGES = ("remesh", "flatten", "plate", "verify")


def _out(cfg: PipelineConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def stage_remesh(cfg: PipelineConfig, verbose: bool = False) -> None:
    mesh = load_mesh(cfg.input_path)
    target = cfg.get("remesh", "target_edge_len")
    if target > 0:
        mesh = rm.isotropic_remesh(mesh, target, iters=cfg.get("remesh", "iters"))
    save_mesh(mesh, _out(cfg) / "remeshed.obj")
    if verbose:
        st = edge_statistics(mesh)
        print(f"remesh: {mesh.n_triangles} faces, "
              f"edges {st.min:.2f}/{st.avg:.2f}/{st.max:.2f} mm")


def stage_flatten(cfg: PipelineConfig, verbose: bool = False) -> None:
    out = _out(cfg)
    mesh = load_mesh(out / "remeshed.obj")
    options = cfg.flatten_options()
    if verbose:
        options.debug_dir = str(out / "debug")
    layout, stats = fl.run_discrete_flattening(mesh, options)
    fl.save_layout_json(layout, out / "layout.json", extra={
        "target_gap": stats.target_gap, "coarse_gap": stats.coarse_gap})
    fl.save_layout_obj(layout, out / "layout.obj")
    (out / "flatten_stats.txt").write_text("\n".join(stats.lines()) + "\n")
    if verbose:
        for line in stats.lines():
            print(line)
        print(f"flatten: avg gap {stats.final_avg_gap:.4f} mm "
              f"(target {stats.target_gap:.4f}), "
              f"{stats.refine_steps} refinement steps")


def stage_plate(cfg: PipelineConfig, verbose: bool = False) -> None:
    out = _out(cfg)
    mesh = load_mesh(out / "remeshed.obj")
    layout, _ = fl.load_layout_json(out / "layout.json")
    pp = cfg.plate_params()
    recipe = pl.print_recipe(pp,
                             tile_layer_h=cfg.get("plate", "tile_layer_h"),
                             tile_speed=cfg.get("plate", "tile_speed"))
    plate = pl.build_flat_plate(layout, mesh, pp, recipe=recipe)
    pl.export_plate_mesh(plate, out / "plate.obj")
    pl.export_plate_mesh(plate, out / "plate.stl")
    pl.export_layout_svg(layout, plate, out / "plate.svg")
    pl.write_recipe(plate.recipe, out / "recipe.txt")
    pl.write_interlocks(plate, out / "interlocks.txt")
    if verbose:
        print(f"plate: {len(plate.tiles)} tiles, {len(plate.connectors)} "
              f"connectors, {len(plate.interlock_annotations)} interlocks")
        for w in plate.warnings:
            print(f"plate warning: {w}")


def stage_verify(cfg: PipelineConfig, verbose: bool = False) -> None:
    out = _out(cfg)
    layout, extra = fl.load_layout_json(out / "layout.json")
    target_gap = float(extra.get("target_gap", float("nan")))
    report = vf.layout_metrics(layout, target_gap)
    vf.write_report(report.to_mapping(), out / "report.txt")

    from . import plots
    plots.render_layout_figure(layout, out / "layout_overview.png")
    plots.render_gap_histogram(layout, target_gap, out / "gap_histogram.png")

    scan_path = cfg.get("verify", "scan_path")
    n_scan = cfg.get("verify", "scan_points")
    mesh_path = out / "remeshed.obj"
    if (scan_path or n_scan > 0) and mesh_path.exists():
        mesh = load_mesh(mesh_path)
        if scan_path:
            points = vf.load_xyz(scan_path)
        else:
            points = vf.synthetic_scan(mesh, n_scan,
                                       sigma=cfg.get("verify", "scan_sigma"),
                                       seed=cfg.get("run", "seed"))
            vf.save_xyz(points, out / "scan.xyz")
        dist = vf.point_to_mesh_distance(points, mesh)
        vf.write_report(dist.to_mapping(), out / "distance_report.txt")
    if verbose:
        for key, value in report.to_mapping().items():
            print(f"{key}={value}")


_STAGE_FN = {
    "remesh": stage_remesh,
    "flatten": stage_flatten,
    "plate": stage_plate,
    "verify": stage_verify,
}


def run_pipeline(cmd: str, cfg: PipelineConfig, verbose: bool = False) -> int:
    """Run one stage or all of them; returns a process exit code."""
    stages = STAGES if cmd == "all" else (cmd,)
    for stage in stages:
        try:
            _STAGE_FN[stage](cfg, verbose=verbose)
        except ConfigError:
            raise
        except FreeshellError as exc:
            print(f"error [{stage}]: {exc}", file=sys.stderr)
            return 1
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="freeshell",
        description="Flatten a shell mesh into a printable tile plate.")
    parser.add_argument("command", choices=STAGES + ("all",))
    parser.add_argument("--config", required=True, help="key=value config file")
    parser.add_argument("--input", help="override [input] path")
    parser.add_argument("--out", help="override [output] dir")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.input:
            cfg.input_path = args.input
            cfg.values["input"]["path"] = args.input
        if args.out:
            cfg.output_dir = args.out
            cfg.values["output"]["dir"] = args.out
        if not cfg.input_path and args.command in ("remesh", "all"):
            raise ConfigError("no input mesh: set [input] path or --input")
        return run_pipeline(args.command, cfg, verbose=args.verbose)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""
Command Line Interface for twinmap.

Each pipeline stage is a subcommand with file handoffs between stages, plus
`run` for the whole chain. Exit codes: 0 success, 1 input or usage error,
2 registration found no overlap, 3 validation errors.
"""

import functools
import logging
import time
from pathlib import Path
from typing import Callable, Dict, Optional

import click
import pandas as pd
from dotenv import load_dotenv

from . import __version__
from .config import PipelineConfig, build_pipeline_config, load_config_file
from .converter import check_clearance, convert
from .errors import ConversionError, NoOverlapError, PreconditionError, TwinmapError
from .geo_ingest import RoadGraph, build_road_graph, load_graph, parse_osm, save_graph
from .meshgen import export_obj, generate_all
from .odr_model import deserialize, errors_only, serialize, validate
from .registration import fine_tune_graph, ground_band, render_report
from .terrain import Dem, PointCloud, load_dem, load_xyz, rasterize_ground, save_dem
from .viz import plot_alignment

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NO_OVERLAP = 2
EXIT_VALIDATION = 3


def _banner(title: str) -> None:
    click.echo("\n" + "=" * 80)
    click.echo(title)
    click.echo("=" * 80)


def _guarded(action: Callable[[], int]) -> int:
    """Run a stage and map its failure to an exit code."""
    try:
        return action()
    except NoOverlapError as exc:
        click.echo(f"Error: registration found no overlap: {exc}", err=True)
        return EXIT_NO_OVERLAP
    except ConversionError as exc:
        click.echo(f"Error: {exc}", err=True)
        return EXIT_INPUT
    except (TwinmapError, ValueError, OSError) as exc:
        click.echo(f"Error: {exc}", err=True)
        return EXIT_INPUT


def pipeline_options(func):
    """Options shared by the pipeline subcommands."""
    options = [
        click.option("--osm", help="OpenStreetMap XML extract"),
        click.option("--dem", help="ESRI ASCII grid DEM"),
        click.option("--cloud", help="XYZ point cloud in the local frame"),
        click.option("--xodr", help="OpenDRIVE file (output of convert, input of mesh)"),
        click.option("--graph", help="Adjusted road graph to convert instead of the OSM extract"),
        click.option("--out", help="Output directory (default: out)"),
        click.option("--config", "config_path", help="Flat key = value configuration file"),
        click.option("--workers", type=int, help="Worker count (overrides TWINMAP_THREADS)"),
        click.option("--origin-lat", type=float, help="Local frame origin latitude"),
        click.option("--origin-lon", type=float, help="Local frame origin longitude"),
        click.option("--fit-mode", type=click.Choice(["polyline", "arcfit"]),
                     help="Plan-view fitting mode"),
        click.option("--name", help="Map name, also the .xodr file stem"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _pipeline_config(ctx: click.Context, options: Dict) -> PipelineConfig:
    config_path = options.pop("config_path", None) or ctx.obj.get("config_path")
    file_values = load_config_file(config_path) if config_path else {}
    return build_pipeline_config(file_values, options)


def _with_config(ctx: click.Context, options: Dict, stage: Callable[[PipelineConfig], int]) -> int:
    def action():
        return stage(_pipeline_config(ctx, options))
    return _guarded(action)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def _osm_graph(cfg: PipelineConfig) -> RoadGraph:
    cfg.require("osm")
    extract = parse_osm(cfg.osm.read_bytes())
    return build_road_graph(extract, cfg.frame, cfg.deny)


def _ground_dem(cfg: PipelineConfig, cloud: PointCloud) -> Dem:
    if cfg.dem is not None:
        cfg.require("dem")
        return load_dem(cfg.dem.read_text(encoding="utf-8"))
    dem = rasterize_ground(cloud, cfg.ground.cell_size, cfg.ground.percentile)
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "ground_dem.asc").write_text(save_dem(dem), encoding="utf-8", newline="\n")
    logger.info(f"Derived ground DEM from cloud: {dem.nrows}x{dem.ncols} cells")
    return dem


def _stage_dem(cfg: PipelineConfig) -> Dem:
    """The configured DEM, else the one finetune derived from the cloud."""
    derived = cfg.out / "ground_dem.asc"
    if cfg.dem is None and derived.exists():
        logger.info(f"Using derived ground DEM {derived}")
        return load_dem(derived.read_text(encoding="utf-8"))
    cfg.require("dem")
    return load_dem(cfg.dem.read_text(encoding="utf-8"))


def run_finetune(cfg: PipelineConfig) -> int:
    cfg.require("osm", "cloud")
    graph = _osm_graph(cfg)
    cloud = load_xyz(cfg.cloud.read_text(encoding="utf-8"))
    dem = _ground_dem(cfg, cloud)

    adjusted, report = fine_tune_graph(graph, cloud, dem, cfg.icp, cfg.ground.band, cfg.workers)
    save_graph(adjusted, cfg.adjusted_graph_path)
    text = render_report(report)
    (cfg.out / "finetune_report.txt").write_text(text, encoding="utf-8", newline="\n")
    click.echo(text, nl=False)
    if not report.converged:
        click.echo("Warning: ICP stopped at max_iterations without converging")
    click.echo(f"Adjusted graph written to {cfg.adjusted_graph_path}")
    return EXIT_OK


def _graph_for_convert(cfg: PipelineConfig) -> RoadGraph:
    if cfg.graph is not None:
        cfg.require("graph")
        return load_graph(cfg.graph)
    if cfg.adjusted_graph_path.exists():
        logger.info(f"Using adjusted graph {cfg.adjusted_graph_path}")
        return load_graph(cfg.adjusted_graph_path)
    return _osm_graph(cfg)


def _echo_issues(issues) -> None:
    errors = errors_only(issues)
    click.echo(f"Validator: {len(errors)} error(s), {len(issues) - len(errors)} warning(s)")
    for issue in issues:
        click.echo(f"  {issue}")


def run_convert(cfg: PipelineConfig) -> int:
    dem = _stage_dem(cfg)
    graph = _graph_for_convert(cfg)

    odr_map = convert(graph, dem, cfg.conversion, cfg.workers)
    clearance = check_clearance(odr_map, graph, cfg.conversion)
    path = cfg.xodr_path
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize(odr_map), encoding="utf-8", newline="\n")

    _banner("TWINMAP OPENDRIVE CONVERSION")
    click.echo(f"Roads:  {len(odr_map.roads)}")
    click.echo(f"Output: {path}")
    issues = validate(odr_map)
    _echo_issues(issues)
    for issue in clearance:
        click.echo(f"Warning: {issue}")
    return EXIT_VALIDATION if errors_only(issues) else EXIT_OK


def run_mesh(cfg: PipelineConfig) -> int:
    dem = _stage_dem(cfg)
    xodr = cfg.xodr_path
    if not xodr.exists():
        raise PreconditionError(f"OpenDRIVE file not found: {xodr}")
    odr_map = deserialize(xodr.read_bytes())

    started = time.perf_counter()
    batch = generate_all(odr_map, dem, cfg.tessellation, cfg.workers)
    report = export_obj(batch.meshes, cfg.out / "meshes")
    elapsed = time.perf_counter() - started

    _banner("TWINMAP MESH GENERATION")
    table = pd.DataFrame([
        {"mesh": f.path.stem, "vertices": f.vertices, "faces": f.faces,
         "seconds": batch.timings.get(f.path.stem, 0.0)}
        for f in report.files
    ])
    if not table.empty:
        click.echo(table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    click.echo(f"\nWall clock: {elapsed:.3f} s with {cfg.workers} worker(s)")
    click.echo(f"Meshes written to {cfg.out / 'meshes'}")
    for name, error in sorted(batch.failures.items()):
        click.echo(f"Failed: {name}: {error}")
    return EXIT_INPUT if batch.failures else EXIT_OK


def run_validate(path: Path) -> int:
    if not path.exists():
        raise PreconditionError(f"file not found: {path}")
    issues = validate(deserialize(path.read_bytes()))
    _echo_issues(issues)
    return EXIT_VALIDATION if errors_only(issues) else EXIT_OK


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

@click.group()
@click.version_option(version=__version__, prog_name="twinmap")
@click.option("--config", "config_path", help="Flat key = value configuration file")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.pass_context
def main(ctx: click.Context, config_path: Optional[str], verbose: bool):
    """twinmap: OSM + LiDAR to OpenDRIVE 1.4 and OBJ meshes."""
    load_dotenv()
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format="%(message)s")
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path


@main.command()
@pipeline_options
@click.pass_context
def finetune(ctx: click.Context, **options):
    """Align OSM road geometry to the near-ground band of a LiDAR cloud."""
    ctx.exit(_with_config(ctx, options, run_finetune))


@main.command(name="convert")
@pipeline_options
@click.pass_context
def convert_command(ctx: click.Context, **options):
    """Convert the (adjusted) road graph to OpenDRIVE 1.4."""
    ctx.exit(_with_config(ctx, options, run_convert))


@main.command()
@pipeline_options
@click.pass_context
def mesh(ctx: click.Context, **options):
    """Tessellate an OpenDRIVE map and the DEM into OBJ meshes."""
    ctx.exit(_with_config(ctx, options, run_mesh))


@main.command(name="validate")
@click.argument("path", type=click.Path(dir_okay=False, path_type=Path))
@click.pass_context
def validate_command(ctx: click.Context, path: Path):
    """Validate an OpenDRIVE file."""
    ctx.exit(_guarded(lambda: run_validate(path)))


@main.command()
@pipeline_options
@click.pass_context
def run(ctx: click.Context, **options):
    """Run finetune (when a cloud is given), convert and mesh."""
    def chain():
        cfg = _pipeline_config(ctx, options)
        stages = ([run_finetune] if cfg.cloud is not None else []) + [run_convert, run_mesh]
        for stage in stages:
            code = _guarded(functools.partial(stage, cfg))
            if code != EXIT_OK:
                return code
        return EXIT_OK
    ctx.exit(_guarded(chain))


@main.command()
@pipeline_options
@click.option("--html", "use_plotly", is_flag=True, help="Write an interactive plotly HTML file")
@click.pass_context
def viz(ctx: click.Context, use_plotly: bool, **options):
    """Plot OSM and adjusted road geometry over the ground band."""
    def action():
        cfg = _pipeline_config(ctx, options)
        cfg.require("osm", "cloud")
        original = _osm_graph(cfg)
        adjusted_path = cfg.graph or cfg.adjusted_graph_path
        if not Path(adjusted_path).exists():
            raise PreconditionError(f"adjusted graph not found: {adjusted_path} (run finetune first)")
        adjusted = load_graph(adjusted_path)
        cloud = load_xyz(cfg.cloud.read_text(encoding="utf-8"))
        band = ground_band(cloud, _ground_dem(cfg, cloud), cfg.ground.band)
        target = cfg.out / ("alignment.html" if use_plotly else "alignment.png")
        click.echo(f"Figure written to {plot_alignment(original, adjusted, band, target, use_plotly)}")
        return EXIT_OK
    ctx.exit(_guarded(action))


if __name__ == "__main__":
    main()
